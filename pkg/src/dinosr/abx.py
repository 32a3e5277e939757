"""ABX phone discrimination over triphone items.

An item is the frame span of three consecutive phone segments. A triple
(A, B, X) has X drawn from A's category and B from a category with a
different centre phone; the error is whether X lands closer to B under the
DTW-averaged framewise distance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synthdata import segments

KINDS = ("cosine", "js")
MANIFEST_COLUMNS = ["item_a", "item_b", "item_x", "category_a", "category_b"]


@dataclass
class AbxItem:
    frames: np.ndarray
    category: tuple
    id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) == 0:
            raise ValueError(f"item {self.id!r}: expected a nonempty (T, d) sequence")


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown distance kind {kind!r}; expected one of {KINDS}")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine distance undefined for a zero vector")
    return x / norms


def _check_prob(x: np.ndarray) -> None:
    if np.any(x < 0) or np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("js distance requires probability rows (non-negative, summing to 1)")


def _xlogy_ratio(p, m):
    # p * log2(p / m) with 0 log 0 := 0; m > 0 wherever p > 0
    out = np.zeros(np.broadcast(p, m).shape)
    pos = np.broadcast_to(p, out.shape) > 0
    pb, mb = np.broadcast_to(p, out.shape), np.broadcast_to(m, out.shape)
    out[pos] = pb[pos] * np.log2(pb[pos] / mb[pos])
    return out


def distance_matrix(A, B, kind: str = "cosine") -> np.ndarray:
    """All pairwise framewise distances between rows of ``A`` and ``B``."""
    _check_kind(kind)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if kind == "cosine":
        d = 1.0 - _unit_rows(A) @ _unit_rows(B).T
        return np.maximum(d, 0.0)
    _check_prob(A)
    _check_prob(B)
    p, q = A[:, None, :], B[None, :, :]
    m = 0.5 * (p + q)
    js = 0.5 * _xlogy_ratio(p, m).sum(-1) + 0.5 * _xlogy_ratio(q, m).sum(-1)
    return np.clip(js, 0.0, 1.0)


def framewise_distance(a, b, kind: str = "cosine") -> float:
    """Cosine distance ``1 - cos(a, b)`` or base-2 Jensen-Shannon divergence."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("framewise_distance takes two vectors of equal length")
    return float(distance_matrix(a[None], b[None], kind)[0, 0])


def dtw_from_costs(cost: np.ndarray) -> float:
    """Min-cost monotone path through ``cost`` divided by that path's length.

    Moves are (i+1, j), (i, j+1) and (i+1, j+1). Among equal-cost paths the
    shortest one is used.
    """
    n, m = cost.shape
    total = np.full((n, m), np.inf)
    length = np.zeros((n, m), dtype=np.int64)
    total[0, 0], length[0, 0] = cost[0, 0], 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best, best_len = np.inf, 0
            for pi, pj in ((i - 1, j - 1), (i - 1, j), (i, j - 1)):
                if pi < 0 or pj < 0:
                    continue
                t, ln = total[pi, pj], length[pi, pj]
                if t < best or (t == best and ln < best_len):
                    best, best_len = t, ln
            total[i, j] = best + cost[i, j]
            length[i, j] = best_len + 1
    return float(total[-1, -1] / length[-1, -1])


def dtw_pseudo_distance(seq_a, seq_b, kind: str = "cosine") -> float:
    seq_a, seq_b = np.asarray(seq_a, dtype=np.float64), np.asarray(seq_b, dtype=np.float64)
    if len(seq_a) == 0 or len(seq_b) == 0:
        raise ValueError("dtw needs two nonempty sequences")
    return dtw_from_costs(distance_matrix(seq_a, seq_b, kind))


def abx_error_rate(triples, kind: str = "cosine") -> float:
    """Mean ABX error over ``(A, B, X)`` items; exact ties count 0.5."""
    if not triples:
        raise ValueError("no triples to score")
    errors = []
    for tri in triples:
        if len(tri) != 3:
            raise ValueError("each triple must be (A, B, X)")
        a, b, x = tri
        if a.category == b.category:
            raise ValueError(f"A and B share category {a.category}")
        if x.category != a.category:
            raise ValueError(f"X category {x.category} differs from A category {a.category}")
        dxa = dtw_pseudo_distance(x.frames, a.frames, kind)
        dxb = dtw_pseudo_distance(x.frames, b.frames, kind)
        errors.append(0.0 if dxa < dxb else 1.0 if dxa > dxb else 0.5)
    return float(np.mean(errors))


@dataclass(frozen=True)
class ItemRef:
    """A triphone span ``[start, end)`` of utterance ``utt``."""

    utt: str
    start: int
    end: int
    category: tuple

    @property
    def id(self) -> str:
        return f"{self.utt}:{self.start}-{self.end}"


def triphone_items(corpus) -> list[ItemRef]:
    """Every run of three consecutive complete segments in every utterance.

    The first and last segment of an utterance may be cut by the edges, so
    they only serve as context.
    """
    refs = []
    for utt in corpus:
        if utt.labels is None:
            raise ValueError(f"utterance {utt.id!r} has no labels")
        segs = segments(utt.labels)
        for left, mid, right in zip(segs, segs[1:], segs[2:]):
            if left[1] == 0 or right[2] == len(utt.labels):
                continue
            refs.append(ItemRef(utt.id, left[1], right[2], (left[0], mid[0], right[0])))
    return refs


def sample_triples(refs: list[ItemRef], count: int, seed: int = 0) -> list[tuple[ItemRef, ItemRef, ItemRef]]:
    """Draw ``count`` (A, B, X) triples.

    B shares A's left and right context but has another centre phone when
    such a category exists; otherwise any category with another centre phone
    is used.
    """
    if count < 1:
        raise ValueError("count must be positive")
    by_cat: dict[tuple, list[ItemRef]] = {}
    for r in refs:
        by_cat.setdefault(r.category, []).append(r)
    cats = sorted(by_cat)
    a_cats = [c for c in cats if len(by_cat[c]) >= 2]
    if not a_cats:
        raise ValueError("no category has two tokens; cannot form X")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        ca = a_cats[int(rng.integers(len(a_cats)))]
        pair = [c for c in cats if c[0] == ca[0] and c[2] == ca[2] and c[1] != ca[1]]
        pool = pair or [c for c in cats if c[1] != ca[1]]
        if not pool:
            raise ValueError("only one centre phone present; cannot form B")
        cb = pool[int(rng.integers(len(pool)))]
        ia, ix = rng.choice(len(by_cat[ca]), size=2, replace=False)
        b = by_cat[cb][int(rng.integers(len(by_cat[cb])))]
        out.append((by_cat[ca][int(ia)], b, by_cat[ca][int(ix)]))
    return out


def materialize(triples, representations: dict) -> list[tuple[AbxItem, AbxItem, AbxItem]]:
    """Slice per-utterance ``(T, d)`` representations into AbxItems."""
    def item(r: ItemRef) -> AbxItem:
        return AbxItem(representations[r.utt][r.start : r.end], r.category, r.id)

    return [tuple(item(r) for r in tri) for tri in triples]


def _category_str(cat, names=None) -> str:
    return "-".join(names[p] if names else str(p) for p in cat)


def write_manifest(triples, path, phone_names=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for a, b, x in triples:
            w.writerow([a.id, b.id, x.id, _category_str(a.category, phone_names), _category_str(b.category, phone_names)])
    return path


def _parse_id(item_id: str) -> tuple[str, int, int]:
    try:
        utt, span = item_id.rsplit(":", 1)
        start, end = (int(v) for v in span.split("-"))
    except ValueError:
        raise ValueError(f"malformed item id {item_id!r}; expected utt:start-end") from None
    return utt, start, end


def read_manifest(path, phone_names=None) -> list[tuple[ItemRef, ItemRef, ItemRef]]:
    lookup = {n: i for i, n in enumerate(phone_names)} if phone_names else None

    def cat(s):
        parts = s.split("-")
        return tuple(lookup[p] if lookup else int(p) for p in parts)

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise ValueError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
        for row in reader:
            ca, cb = cat(row["category_a"]), cat(row["category_b"])
            refs = [ItemRef(*_parse_id(row[k]), c) for k, c in (("item_a", ca), ("item_b", cb), ("item_x", ca))]
            out.append(tuple(refs))
    return out


def default_layer(K: int, N: int) -> int:
    """Layer 5 when it is a clustered layer, else the lowest clustered layer."""
    lo = K - N + 1
    return 5 if lo <= 5 <= K else lo
