"""Discrete-unit quality: purities, PNMI, codebook perplexity and the
P(phone | code) exports. Information quantities use base-2 logs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DegenerateError(ValueError):
    pass


@dataclass
class JointCounts:
    """``C[v, p]``: frames assigned to codeword ``v`` whose label is phone ``p``."""

    C: np.ndarray

    @property
    def code_usage(self) -> np.ndarray:
        return self.C.sum(axis=1)

    @property
    def phone_usage(self) -> np.ndarray:
        return self.C.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.C.sum())


def joint_counts(assignments, labels, V: int, P: int) -> JointCounts:
    a = np.asarray(assignments, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if a.shape != y.shape:
        raise ValueError(f"length mismatch: {a.size} assignments vs {y.size} labels")
    if a.size and (a.min() < 0 or a.max() >= V):
        raise ValueError(f"assignment outside [0, {V})")
    if y.size and (y.min() < 0 or y.max() >= P):
        raise ValueError(f"label outside [0, {P})")
    C = np.zeros((V, P), dtype=np.int64)
    np.add.at(C, (a, y), 1)
    return JointCounts(C)


def _as_counts(C) -> np.ndarray:
    C = C.C if isinstance(C, JointCounts) else np.asarray(C)
    if C.ndim != 2 or np.any(C < 0):
        raise ValueError("joint counts must be a non-negative matrix")
    if C.sum() < 1:
        raise DegenerateError("no frames to evaluate")
    return C.astype(np.float64)


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def cluster_quality(C) -> dict:
    """Phone purity, cluster purity, PNMI and active-cluster count."""
    C = _as_counts(C)
    n = C.sum()
    pxy = C / n
    p_code = pxy.sum(axis=1)
    p_phone = pxy.sum(axis=0)
    h_phone = _entropy_bits(p_phone)
    if h_phone == 0.0:
        raise DegenerateError("degenerate phone distribution")
    # sum_v (u_v/n) * max_p C[v,p]/u_v reduces to sum_v max_p C[v,p] / n
    phn_purity = C.max(axis=1).sum() / n
    cls_purity = C.max(axis=0).sum() / n
    nz = pxy > 0
    outer = np.outer(p_code, p_phone)
    # clamp rounding noise; mutual information is never negative
    mutual = max(float((pxy[nz] * np.log2(pxy[nz] / outer[nz])).sum()), 0.0)
    return {
        "cls_purity": float(cls_purity),
        "phn_purity": float(phn_purity),
        "pnmi": mutual / h_phone,
        "active_clusters": int(np.count_nonzero(C.sum(axis=1))),
    }


def codebook_perplexity(usage) -> float:
    """``2 ** H(p)`` with ``p`` the normalised usage counts."""
    u = np.asarray(usage, dtype=np.float64).ravel()
    if np.any(u < 0):
        raise ValueError("usage counts must be non-negative")
    total = u.sum()
    if total <= 0:
        raise DegenerateError("all-zero codeword usage")
    return float(2.0 ** _entropy_bits(u / total))


def conditional_phone_given_code(C) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Heatmap layout for P(phone | code).

    Returns ``(matrix, phone_order, code_order)``: rows are phones by
    descending frequency, columns the active codes grouped by their most
    correlated phone (in row order) and then by descending usage.
    """
    C = _as_counts(C)
    u = C.sum(axis=1)
    w = C.sum(axis=0)
    phone_order = np.argsort(-w, kind="stable")
    rank = np.empty_like(phone_order)
    rank[phone_order] = np.arange(len(phone_order))
    active = np.flatnonzero(u > 0)
    best = C[active].argmax(axis=1)
    code_order = active[np.lexsort((active, -u[active], rank[best]))]
    cond = C[code_order] / u[code_order, None]  # (codes, phones)
    return cond[:, phone_order].T, phone_order, code_order


def export_analysis(C, path_prefix, phone_names=None) -> tuple[Path, Path]:
    """Write ``<prefix>_heatmap.csv`` and ``<prefix>_histogram.csv``."""
    C_arr = _as_counts(C)
    P = C_arr.shape[1]
    names = list(phone_names) if phone_names is not None else [str(p) for p in range(P)]
    matrix, phone_order, code_order = conditional_phone_given_code(C_arr)
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    heat_path = prefix.with_name(prefix.name + "_heatmap.csv")
    hist_path = prefix.with_name(prefix.name + "_histogram.csv")

    with open(heat_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phone"] + [f"code{v}" for v in code_order])
        for row, p in zip(matrix, phone_order):
            writer.writerow([names[p]] + [f"{x:.6f}" for x in row])

    n = C_arr.sum()
    true_share = C_arr.sum(axis=0) / n
    # each code's frames credited to its argmax phone
    code_share = np.zeros(P)
    u = C_arr.sum(axis=1)
    for v in np.flatnonzero(u > 0):
        code_share[C_arr[v].argmax()] += u[v] / n
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phone", "true_share", "codeword_share"])
        for p in phone_order:
            writer.writerow([names[p], f"{true_share[p]:.6f}", f"{code_share[p]:.6f}"])
    return heat_path, hist_path
