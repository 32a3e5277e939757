"""Synthetic phone-aligned corpora and minimal audio/feature I/O.

Phones are Gaussian clusters in feature space. Utterances follow a Markov
chain over phones with no self-transitions whose stationary distribution is
Zipfian, so every frame carries a ground-truth phone label.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import decode_features, encode_features


@dataclass
class PhoneInventory:
    names: list[str]
    means: np.ndarray  # (P, F)
    std: np.ndarray  # (P,)
    mean_duration: np.ndarray  # (P,) expected frames per segment
    min_duration: np.ndarray  # (P,)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        P = self.means.shape[0]
        self.std = np.broadcast_to(np.asarray(self.std, dtype=np.float64), (P,)).copy()
        self.mean_duration = np.broadcast_to(np.asarray(self.mean_duration, dtype=np.float64), (P,)).copy()
        self.min_duration = np.broadcast_to(np.asarray(self.min_duration, dtype=np.int64), (P,)).copy()
        if P < 2:
            raise ValueError("an inventory needs at least 2 phones")
        if len(self.names) != P:
            raise ValueError("one name per phone required")
        if np.any(self.std <= 0):
            raise ValueError("phone std must be positive")
        if np.any(self.min_duration < 1):
            raise ValueError("min duration must be >= 1")
        if np.any(self.mean_duration < self.min_duration):
            raise ValueError("expected duration cannot be below min duration")

    @property
    def P(self) -> int:
        return self.means.shape[0]

    @property
    def F(self) -> int:
        return self.means.shape[1]


@dataclass
class Utterance:
    frames: np.ndarray | None
    labels: np.ndarray | None = None
    waveform: np.ndarray | None = None
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames is not None:
            self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.frames is not None and len(self.labels) != len(self.frames):
                raise ValueError("labels length must equal the number of frames")

    @property
    def T(self) -> int:
        return 0 if self.frames is None else len(self.frames)


def default_inventory(
    P: int = 8,
    F: int = 16,
    std: float = 1.0,
    separation: float = 6.0,
    mean_duration: float = 10.0,
    min_duration: int = 4,
    seed: int = 0,
) -> PhoneInventory:
    """Phone means drawn uniformly on a sphere of radius ``separation * std``."""
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(P, F))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return PhoneInventory(
        names=[f"ph{i}" for i in range(P)],
        means=directions * separation * std,
        std=std,
        mean_duration=mean_duration,
        min_duration=min_duration,
    )


def zipf_distribution(P: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, P + 1) ** exponent
    return w / w.sum()


def transition_matrix(stationary: np.ndarray, rng: np.random.Generator, concentration: float = 2.0) -> np.ndarray:
    """Row-stochastic matrix with zero diagonal and the given stationary law.

    A symmetric zero-diagonal kernel is scaled (symmetric Sinkhorn) until its
    row sums equal ``stationary``; dividing row i by ``stationary[i]`` then
    yields a reversible chain with that stationary distribution.
    """
    P = len(stationary)
    if stationary.max() >= 0.5:
        raise ValueError("no self-transition chain has a phone with stationary mass >= 0.5")
    g = rng.normal(size=(P, P))
    kernel = np.exp(concentration * (g + g.T) / 2.0)
    np.fill_diagonal(kernel, 0.0)
    d = np.sqrt(stationary)
    for _ in range(10_000):
        d_new = np.sqrt(d * stationary / (kernel @ d))
        if np.max(np.abs(d_new - d)) < 1e-15:
            d = d_new
            break
        d = d_new
    A = d[:, None] * kernel * d[None, :]
    trans = A / A.sum(axis=1, keepdims=True)
    return trans


def gen_corpus(
    inventory: PhoneInventory,
    utterance_count: int = 400,
    T: int = 200,
    seed: int = 0,
    zipf_exponent: float = 1.0,
) -> list[Utterance]:
    if utterance_count < 1 or T < 1:
        raise ValueError("utterance_count and T must be positive")
    if zipf_exponent <= 0:
        raise ValueError("zipf_exponent must be positive")
    rng = np.random.default_rng(seed)
    pi = zipf_distribution(inventory.P, zipf_exponent)
    trans = transition_matrix(pi, rng)
    # geometric extra length with mean (expected - min)
    p_stop = 1.0 / (inventory.mean_duration - inventory.min_duration + 1.0)

    corpus = []
    for u in range(utterance_count):
        labels = np.empty(T, dtype=np.int64)
        t = 0
        phone = int(rng.choice(inventory.P, p=pi))
        while t < T:
            dur = int(inventory.min_duration[phone] + rng.geometric(p_stop[phone]) - 1)
            labels[t : t + dur] = phone
            t += dur
            phone = int(rng.choice(inventory.P, p=trans[phone]))
        noise = rng.normal(size=(T, inventory.F)) * inventory.std[labels][:, None]
        frames = inventory.means[labels] + noise
        corpus.append(Utterance(frames=frames, labels=labels, id=f"utt{u:05d}"))
    return corpus


def segments(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant runs as ``(phone, start, end)`` with ``end`` exclusive."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(labels)]])
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def read_wav(path) -> Utterance:
    """16-bit mono 16 kHz PCM WAV -> Utterance with samples in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError("mono required")
        if w.getsampwidth() != 2:
            raise ValueError("16-bit PCM required")
        if w.getframerate() != 16000:
            raise ValueError("16 kHz sample rate required")
        if w.getcomptype() != "NONE":
            raise ValueError("uncompressed PCM required")
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Utterance(frames=None, waveform=samples, id=Path(path).stem)


def write_features(utterance: Utterance, path) -> None:
    if utterance.frames is None or len(utterance.frames) == 0:
        raise ValueError("empty utterance")
    Path(path).write_bytes(encode_features(utterance.frames, utterance.labels))


def read_features(path) -> Utterance:
    frames, labels = decode_features(Path(path).read_bytes())
    return Utterance(frames=frames, labels=labels, id=Path(path).stem)


def write_corpus(corpus: list[Utterance], directory, phone_names: list[str] | None = None) -> list[Path]:
    """One ``<id>.dsrf`` per utterance plus a ``phones.json`` id -> name sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for utt in corpus:
        path = directory / f"{utt.id}.dsrf"
        write_features(utt, path)
        paths.append(path)
    if phone_names is not None:
        mapping = {str(i): name for i, name in enumerate(phone_names)}
        (directory / "phones.json").write_text(json.dumps(mapping, indent=2, sort_keys=True) + "\n")
    return paths


def read_corpus(directory) -> list[Utterance]:
    paths = sorted(Path(directory).glob("*.dsrf"))
    if not paths:
        raise FileNotFoundError(f"no .dsrf feature files in {directory}")
    return [read_features(p) for p in paths]
