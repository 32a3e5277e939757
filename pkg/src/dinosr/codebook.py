"""Gradient-free online clustering of teacher representations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INIT_SCHEMES = ("gaussian", "gaussian_scaled", "gaussian_l2norm")


class CodebookError(RuntimeError):
    pass


@dataclass
class CodebookState:
    """Codewords ``E`` with EMA sum ``s`` and count ``n`` accumulators.

    For every codeword with ``n[v] > 0``, ``E[v] == s[v] / n[v]``.
    """

    E: np.ndarray
    s: np.ndarray
    n: np.ndarray
    tau: float = 0.9
    freeze_inactive: bool = True
    simplified_update: bool = False

    @property
    def V(self) -> int:
        return self.E.shape[0]

    @property
    def D(self) -> int:
        return self.E.shape[1]

    def copy(self) -> "CodebookState":
        return CodebookState(
            self.E.copy(), self.s.copy(), self.n.copy(), self.tau, self.freeze_inactive, self.simplified_update
        )


def init_codebook(
    V: int,
    D: int,
    scheme: str = "gaussian_l2norm",
    rng_seed=0,
    tau: float = 0.9,
    freeze_inactive: bool = True,
    simplified_update: bool = False,
) -> CodebookState:
    if V < 1 or D < 1:
        raise ValueError("V and D must be >= 1")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if scheme == "gaussian":
        E = rng.normal(0.0, 1.0, (V, D))
    elif scheme == "gaussian_scaled":
        E = rng.normal(0.0, 1.0 / np.sqrt(D), (V, D))
    elif scheme == "gaussian_l2norm":
        E = rng.normal(0.0, 1.0, (V, D))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    # unit prior mass keeps E == s / n from the first step
    return CodebookState(E, E.copy(), np.ones(V), tau, freeze_inactive, simplified_update)


def normalize_targets(z: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Instance normalisation: per channel, standardise over time."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("expected a (T, D) matrix with T >= 1")
    mu = z.mean(axis=0, keepdims=True)
    var = z.var(axis=0, keepdims=True)
    return (z - mu) / np.sqrt(var + eps)


def squared_distances(frames: np.ndarray, E: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact ``||x - e||^2`` by explicit differences (no expansion rounding)."""
    out = np.empty((frames.shape[0], E.shape[0]))
    for lo in range(0, frames.shape[0], chunk):
        diff = frames[lo : lo + chunk, None, :] - E[None, :, :]
        out[lo : lo + chunk] = np.einsum("mvd,mvd->mv", diff, diff)
    return out


def assign(frames: np.ndarray, state: CodebookState | np.ndarray) -> np.ndarray:
    """Index of the nearest codeword per frame; ties go to the lowest index."""
    E = state.E if isinstance(state, CodebookState) else np.asarray(state)
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != E.shape[1]:
        raise ValueError(f"frame dim {frames.shape[1]} does not match codebook dim {E.shape[1]}")
    if frames.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(squared_distances(frames, E), axis=1).astype(np.int64)


def neighbour_stats(frames: np.ndarray, assignments: np.ndarray, V: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-codeword sum and count of assigned frames."""
    sums = np.zeros((V, frames.shape[1]))
    np.add.at(sums, assignments, frames)
    counts = np.bincount(assignments, minlength=V).astype(np.float64)
    return sums, counts


def update(state: CodebookState, frames: np.ndarray, assignments: np.ndarray) -> CodebookState:
    """EMA codeword update in place; returns ``state``."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    assignments = np.asarray(assignments, dtype=np.int64)
    if assignments.shape != (frames.shape[0],):
        raise ValueError("one assignment per frame required")
    if assignments.size and (assignments.min() < 0 or assignments.max() >= state.V):
        raise ValueError("assignment index out of range")
    sums, counts = neighbour_stats(frames, assignments, state.V)
    active = counts > 0
    tau = state.tau

    if state.simplified_update:
        means = sums[active] / counts[active, None]
        state.E[active] = tau * state.E[active] + (1.0 - tau) * means
        # keep the accumulators consistent with E
        state.s[active] = state.E[active] * state.n[active, None]
        return state

    rows = active if state.freeze_inactive else np.ones(state.V, dtype=bool)
    new_n = tau * state.n[rows] + (1.0 - tau) * counts[rows]
    if np.any(new_n <= 0):
        raise CodebookError("codeword mass underflow")
    state.s[rows] = tau * state.s[rows] + (1.0 - tau) * sums[rows]
    state.n[rows] = new_n
    state.E[rows] = state.s[rows] / state.n[rows, None]
    return state


def usage_entropy(assignments: np.ndarray, V: int) -> float:
    """Entropy in bits of the codeword usage histogram."""
    counts = np.bincount(np.asarray(assignments, dtype=np.int64), minlength=V).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())
