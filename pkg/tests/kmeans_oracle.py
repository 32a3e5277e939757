"""Classical Lloyd iterations, written independently of the codebook module."""
from __future__ import annotations

import numpy as np


def lloyd(data: np.ndarray, init: np.ndarray, iterations: int) -> list[np.ndarray]:
    """Centroids after each iteration. Ties go to the lowest centroid index;
    a centroid with no members keeps its previous position."""
    centroids = init.copy()
    history = []
    for _ in range(iterations):
        labels = np.empty(len(data), dtype=int)
        for i, x in enumerate(data):
            best, best_d = 0, None
            for j, c in enumerate(centroids):
                d = float(np.sum((x - c) ** 2))
                if best_d is None or d < best_d:
                    best, best_d = j, d
            labels[i] = best
        new = centroids.copy()
        for j in range(len(centroids)):
            members = data[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        centroids = new
        history.append(centroids.copy())
    return history
