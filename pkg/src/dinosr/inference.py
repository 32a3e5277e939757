"""Frozen-model extraction: teacher codes and student head posteriors."""
from __future__ import annotations

import numpy as np

from . import codebook as cb
from .distill import predict_clusters
from .model import encode
from .numerics import no_grad
from .synthdata import Utterance
from .trainer import TrainState


def _batches(utts: list[Utterance], batch_size: int, mode: str):
    """Yield equal-length groups in corpus order."""
    i = 0
    while i < len(utts):
        key = len(utts[i].waveform) if mode == "waveform" else utts[i].T
        j = i
        group = []
        while j < len(utts) and len(group) < batch_size:
            k = len(utts[j].waveform) if mode == "waveform" else utts[j].T
            if k != key:
                break
            group.append(utts[j])
            j += 1
        yield group
        i = j


def _inputs(group, mode):
    if mode == "waveform":
        return [u.waveform for u in group]
    return np.stack([u.frames for u in group])


def layer_states(params, cfg, utts: list[Utterance], batch_size: int = 16, branch: bool = False) -> list[list[np.ndarray]]:
    """Per-layer states per utterance: ``out[i][k-1]`` is (T_i, D). Block
    outputs by default, feed-forward branches with ``branch``."""
    out = []
    with no_grad():
        for group in _batches(utts, batch_size, cfg.input_mode):
            layers = encode(_inputs(group, cfg.input_mode), params, cfg, branch=branch)
            for b in range(len(group)):
                out.append([layer.data[b] for layer in layers])
    return out


def teacher_codes(state: TrainState, utts: list[Utterance], layers=None) -> dict[int, list[np.ndarray]]:
    """Codeword index per frame for each clustered teacher layer."""
    layers = list(layers or state.model_config.target_layers)
    missing = [k for k in layers if k not in state.codebooks]
    if missing:
        raise ValueError(f"no codebook for layers {missing}")
    codes: dict[int, list[np.ndarray]] = {k: [] for k in layers}
    cfg = state.model_config
    for per_utt in layer_states(state.teacher, cfg, utts, branch=cfg.target_source == "ffn"):
        for k in layers:
            codes[k].append(cb.assign(cb.normalize_targets(per_utt[k - 1]), state.codebooks[k]))
    return codes


def student_posteriors(state: TrainState, utts: list[Utterance], layers=None) -> dict[int, list[np.ndarray]]:
    """Unmasked student, head-``k`` posteriors over codewords per frame."""
    layers = list(layers or state.model_config.target_layers)
    post: dict[int, list[np.ndarray]] = {k: [] for k in layers}
    for per_utt in layer_states(state.student, state.model_config, utts):
        top = per_utt[-1]
        for k in layers:
            post[k].append(predict_clusters(top, state.heads, k))
    return post


def student_states(state: TrainState, utts: list[Utterance], layer: int | None = None) -> list[np.ndarray]:
    """Unmasked student block-``layer`` outputs (default: last)."""
    k = layer or state.model_config.K
    return [per_utt[k - 1] for per_utt in layer_states(state.student, state.model_config, utts)]
