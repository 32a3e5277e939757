"""Pretraining loop and checkpointing.

Each step: teacher EMA, masked student forward, clean teacher forward,
per-layer online clustering of the masked teacher frames, then the
cluster-prediction loss and an Adam update of the student and heads.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import codebook as cb
from .distill import (
    ScheduleSpec,
    desk_lambda_schedule,
    desk_lr_schedule,
    dinosr_loss,
    ema_teacher_update,
    init_heads,
    schedule_value,
)
from .formats import FormatError, read_checkpoint_file, write_checkpoint_file
from .model import ModelConfig, encode, init_params, num_frames, sample_mask
from .numerics import AdamState, Tensor, adam_step, backward, concat, getitem, no_grad
from .synthdata import Utterance



class DivergenceError(RuntimeError):
    """Raised on a non-finite loss; ``state`` is the state at failure."""

    def __init__(self, message: str, state: "TrainState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    batch_size: int = 8
    seed: int = 0
    tau: float = 0.9
    codebook_init: str = "gaussian_l2norm"
    freeze_inactive: bool = True
    simplified_update: bool = False
    checkpoint_every: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    lr_schedule: ScheduleSpec = field(default_factory=desk_lr_schedule)
    lambda_schedule: ScheduleSpec = field(default_factory=desk_lambda_schedule)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.codebook_init not in cb.INIT_SCHEMES:
            raise ValueError(f"unknown codebook_init {self.codebook_init!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        self.lr_schedule.validate()
        self.lambda_schedule.validate()
        if self.lr_schedule.kind != "lr" or self.lambda_schedule.kind != "lambda":
            raise ValueError("schedule kinds must be 'lr' and 'lambda'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("lr_schedule", "lambda_schedule"):
            if key in d and isinstance(d[key], dict):
                d[key] = ScheduleSpec(**d[key])
        return cls(**d)


@dataclass
class TrainState:
    model_config: ModelConfig
    train_config: TrainConfig
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    heads: dict[str, np.ndarray]
    codebooks: dict[int, cb.CodebookState]
    adam: AdamState
    step: int = 0

    @property
    def trainable(self) -> dict[str, np.ndarray]:
        return {**self.student, **self.heads}


def init_train_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    model_config.validate()
    train_config.validate()
    seeds = np.random.SeedSequence(train_config.seed).spawn(3)
    student = init_params(model_config, seed=seeds[0])
    teacher = copy.deepcopy(student)
    heads = init_heads(model_config.target_layers, model_config.D, model_config.V, seed=seeds[1])
    cb_rng = np.random.default_rng(seeds[2])
    codebooks = {
        k: cb.init_codebook(
            model_config.V,
            model_config.D,
            train_config.codebook_init,
            cb_rng,
            tau=train_config.tau,
            freeze_inactive=train_config.freeze_inactive,
            simplified_update=train_config.simplified_update,
        )
        for k in model_config.target_layers
    }
    adam = AdamState.zeros_like(
        {**student, **heads},
        beta1=train_config.adam_beta1,
        beta2=train_config.adam_beta2,
        eps=train_config.adam_eps,
    )
    return TrainState(model_config, train_config, student, teacher, heads, codebooks, adam, 0)


def _inputs(utts: list[Utterance], cfg: ModelConfig):
    if cfg.input_mode == "waveform":
        return [u.waveform for u in utts]
    return np.stack([u.frames for u in utts])


def _frame_count(utt: Utterance, cfg: ModelConfig) -> int:
    if cfg.input_mode == "waveform":
        return num_frames(len(utt.waveform))
    return utt.T


def step_masks(state: TrainState, batch: list[Utterance]) -> list[np.ndarray]:
    cfg = state.model_config
    masks = []
    for i, utt in enumerate(batch):
        ss = np.random.SeedSequence([state.train_config.seed, state.step, i])
        rng = np.random.default_rng(ss)
        masks.append(sample_mask(_frame_count(utt, cfg), cfg.mask_ratio, cfg.min_span, rng).as_bool())
    return masks


def train_step(state: TrainState, batch: list[Utterance]) -> tuple[TrainState, dict]:
    """One update; mutates and returns ``state`` plus step metrics."""
    if not batch:
        raise ValueError("empty batch")
    cfg = state.model_config
    tcfg = state.train_config
    lam = schedule_value(tcfg.lambda_schedule, state.step)
    lr = schedule_value(tcfg.lr_schedule, state.step)

    # teacher tracks the student, before any forward pass
    ema_teacher_update(state.teacher, state.student, lam)

    masks = step_masks(state, batch)
    groups: dict[int, list[int]] = {}
    for i, m in enumerate(masks):
        groups.setdefault(len(m), []).append(i)

    params = {name: Tensor(p, requires_grad=True) for name, p in state.trainable.items()}
    student_params = {name: params[name] for name in state.student}
    head_params = {name: params[name] for name in state.heads}

    z_parts = []
    targets_per_layer: dict[int, list[np.ndarray]] = {k: [] for k in cfg.target_layers}
    for T, idx in sorted(groups.items()):
        utts = [batch[i] for i in idx]
        mask = np.stack([masks[i] for i in idx])
        if T > cfg.T_max:
            raise ValueError(f"utterance of {T} frames exceeds T_max={cfg.T_max}")
        z = encode(_inputs(utts, cfg), student_params, cfg, mask=mask)[-1]
        b_idx, t_idx = np.nonzero(mask)
        z_parts.append(getitem(z, (b_idx, t_idx)))
        with no_grad():
            layers = encode(_inputs(utts, cfg), state.teacher, cfg, branch=cfg.target_source == "ffn")
        for k in cfg.target_layers:
            z_tilde = layers[k - 1].data
            for row in range(len(idx)):
                normed = cb.normalize_targets(z_tilde[row])
                targets_per_layer[k].append(normed[mask[row]])

    # online clustering of teacher targets, masked frames only
    assignments = {}
    metrics: dict = {"step": state.step, "lr": lr, "lambda": lam}
    for k in cfg.target_layers:
        frames = np.concatenate(targets_per_layer[k], axis=0)
        codes = cb.assign(frames, state.codebooks[k])
        cb.update(state.codebooks[k], frames, codes)
        assignments[k] = codes
        metrics[f"usage_entropy_L{k}"] = cb.usage_entropy(codes, cfg.V)
        metrics[f"active_L{k}"] = int(np.count_nonzero(np.bincount(codes, minlength=cfg.V)))

    # predict each target layer's codes from the student's last layer
    z_masked = z_parts[0] if len(z_parts) == 1 else concat(z_parts, axis=0)
    metrics["masked_frames"] = int(z_masked.shape[0])
    if z_masked.shape[0] == 0:
        metrics["loss"] = 0.0
        state.step += 1
        return state, metrics
    try:
        loss, loss_mean = dinosr_loss(z_masked, assignments, head_params)
    except ValueError as exc:
        raise DivergenceError(f"divergence: {exc} at step {state.step}", state) from None
    if not math.isfinite(float(loss.data)):
        raise DivergenceError(f"divergence: non-finite loss at step {state.step}", state)
    backward(loss)
    grads = {name: t.grad for name, t in params.items() if t.grad is not None}
    # the merged view shares arrays with student/heads, so this updates in place
    adam_step(state.trainable, grads, state.adam, lr)
    metrics["loss"] = loss_mean
    state.step += 1
    return state, metrics


def batch_order(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    """Indices of the utterances used at ``step``; reshuffled every epoch."""
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 7919, epoch])).permutation(n)
    return perm[pos * bs : (pos + 1) * bs].tolist()


def pretrain(
    state: TrainState,
    corpus: list[Utterance],
    steps: int,
    checkpoint_dir=None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainState:
    """Run ``steps`` more updates. Checkpoints land in ``checkpoint_dir`` every
    ``checkpoint_every`` steps when a directory is given."""
    if not corpus:
        raise ValueError("empty corpus")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    tcfg = state.train_config
    for _ in range(steps):
        idx = batch_order(len(corpus), tcfg.batch_size, tcfg.seed, state.step)
        state, metrics = train_step(state, [corpus[i] for i in idx])
        if on_step is not None:
            on_step(metrics)
        if checkpoint_dir is not None and state.step % tcfg.checkpoint_every == 0:
            save_checkpoint(state, Path(checkpoint_dir) / f"checkpoint_{state.step:07d}.dsrc")
    return state


# checkpoints ---------------------------------------------------------------

def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, p in state.student.items():
        out[f"student/{name}"] = p
    for name, p in state.teacher.items():
        out[f"teacher/{name}"] = p
    for name, p in state.heads.items():
        out[f"heads/{name}"] = p
    for k, book in state.codebooks.items():
        out[f"codebook/{k}/E"] = book.E
        out[f"codebook/{k}/s"] = book.s
        out[f"codebook/{k}/n"] = book.n
    for name in state.adam.m:
        out[f"adam/m/{name}"] = state.adam.m[name]
        out[f"adam/v/{name}"] = state.adam.v[name]
    return out


def state_metadata(state: TrainState) -> dict:
    return {
        "format": "dinosr-checkpoint",
        "step": state.step,
        "model": state.model_config.to_dict(),
        "train": state.train_config.to_dict(),
        "adam_step": state.adam.step,
        "schedule_position": {
            "lr": schedule_value(state.train_config.lr_schedule, state.step),
            "lambda": schedule_value(state.train_config.lambda_schedule, state.step),
        },
    }


def save_checkpoint(state: TrainState, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint_file(path, state_tensors(state), state_metadata(state))


def load_checkpoint(path) -> TrainState:
    tensors, meta = read_checkpoint_file(path)
    return state_from_tensors(tensors, meta)


def state_from_tensors(tensors: dict[str, np.ndarray], meta: dict) -> TrainState:
    try:
        mcfg = ModelConfig(**meta["model"])
        tcfg = TrainConfig.from_dict(meta["train"])
        step = int(meta["step"])
        adam_step_count = int(meta["adam_step"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"corrupt: incomplete checkpoint metadata ({exc})") from exc

    groups: dict[str, dict[str, np.ndarray]] = {"student": {}, "teacher": {}, "heads": {}}
    books: dict[int, dict[str, np.ndarray]] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for full, arr in tensors.items():
        head, _, rest = full.partition("/")
        arr = np.array(arr, dtype=np.float64)
        if head in groups:
            groups[head][rest] = arr
        elif head == "codebook":
            k, _, part = rest.partition("/")
            books.setdefault(int(k), {})[part] = arr
        elif head == "adam":
            which, _, name = rest.partition("/")
            (m if which == "m" else v)[name] = arr
        else:
            raise FormatError(f"corrupt: unexpected tensor {full!r}")
    codebooks = {
        k: cb.CodebookState(
            d["E"], d["s"], d["n"], tcfg.tau, tcfg.freeze_inactive, tcfg.simplified_update
        )
        for k, d in sorted(books.items())
    }
    adam = AdamState(m, v, adam_step_count, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
    state = TrainState(mcfg, tcfg, groups["student"], groups["teacher"], groups["heads"], codebooks, adam, step)
    if state.student.keys() != state.teacher.keys():
        raise FormatError("corrupt: teacher and student trees differ")
    if sorted(codebooks) != mcfg.target_layers:
        raise FormatError("corrupt: codebook layers do not match the model config")
    return state
