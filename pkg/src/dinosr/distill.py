"""Teacher EMA, cluster-prediction heads, the distillation loss and schedules."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import Tensor, cross_entropy, matmul, no_grad, softmax

# target layer (1-based) -> codeword index per masked frame
AssignmentTable = dict


def ema_teacher_update(
    teacher: dict[str, np.ndarray], student: dict[str, np.ndarray], lam: float
) -> dict[str, np.ndarray]:
    """``teacher <- lam * teacher + (1 - lam) * student``, in place."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"decay {lam} outside [0, 1]")
    if teacher.keys() != student.keys():
        raise ValueError("teacher and student parameter trees differ")
    for name, pt in teacher.items():
        ps = student[name]
        if pt.shape != ps.shape:
            raise ValueError(f"shape mismatch for {name}: {pt.shape} vs {ps.shape}")
        if lam == 1.0:
            continue
        if lam == 0.0:
            pt[...] = ps
        else:
            pt *= lam
            pt += (1.0 - lam) * ps
    return teacher


def init_heads(target_layers, D: int, V: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    heads = {}
    for k in target_layers:
        heads[f"head{k}.W"] = rng.normal(0.0, 0.02, (D, V))
        heads[f"head{k}.b"] = np.zeros(V)
    return heads


def head_logits(z: Tensor, heads, k: int) -> Tensor:
    W, b = heads[f"head{k}.W"], heads[f"head{k}.b"]
    W = W if isinstance(W, Tensor) else Tensor(W)
    b = b if isinstance(b, Tensor) else Tensor(b)
    return matmul(z, W) + b


def predict_clusters(z_K, heads, k: int) -> np.ndarray:
    """Posterior over codewords of layer ``k`` for each row of ``z_K``."""
    z = z_K if isinstance(z_K, Tensor) else Tensor(np.atleast_2d(z_K))
    with no_grad():
        return softmax(head_logits(z, heads, k), axis=-1).data


def dinosr_loss(z_masked: Tensor, assignments: AssignmentTable, heads) -> tuple[Tensor, float]:
    """Summed cross-entropy over masked frames and target layers.

    Returns the differentiable sum and the mean per (frame, layer) for logging.
    """
    M = z_masked.shape[0]
    layers = sorted({int(n[4:].split(".")[0]) for n in heads if n.startswith("head")})
    if sorted(assignments) != layers:
        raise ValueError(f"assignments cover layers {sorted(assignments)}, heads expect {layers}")
    total = None
    for k in layers:
        target = np.asarray(assignments[k])
        if target.shape != (M,):
            raise ValueError(f"layer {k}: {target.shape[0] if target.ndim else 0} targets for {M} masked frames")
        term = cross_entropy(head_logits(z_masked, heads, k), target)
        total = term if total is None else total + term
    count = max(M * len(layers), 1)
    return total, float(total.data) / count


@dataclass
class ScheduleSpec:
    """Three-phase schedule: linear ramp ``start -> peak`` until ``ramp_end``,
    hold until ``hold_end``, then a tail to ``final`` at ``total``.

    The lr tail decays exponentially; the lambda tail is linear.
    """

    kind: str
    ramp_end: int
    hold_end: int
    total: int
    start: float
    peak: float
    final: float

    def validate(self) -> None:
        if self.kind not in ("lr", "lambda"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 <= self.ramp_end <= self.hold_end <= self.total:
            raise ValueError("schedule boundaries must satisfy 0 <= ramp_end <= hold_end <= total")
        if self.ramp_end == self.hold_end == self.total:
            raise ValueError("schedule boundaries must not all coincide")
        values = (self.start, self.peak, self.final)
        if self.kind == "lambda" and not all(0.0 <= v <= 1.0 for v in values):
            raise ValueError("lambda schedule values must lie in [0, 1]")
        if self.kind == "lr":
            if any(v < 0 for v in values):
                raise ValueError("learning rates must be non-negative")
            if self.hold_end < self.total and (self.final <= 0 or self.peak <= 0):
                raise ValueError("exponential lr decay needs positive peak and final")

    def to_dict(self) -> dict:
        return asdict(self)


def schedule_value(spec: ScheduleSpec, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < spec.ramp_end:
        return spec.start + (spec.peak - spec.start) * step / spec.ramp_end
    if step <= spec.hold_end:
        return spec.peak
    if step >= spec.total:
        return spec.final
    frac = (step - spec.hold_end) / (spec.total - spec.hold_end)
    if spec.kind == "lr":
        return spec.peak * math.exp(frac * math.log(spec.final / spec.peak))
    return spec.peak + (spec.final - spec.peak) * frac


def base_lr_schedule() -> ScheduleSpec:
    return ScheduleSpec("lr", 12_000, 200_000, 400_000, 0.0, 5e-4, 5e-5)


def base_lambda_schedule() -> ScheduleSpec:
    return ScheduleSpec("lambda", 30_000, 230_000, 400_000, 0.999, 0.9999, 1.0)


def desk_lr_schedule(peak: float = 5e-4, total: int = 10_000) -> ScheduleSpec:
    return ScheduleSpec("lr", 300, 5_000, total, 0.0, peak, peak / 10)


def desk_lambda_schedule(total: int = 10_000) -> ScheduleSpec:
    return ScheduleSpec("lambda", 750, 5_750, total, 0.99, 0.999, 1.0)
