"""Input front-ends, span masking and the K-block transformer encoder.

Student and teacher run the same code: the student replaces masked frames
with a learned embedding and records a graph, the teacher sees the clean
input under ``no_grad`` and reports every block's output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import Tensor, concat, conv1d, gelu, layernorm, matmul, no_grad, scale, softmax, where

CONV_STRIDES = (5, 4, 4, 4)
CONV_WIDTHS = (10, 8, 8, 8)


@dataclass
class ModelConfig:
    K: int = 12
    D: int = 768
    H: int = 12
    F_ff: int = 3072
    V: int = 256
    N: int = 8
    T_max: int = 4096
    mask_ratio: float = 0.8
    min_span: int = 10
    input_mode: str = "features"
    feature_dim: int = 16
    conv_dim: int = 32
    pos_scale: float = 0.1
    # clustering targets: "block" = block output, "ffn" = feed-forward branch before the residual add
    target_source: str = "block"

    def validate(self) -> None:
        if self.K < 1 or self.D < 1 or self.H < 1 or self.F_ff < 1 or self.V < 1:
            raise ValueError("K, D, H, F_ff and V must be positive")
        if self.D % self.H:
            raise ValueError(f"D={self.D} is not divisible by H={self.H}")
        if not 1 <= self.N <= self.K:
            raise ValueError(f"N={self.N} must satisfy 1 <= N <= K={self.K}")
        if self.min_span < 1:
            raise ValueError("min_span must be >= 1")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.input_mode not in ("features", "waveform"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")
        if self.T_max < 1 or self.feature_dim < 1 or self.conv_dim < 1:
            raise ValueError("T_max, feature_dim and conv_dim must be positive")
        if self.pos_scale < 0:
            raise ValueError("pos_scale must be non-negative")
        if self.target_source not in ("ffn", "block"):
            raise ValueError(f"unknown target_source {self.target_source!r}")

    @property
    def target_layers(self) -> list[int]:
        """1-based indices of the clustered layers, ``(K - N, K]``."""
        return list(range(self.K - self.N + 1, self.K + 1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskSet:
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    length: int = 0

    def as_bool(self) -> np.ndarray:
        m = np.zeros(self.length, dtype=bool)
        m[self.positions] = True
        return m

    def __len__(self) -> int:
        return len(self.positions)


def num_frames(n_samples: int) -> int:
    """Frame count produced by the strided conv stack."""
    length = n_samples
    for w, s in zip(CONV_WIDTHS, CONV_STRIDES):
        if length < w:
            return 0
        length = (length - w) // s + 1
    return length


def receptive_field() -> int:
    """Samples needed for a single output frame."""
    need = 1
    for w, s in reversed(list(zip(CONV_WIDTHS, CONV_STRIDES))):
        need = (need - 1) * s + w
    return need


def sample_mask(T: int, mask_ratio: float, min_span: int, rng_seed) -> MaskSet:
    """Union of fixed-length spans with uniform starts until coverage reaches
    ``mask_ratio * T``. ``rng_seed`` may be an int or a numpy Generator."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if mask_ratio <= 0:
        return MaskSet(np.zeros(0, dtype=np.int64), T)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    span = min(min_span, T)
    need = mask_ratio * T
    mask = np.zeros(T, dtype=bool)
    covered = 0
    while covered < need:
        start = int(rng.integers(0, T - span + 1))
        mask[start : start + span] = True
        covered = int(mask.sum())
    return MaskSet(np.flatnonzero(mask), T)


def sinusoidal_positions(T: int, D: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(0, D, 2)[None, :]
    angle = pos / np.power(10000.0, i / D)
    pe = np.zeros((T, D))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : D // 2]
    return pe


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Linear weights N(0, 0.02^2), zero biases, unit layernorm gains."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    D = cfg.D
    p: dict[str, np.ndarray] = {}

    def lin(name, n_in, n_out):
        p[f"{name}.W"] = rng.normal(0.0, 0.02, (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    def ln(name, d):
        p[f"{name}.g"] = np.ones(d)
        p[f"{name}.b"] = np.zeros(d)

    if cfg.input_mode == "waveform":
        c_in = 1
        for i, w in enumerate(CONV_WIDTHS):
            fan_in = c_in * w
            p[f"conv{i}.W"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (cfg.conv_dim, c_in, w))
            p[f"conv{i}.b"] = np.zeros(cfg.conv_dim)
            c_in = cfg.conv_dim
        lin("in.proj", cfg.conv_dim, D)
    else:
        lin("in.proj", cfg.feature_dim, D)
    ln("in.ln", D)
    p["mask_emb"] = rng.normal(0.0, 0.1, D)
    for k in range(cfg.K):
        ln(f"blk{k}.ln1", D)
        lin(f"blk{k}.qkv", D, 3 * D)
        lin(f"blk{k}.out", D, D)
        ln(f"blk{k}.ln2", D)
        lin(f"blk{k}.ff1", D, cfg.F_ff)
        lin(f"blk{k}.ff2", cfg.F_ff, D)
    return p


def _t(p):
    return p if isinstance(p, Tensor) else Tensor(p)


def _linear(x, params, name):
    return matmul(x, _t(params[f"{name}.W"])) + _t(params[f"{name}.b"])


def _ln(x, params, name):
    return layernorm(x, _t(params[f"{name}.g"]), _t(params[f"{name}.b"]))


def conv_downsample(waveform, params, cfg: ModelConfig) -> Tensor:
    """16 kHz samples -> (T, D) frames via four strided GELU convs and a linear map."""
    wav = np.asarray(waveform.data if isinstance(waveform, Tensor) else waveform, dtype=np.float64)
    if wav.ndim != 1:
        raise ValueError("waveform must be 1-D")
    if len(wav) < receptive_field():
        raise ValueError(
            f"waveform of {len(wav)} samples is shorter than the receptive field ({receptive_field()})"
        )
    h = Tensor(wav[None, :])
    for i, s in enumerate(CONV_STRIDES):
        h = gelu(conv1d(h, _t(params[f"conv{i}.W"]), _t(params[f"conv{i}.b"]), s))
    return _linear(h.transpose(1, 0), params, "in.proj")


def _frontend(inputs, params, cfg: ModelConfig) -> Tensor:
    """(B, T, F) features or a list of B waveforms -> (B, T, D) pre-mask embeddings."""
    if cfg.input_mode == "waveform":
        frames = [conv_downsample(w, params, cfg) for w in inputs]
        T = frames[0].shape[0]
        if any(f.shape[0] != T for f in frames):
            raise ValueError("waveforms in a batch must produce equal frame counts")
        h = concat([f.reshape(1, T, cfg.D) for f in frames], axis=0)
    else:
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        if x.ndim != 3 or x.shape[-1] != cfg.feature_dim:
            raise ValueError(f"expected (B, T, {cfg.feature_dim}) features, got {x.shape}")
        h = _linear(x, params, "in.proj")
    return _ln(h, params, "in.ln")


def _attention(x: Tensor, params, name: str, H: int) -> Tensor:
    B, T, D = x.shape
    dh = D // H
    qkv = _linear(x, params, f"{name}.qkv").reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = scale(qkv[0], 1.0 / math.sqrt(dh)), qkv[1], qkv[2]
    scores = matmul(q, k.transpose(0, 1, 3, 2))
    # non-finite values surface as a non-finite loss in the trainer
    ctx = matmul(softmax(scores, axis=-1, check=False), v)
    ctx = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
    return _linear(ctx, params, f"{name}.out")


def _block(x: Tensor, params, k: int, H: int) -> tuple[Tensor, Tensor]:
    """Returns the block output and its feed-forward branch before the residual add."""
    x = x + _attention(_ln(x, params, f"blk{k}.ln1"), params, f"blk{k}", H)
    h = gelu(_linear(_ln(x, params, f"blk{k}.ln2"), params, f"blk{k}.ff1"))
    ff = _linear(h, params, f"blk{k}.ff2")
    return x + ff, ff


def _check_length(T: int, cfg: ModelConfig) -> None:
    if T > cfg.T_max:
        raise ValueError(f"sequence of {T} frames exceeds T_max={cfg.T_max}")


def encode(inputs, params, cfg: ModelConfig, mask: np.ndarray | None = None, branch: bool = False) -> list[Tensor]:
    """Run the encoder on a batch and return K per-block states, each (B, T, D).

    ``mask`` is an optional (B, T) boolean array of frames to replace with the
    mask embedding. With ``branch`` the feed-forward outputs before each
    residual add are returned instead of the block outputs.
    """
    h = _frontend(inputs, params, cfg)
    B, T, D = h.shape
    _check_length(T, cfg)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, T):
            raise ValueError(f"mask shape {mask.shape} does not match batch {(B, T)}")
        if mask.any():
            h = where(mask[:, :, None], _t(params["mask_emb"]), h)
    if cfg.pos_scale:
        h = h + Tensor(cfg.pos_scale * sinusoidal_positions(T, D))
    outputs = []
    for k in range(cfg.K):
        h, ff = _block(h, params, k, cfg.H)
        outputs.append(ff if branch else h)
    return outputs


def _as_batch(frames, cfg: ModelConfig):
    if cfg.input_mode == "waveform":
        return [frames]
    x = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    return x[None]


def student_forward(frames, mask: MaskSet | None, params, cfg: ModelConfig) -> Tensor:
    """Masked forward for one utterance; returns the last block output (T, D)."""
    batch = _as_batch(frames, cfg)
    m = None
    if mask is not None and len(mask):
        m = mask.as_bool()[None]
    out = encode(batch, params, cfg, mask=m)[-1]
    return out.reshape(out.shape[1:])


def teacher_forward(frames, params, cfg: ModelConfig) -> list[np.ndarray]:
    """Unmasked, gradient-free forward; returns the K per-layer target states,
    each (T, D), taken from ``cfg.target_source``."""
    with no_grad():
        outs = encode(_as_batch(frames, cfg), params, cfg, branch=cfg.target_source == "ffn")
    return [o.data[0] for o in outs]
