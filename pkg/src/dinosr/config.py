"""JSON run configuration shared by the command line and the estimator.

Defaults are the full-size base profile. A document has the sections
``model``, ``train``, ``schedules``, ``data`` and ``eval`` plus top-level
``seed`` and ``output_dir``; any key not listed here is rejected.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .distill import ScheduleSpec, base_lambda_schedule, base_lr_schedule
from .model import ModelConfig
from .synthdata import PhoneInventory, default_inventory
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    """Synthetic corpus recipe, or a directory of feature files."""

    corpus_dir: str | None = None
    utterance_count: int = 400
    T: int = 200
    phones: int = 8
    std: float = 1.0
    separation: float = 6.0
    mean_duration: float = 10.0
    min_duration: int = 4
    zipf_exponent: float = 1.0
    inventory_seed: int = 0

    def validate(self) -> None:
        if self.utterance_count < 1 or self.T < 1:
            raise ValueError("data.utterance_count and data.T must be positive")
        if self.zipf_exponent <= 0:
            raise ValueError("data.zipf_exponent must be positive")

    def inventory(self, feature_dim: int) -> PhoneInventory:
        return default_inventory(
            P=self.phones,
            F=feature_dim,
            std=self.std,
            separation=self.separation,
            mean_duration=self.mean_duration,
            min_duration=self.min_duration,
            seed=self.inventory_seed,
        )


@dataclass
class EvalConfig:
    abx_layer: int | None = None  # None: layer 5 if clustered, else the lowest clustered layer
    abx_triples: int = 500
    abx_kind: str = "js"

    def validate(self) -> None:
        if self.abx_triples < 1:
            raise ValueError("eval.abx_triples must be positive")
        if self.abx_kind not in ("js", "cosine"):
            raise ValueError(f"unknown eval.abx_kind {self.abx_kind!r}")


_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("seed", "lr_schedule", "lambda_schedule")]


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr_schedule=base_lr_schedule(), lambda_schedule=base_lambda_schedule()))
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.train.seed = self.seed

    def validate(self) -> None:
        try:
            self.model.validate()
            self.train.validate()
            self.data.validate()
            self.eval.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.eval.abx_layer is not None and self.eval.abx_layer not in self.model.target_layers:
            raise ConfigError(f"eval.abx_layer {self.eval.abx_layer} is not a clustered layer {self.model.target_layers}")

    def with_seed(self, seed: int) -> "RunConfig":
        self.seed = seed
        self.train.seed = seed
        return self

    def to_dict(self) -> dict:
        train = {k: getattr(self.train, k) for k in _TRAIN_KEYS}
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "model": self.model.to_dict(),
            "train": train,
            "schedules": {
                "lr": _schedule_dict(self.train.lr_schedule),
                "lambda": _schedule_dict(self.train.lambda_schedule),
            },
            "data": asdict(self.data),
            "eval": asdict(self.eval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(doc, {"seed", "output_dir", "model", "train", "schedules", "data", "eval"}, "")
        cfg = cls()
        cfg.seed = _typed(doc.get("seed", cfg.seed), int, "seed")
        cfg.output_dir = _typed(doc.get("output_dir", cfg.output_dir), str, "output_dir")
        cfg.model = _section(ModelConfig, cfg.model, doc.get("model", {}), "model")
        train_doc = doc.get("train", {})
        _reject_unknown(train_doc, set(_TRAIN_KEYS), "train")
        for key, value in train_doc.items():
            setattr(cfg.train, key, _coerce(value, getattr(cfg.train, key), f"train.{key}"))
        sched = doc.get("schedules", {})
        _reject_unknown(sched, {"lr", "lambda"}, "schedules")
        if "lr" in sched:
            cfg.train.lr_schedule = _schedule(sched["lr"], "lr")
        if "lambda" in sched:
            cfg.train.lambda_schedule = _schedule(sched["lambda"], "lambda")
        cfg.data = _section(DataConfig, cfg.data, doc.get("data", {}), "data")
        cfg.eval = _section(EvalConfig, cfg.eval, doc.get("eval", {}), "eval")
        cfg.train.seed = cfg.seed
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(doc)


def _schedule_dict(spec: ScheduleSpec) -> dict:
    d = spec.to_dict()
    d.pop("kind")
    return d


def _schedule(doc, kind: str) -> ScheduleSpec:
    names = [f.name for f in fields(ScheduleSpec) if f.name != "kind"]
    if not isinstance(doc, dict):
        raise ConfigError(f"schedules.{kind} must be an object")
    _reject_unknown(doc, set(names), f"schedules.{kind}")
    missing = [n for n in names if n not in doc]
    if missing:
        raise ConfigError(f"schedules.{kind} is missing {', '.join(missing)}")
    return ScheduleSpec(kind=kind, **{n: doc[n] for n in names})


def _reject_unknown(doc, allowed: set, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key {prefix}{unknown[0]}")


def _typed(value, kind, where):
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where} must be an integer")
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return value


def _coerce(value, default, where):
    """Light type check against the default's type."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return value


def _section(cls, current, doc, where):
    names = {f.name for f in fields(cls)}
    _reject_unknown(doc, names, where)
    values = asdict(current)
    for key, value in doc.items():
        default = values[key]
        values[key] = value if default is None or value is None else _coerce(value, default, f"{where}.{key}")
    return cls(**values)
