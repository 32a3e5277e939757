"""scikit-learn style front door.

``DinoSR`` pretrains on a set of utterances and exposes the teacher's
clustered layer as ``transform`` (states), ``predict`` (codeword ids) and
``predict_proba`` (student head posteriors). ``OnlineClustering`` is the
EMA codebook on its own.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import codebook as cb
from .distill import ScheduleSpec
from .inference import layer_states, student_posteriors, teacher_codes
from .model import ModelConfig
from .synthdata import Utterance
from .trainer import TrainConfig, TrainState, init_train_state, load_checkpoint, pretrain, save_checkpoint


def check_utterances(X, n_features: int | None = None) -> list[np.ndarray]:
    """Accept a (n, T, F) array or a sequence of (T_i, F) arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a batch of utterances; wrap a single (T, F) array in a list")
    else:
        seqs = list(X)
    if not seqs:
        raise ValueError("no utterances given")
    out = [check_array(s, dtype=np.float64, ensure_min_samples=1) for s in seqs]
    F = out[0].shape[1]
    if any(s.shape[1] != F for s in out):
        raise ValueError("all utterances need the same feature dimension")
    if n_features is not None and F != n_features:
        raise ValueError(f"X has {F} features, but the estimator expects {n_features}")
    return out


def _as_utterances(seqs):
    return [Utterance(frames=s, id=f"x{i:05d}") for i, s in enumerate(seqs)]


def _stack_if_uniform(arrays, was_array):
    if was_array and len({a.shape for a in arrays}) == 1:
        return np.stack(arrays)
    return arrays


class DinoSR(TransformerMixin, BaseEstimator):
    """Masked self-distillation with online clustering.

    Defaults are the desk-scale profile (4 blocks, 64 wide, 32 codewords on
    the top 2 layers). The full-size base profile is driven by
    :class:`~dinosr.config.RunConfig` through the command line.
    """

    def __init__(
        self,
        n_layers=4,
        d_model=64,
        n_heads=4,
        d_ff=256,
        codebook_size=32,
        n_target_layers=2,
        mask_ratio=0.8,
        min_span=10,
        pos_scale=0.1,
        target_source="block",
        tau=0.9,
        codebook_init="gaussian_l2norm",
        batch_size=8,
        steps=10_000,
        lr=5e-4,
        layer=None,
        random_state=0,
    ):
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.codebook_size = codebook_size
        self.n_target_layers = n_target_layers
        self.mask_ratio = mask_ratio
        self.min_span = min_span
        self.pos_scale = pos_scale
        self.target_source = target_source
        self.tau = tau
        self.codebook_init = codebook_init
        self.batch_size = batch_size
        self.steps = steps
        self.lr = lr
        self.layer = layer
        self.random_state = random_state

    def _configs(self, n_features, T_max):
        model = ModelConfig(
            K=self.n_layers, D=self.d_model, H=self.n_heads, F_ff=self.d_ff, V=self.codebook_size,
            N=self.n_target_layers, T_max=T_max, mask_ratio=self.mask_ratio, min_span=self.min_span,
            feature_dim=n_features, pos_scale=self.pos_scale, target_source=self.target_source,
        )
        total = max(int(self.steps), 1)
        ramp, hold = max(total * 3 // 100, 1), total // 2
        lam_ramp = max(total * 3 // 40, 1)
        train = TrainConfig(
            batch_size=self.batch_size, seed=int(self.random_state), tau=self.tau,
            codebook_init=self.codebook_init,
            lr_schedule=ScheduleSpec("lr", ramp, hold, total, 0.0, self.lr, self.lr / 10),
            lambda_schedule=ScheduleSpec("lambda", lam_ramp, lam_ramp + total // 2, total, 0.99, 0.999, 1.0),
        )
        return model, train

    def fit(self, X, y=None, on_step=None):
        seqs = check_utterances(X)
        model, train = self._configs(seqs[0].shape[1], max(len(s) for s in seqs))
        state = init_train_state(model, train)
        history = []

        def record(m):
            history.append(m["loss"])
            if on_step is not None:
                on_step(m)

        self.state_ = pretrain(state, _as_utterances(seqs), int(self.steps), on_step=record)
        self.loss_history_ = np.asarray(history)
        self.n_features_in_ = seqs[0].shape[1]
        return self

    @property
    def layer_(self) -> int:
        check_is_fitted(self, "state_")
        return self.layer if self.layer is not None else self.state_.model_config.K

    def _check(self, X):
        check_is_fitted(self, "state_")
        seqs = check_utterances(X, self.n_features_in_)
        if self.layer_ not in self.state_.model_config.target_layers:
            raise ValueError(f"layer {self.layer_} is not a clustered layer")
        return seqs

    def transform(self, X):
        """Instance-normalised teacher states of the clustered ``layer``."""
        seqs = self._check(X)
        cfg = self.state_.model_config
        states = layer_states(self.state_.teacher, cfg, _as_utterances(seqs), branch=cfg.target_source == "ffn")
        out = [cb.normalize_targets(s[self.layer_ - 1]) for s in states]
        return _stack_if_uniform(out, isinstance(X, np.ndarray))

    def predict(self, X):
        """Codeword index per frame."""
        seqs = self._check(X)
        codes = teacher_codes(self.state_, _as_utterances(seqs), [self.layer_])[self.layer_]
        return _stack_if_uniform(codes, isinstance(X, np.ndarray))

    def predict_proba(self, X):
        """Unmasked student posteriors over the ``layer`` codebook."""
        seqs = self._check(X)
        post = student_posteriors(self.state_, _as_utterances(seqs), [self.layer_])[self.layer_]
        return _stack_if_uniform(post, isinstance(X, np.ndarray))

    def save(self, path) -> None:
        check_is_fitted(self, "state_")
        save_checkpoint(self.state_, path)

    @classmethod
    def from_state(cls, state: TrainState, layer=None) -> "DinoSR":
        m, t = state.model_config, state.train_config
        est = cls(
            n_layers=m.K, d_model=m.D, n_heads=m.H, d_ff=m.F_ff, codebook_size=m.V, n_target_layers=m.N,
            mask_ratio=m.mask_ratio, min_span=m.min_span, pos_scale=m.pos_scale, target_source=m.target_source,
            tau=t.tau, codebook_init=t.codebook_init, batch_size=t.batch_size, steps=t.lr_schedule.total,
            lr=t.lr_schedule.peak, layer=layer, random_state=t.seed,
        )
        est.state_ = state
        est.n_features_in_ = m.feature_dim
        return est

    @classmethod
    def from_checkpoint(cls, path, layer=None) -> "DinoSR":
        return cls.from_state(load_checkpoint(path), layer)


class OnlineClustering(ClusterMixin, BaseEstimator):
    """EMA codebook clustering. With ``tau=0`` and full batches each pass is
    one Lloyd iteration."""

    def __init__(self, n_clusters=8, tau=0.9, init="gaussian_l2norm", freeze_inactive=True,
                 batch_size=None, max_iter=10, random_state=0):
        self.n_clusters = n_clusters
        self.tau = tau
        self.init = init
        self.freeze_inactive = freeze_inactive
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state

    def _init_state(self, D, X=None):
        if isinstance(self.init, np.ndarray) or isinstance(self.init, list):
            E = check_array(self.init, dtype=np.float64)
            if E.shape != (self.n_clusters, D):
                raise ValueError(f"init has shape {E.shape}, expected {(self.n_clusters, D)}")
            return cb.CodebookState(E.copy(), E.copy(), np.ones(len(E)), self.tau, self.freeze_inactive)
        return cb.init_codebook(self.n_clusters, D, self.init, self.random_state, tau=self.tau,
                                freeze_inactive=self.freeze_inactive)

    def _batches(self, n):
        bs = n if self.batch_size is None else int(self.batch_size)
        for i in range(0, n, bs):
            yield slice(i, i + bs)

    def partial_fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not hasattr(self, "state_"):
            self.state_ = self._init_state(X.shape[1])
            self.n_features_in_ = X.shape[1]
            self.n_iter_ = 0
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the estimator expects {self.n_features_in_}")
        for sl in self._batches(len(X)):
            cb.update(self.state_, X[sl], cb.assign(X[sl], self.state_))
        self.n_iter_ += 1
        self.cluster_centers_ = self.state_.E
        return self

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        for attr in ("state_", "n_features_in_", "n_iter_"):
            self.__dict__.pop(attr, None)
        for _ in range(self.max_iter):
            self.partial_fit(X)
        self.labels_ = self.predict(X)
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the estimator expects {self.n_features_in_}")
        return cb.assign(X, self.state_)
