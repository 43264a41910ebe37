"""Learned pruning criterion: a per-parameter regressor from initial features
(initial weight, initial gradient) to the surviving score, and the
prune-at-initialization pipeline that uses it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import data, mask as masks, nn
from .criteria import EXCLUDED, ScoreVector
from .errors import ConfigError, InterfaceError
from .irp import AutoSDataset
from .seeds import derive_seed

log = logging.getLogger(__name__)

FEATURE_MODES = {
    "param_only": ("theta0",),
    "grad_only": ("grad0",),
    "param_and_grad": ("theta0", "grad0"),
}
STD_FLOOR = 1e-12


def feature_columns(mode: str) -> tuple:
    try:
        return FEATURE_MODES[mode]
    except KeyError:
        raise ConfigError(f"unknown feature mode {mode!r}; expected one of {tuple(FEATURE_MODES)}") from None


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray


def build_features(theta0, grad0, mode: str, stats: FeatureStats | None = None):
    """Z-scored feature matrix with columns in (θ₀, g₀) order.

    Without ``stats`` the statistics are computed from these inputs (training
    time) and returned alongside the matrix.
    """
    cols = feature_columns(mode)
    raw = {"theta0": theta0, "grad0": grad0}
    arrays = []
    for c in cols:
        if raw[c] is None:
            raise InterfaceError(f"feature mode {mode!r} needs {c}")
        arrays.append(np.asarray(raw[c], dtype=np.float64))
    if len({a.shape for a in arrays}) != 1:
        raise ConfigError("feature arrays must have equal length")
    X = np.column_stack(arrays)
    if stats is None:
        std = X.std(axis=0)
        if (std < STD_FLOOR).any():
            log.warning("zero-variance feature column(s) %s; std floored at %g",
                        [c for c, s in zip(cols, std) if s < STD_FLOOR], STD_FLOOR)
        stats = FeatureStats(X.mean(axis=0), np.maximum(std, STD_FLOOR))
    return (X - stats.mean) / stats.std, stats


@dataclass(frozen=True)
class ScorerHyper:
    learning_rate: float = 0.01
    batch_size: int = 1024
    epochs: int = 10
    seed: int = 0
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("scorer learning_rate, batch_size and epochs must be positive")

    def train_hyper(self) -> nn.TrainHyper:
        return nn.TrainHyper("adam", self.learning_rate, self.batch_size, self.epochs,
                             weight_decay=0.0, lr_drop_factor=1.0, lr_drop_epochs=(),
                             seed=derive_seed(self.seed, "scorer-train"))


@dataclass
class ScorerModel:
    params: nn.ParamVector
    mode: str
    stats: FeatureStats
    header: dict = field(default_factory=dict)

    def predict(self, features: np.ndarray) -> np.ndarray:
        out, _ = nn.forward(self.params, None, features)
        return out[:, 0].astype(np.float64)


def train_scorer(dataset: AutoSDataset, mode: str = "param_and_grad",
                 hyper: ScorerHyper = ScorerHyper(), dtype=np.float32) -> ScorerModel:
    """Fit the regressor by minibatch Adam on mean squared error."""
    if len(dataset) == 0:
        raise ConfigError("empty AutoS dataset")
    cols = feature_columns(mode)
    missing = [c for c in cols if c not in dataset.columns]
    if missing:
        raise InterfaceError(f"dataset lacks feature column(s) {missing} required by mode {mode!r}")
    get = {c: dataset.column(c) for c in cols}
    X, stats = build_features(get.get("theta0"), get.get("grad0"), mode)
    X = X.astype(dtype)
    y = dataset.labels.astype(dtype)
    specs = nn.mlp_specs([len(cols), *hyper.hidden, 1])
    init = nn.kaiming_init(specs, derive_seed(hyper.seed, "scorer-init"), dtype)

    full_mse = []

    def record(p, rec):
        pred, _ = nn.forward(p, None, X)
        r = pred[:, 0].astype(np.float64) - y
        rec["mse"] = float(np.mean(r * r))
        full_mse.append(rec["mse"])

    params, history = nn.train(init, None, X, y, hyper.train_hyper(), loss="mse", on_epoch=record)
    header = {
        "backbone": "mlp-" + "-".join(str(h) for h in (len(cols), *hyper.hidden, 1)),
        "feature_mode": mode,
        "learning_rate": hyper.learning_rate,
        "batch_size": hyper.batch_size,
        "epochs": hyper.epochs,
        "optimizer": "adam",
        "loss": "mse",
        "seed": hyper.seed,
        "train_mse": full_mse,
        "dataset": dataset.header.get("sources", []),
    }
    log.info("scorer trained: mse %s", ", ".join(f"{m:.5f}" for m in full_mse))
    return ScorerModel(params, mode, stats, header)


def score(model: ScorerModel, theta0, grad0=None, eligible=None) -> ScoreVector:
    """Predicted surviving score per parameter; ``-inf`` outside ``eligible``."""
    theta0 = np.asarray(theta0)
    eligible = np.ones(theta0.size, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    cols = feature_columns(model.mode)
    if "grad0" in cols and grad0 is None:
        raise InterfaceError(f"scorer mode {model.mode!r} needs initial gradients")
    g = None if grad0 is None else np.asarray(grad0)[eligible]
    X, _ = build_features(theta0[eligible], g, model.mode, model.stats)
    out = np.full(theta0.size, EXCLUDED)
    out[eligible] = model.predict(X.astype(model.params.dtype))
    return ScoreVector(out, "autos:" + model.mode)


def init_and_grad(specs, dataset: data.LabeledDataset, seed: int, score_batch_size: int = 512,
                  dtype=np.float32):
    """Kaiming init and its gradient on one class-balanced batch (the only
    data access a pruning-at-initialization method gets)."""
    theta0 = nn.kaiming_init(specs, derive_seed(seed, "init"), dtype)
    batch = data.balanced_batch(dataset, score_batch_size, derive_seed(seed, "score-batch"))
    return theta0, batch, nn.backward(theta0, None, *batch)


def prune_at_init(specs, dataset: data.LabeledDataset, model: ScorerModel, density: float, seed: int,
                  score_batch_size: int = 512, include_bias: bool = False, dtype=np.float32):
    """Returns ``(mask, θ₀)``: one gradient evaluation, no training."""
    masks.check_density(density)
    theta0, _, g0 = init_and_grad(specs, dataset, seed, score_batch_size, dtype)
    eligible = masks.eligible_positions(theta0, include_bias)
    s = score(model, theta0.values, g0, eligible)
    return masks.topk_mask(s.values, density, eligible), theta0
