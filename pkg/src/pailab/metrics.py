"""Evaluation metrics and summary statistics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError


@dataclass
class EvalReport:
    criterion: str
    density: float
    seed: int
    accuracy: float
    loss: float
    epochs: int = 0
    wall_s: float = 0.0
    eligible_set: str = "weights"
    per_layer: list = field(default_factory=list)
    notes: str = ""

    @property
    def sparsity(self) -> float:
        return 1.0 - self.density


def predict(params, mask, x, chunk: int = 10000) -> np.ndarray:
    preds = [nn.forward(params, mask, x[s:s + chunk])[0].argmax(axis=1)
             for s in range(0, len(x), chunk)]
    return np.concatenate(preds)


def accuracy(params, mask, x, y) -> float:
    """Fraction of examples whose arg-max logit (first index on ties) equals the label."""
    y = np.asarray(y)
    if y.size == 0:
        raise ConfigError("empty test set")
    return int((predict(params, mask, x) == y).sum()) / y.size


def mean_loss(params, mask, x, y, chunk: int = 10000) -> float:
    total = 0.0
    for s in range(0, len(y), chunk):
        _, value = nn.forward(params, mask, x[s:s + chunk], y[s:s + chunk])
        total += value * len(y[s:s + chunk])
    return total / len(y)


def evaluate(params, mask, testset, criterion: str, density: float, seed: int, **extra) -> EvalReport:
    t0 = time.perf_counter()
    acc = accuracy(params, mask, testset.features, testset.labels)
    loss = mean_loss(params, mask, testset.features, testset.labels)
    wall = extra.pop("wall_s", 0.0) + time.perf_counter() - t0
    return EvalReport(criterion, density, seed, acc, loss, wall_s=wall, **extra)


def ccc(x, y) -> float:
    """Lin's concordance correlation coefficient with population (1/n) moments.

    Two constant inputs give 1 when equal and 0 otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ConfigError("ccc needs two equal-length 1-d arrays with >= 2 entries")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    cov = np.mean(dx * dy)
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return 1.0
    return float(2 * cov / denom)


@dataclass(frozen=True)
class ScoreSummary:
    min: float
    max: float
    mean: float
    std: float
    counts: np.ndarray
    edges: np.ndarray


def score_summary(scores, bins: int | str | np.ndarray = 20) -> ScoreSummary:
    """Finite-entry statistics plus a histogram (``-inf`` sentinels are dropped)."""
    s = np.asarray(scores, dtype=np.float64)
    s = s[np.isfinite(s)]
    counts, edges = np.histogram(s, bins=bins)
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        # np.mean can round away from a constant value; report it exactly
        return ScoreSummary(lo, hi, lo, 0.0, counts, edges)
    return ScoreSummary(lo, hi, float(s.mean()), float(s.std()), counts, edges)


def export_scatter(path, scores, theta0, grad0=None) -> None:
    """Paired columns for plotting score against initial features."""
    cols = [np.asarray(scores), np.abs(np.asarray(theta0))]
    header = "score,abs_theta0"
    if grad0 is not None:
        cols.append(np.abs(np.asarray(grad0)))
        header += ",abs_grad0"
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.9g")
