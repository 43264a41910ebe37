"""Binary pruning masks built from score vectors.

A mask is a ``uint8`` array aligned with a ``ParamVector``. Only *eligible*
positions (weights, by default) are ever pruned; ineligible ones stay 1.
Densities are fractions of eligible parameters that remain.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MonotonicityError

log = logging.getLogger(__name__)


def check_density(density: float) -> float:
    density = float(density)
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must be in (0, 1], got {density}")
    return density


def kept_count(density: float, n_eligible: int) -> int:
    return int(round(check_density(density) * n_eligible))


def eligible_positions(params, include_bias: bool = False) -> np.ndarray:
    if include_bias:
        return np.ones(params.k, dtype=bool)
    return params.weight_positions()


def _rank_order(scores: np.ndarray, tiebreak: np.ndarray | None = None) -> np.ndarray:
    """Indices sorted by descending score; ties by ``tiebreak`` (desc) then index."""
    keys = [-scores]
    if tiebreak is not None:
        keys.insert(0, -np.asarray(tiebreak, dtype=np.float64))
    # lexsort: last key is primary; it is stable, so lower index wins final ties
    return np.lexsort(keys)


def _select(scores, idx, n_keep, tiebreak=None):
    sub = scores[idx]
    tb = None if tiebreak is None else np.asarray(tiebreak)[idx]
    order = _rank_order(sub, tb)
    return idx[order[:n_keep]]


def topk_mask(scores, density: float, eligible=None, scope: str = "global",
              layer_index=None, tiebreak=None) -> np.ndarray:
    """Keep the highest-scoring ``round(density * n_eligible)`` eligible entries.

    Ties go to the lower flat index (or to the higher ``tiebreak`` value first,
    when one is given). With ``scope="per-layer"`` the count is taken per
    layer and clamped to at least one survivor.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any() or np.isposinf(scores).any():
        raise ConfigError("scores must be finite (or -inf for excluded entries)")
    check_density(density)
    k = scores.size
    eligible = np.ones(k, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    mask = (~eligible).astype(np.uint8)
    if scope == "global":
        idx = np.flatnonzero(eligible)
        mask[_select(scores, idx, kept_count(density, idx.size), tiebreak)] = 1
    elif scope == "per-layer":
        if layer_index is None:
            raise ConfigError("per-layer scope needs a layer index")
        layer_index = np.asarray(layer_index)
        for layer in np.unique(layer_index[eligible]):
            idx = np.flatnonzero(eligible & (layer_index == layer))
            n_keep = max(1, kept_count(density, idx.size))
            mask[_select(scores, idx, n_keep, tiebreak)] = 1
    else:
        raise ConfigError(f"unknown scope {scope!r}")
    return mask


def refine_mask(current, scores, density: float, eligible=None, tiebreak=None) -> np.ndarray:
    """Prune further among survivors of ``current`` down to ``density``.

    Already-pruned entries stay pruned whatever their score.
    """
    current = np.asarray(current, dtype=np.uint8)
    scores = np.asarray(scores, dtype=np.float64)
    eligible = np.ones(current.size, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    n_eligible = int(eligible.sum())
    target = kept_count(density, n_eligible)
    alive = np.flatnonzero(eligible & (current == 1))
    if target > alive.size:
        raise MonotonicityError(
            f"refinement to {target} survivors requested but only {alive.size} remain"
        )
    mask = current.copy()
    mask[alive] = 0
    mask[_select(scores, alive, target, tiebreak)] = 1
    return mask


def density(mask, eligible=None) -> float:
    mask = np.asarray(mask)
    if eligible is None:
        return float(mask.sum()) / mask.size
    eligible = np.asarray(eligible, dtype=bool)
    return float(mask[eligible].sum()) / int(eligible.sum())


@dataclass(frozen=True)
class LayerReport:
    layer: int
    kept: int
    total: int

    @property
    def collapsed(self) -> bool:
        return self.kept == 0


def per_layer_report(mask, params, eligible=None, warn: bool = True) -> list[LayerReport]:
    """Kept/total eligible counts per layer; logs a warning on layer collapse."""
    mask = np.asarray(mask)
    eligible = params.weight_positions() if eligible is None else np.asarray(eligible, dtype=bool)
    layer_index = params.layer_index()
    rows = []
    for layer in range(len(params.specs)):
        sel = eligible & (layer_index == layer)
        if not sel.any():
            continue
        rows.append(LayerReport(layer, int(mask[sel].sum()), int(sel.sum())))
    if warn:
        for r in rows:
            if r.collapsed:
                log.warning("layer %d fully pruned (0 of %d kept)", r.layer, r.total)
    return rows


@dataclass
class PruneMask:
    """A mask bundled with how it was built, for persistence."""

    bits: np.ndarray
    scope: str = "global"
    eligible_set: str = "weights"
    specs: tuple = ()

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if not np.isin(self.bits, (0, 1)).all():
            raise ConfigError("mask bits must be 0 or 1")
