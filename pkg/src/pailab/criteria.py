"""Hand-designed pruning-at-initialization scores.

Every score vector is aligned with the flat parameter layout. Positions that
are currently masked carry ``-inf`` so a top-k never selects them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError

log = logging.getLogger(__name__)

CRITERIA = ("random", "magnitude", "snip", "grasp", "npb", "autos")
EXCLUDED = -np.inf


@dataclass(frozen=True)
class ScoreVector:
    values: np.ndarray
    criterion_tag: str
    normalized: bool = False

    def __len__(self):
        return self.values.size


def _sentinel(values, mask):
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        return values
    return np.where(np.asarray(mask, dtype=bool), values, EXCLUDED)


def random_score(k: int, seed: int) -> ScoreVector:
    if k < 1:
        raise ConfigError("k must be >= 1")
    return ScoreVector(np.random.default_rng(seed).uniform(0.0, 1.0, size=k), "random")


def magnitude_score(params, mask=None) -> ScoreVector:
    return ScoreVector(_sentinel(np.abs(params.values), mask), "magnitude")


def snip_score(params, mask, x, y, variant: str = "grad_only") -> ScoreVector:
    """``|g|`` (default) or the connection-sensitivity form ``|θ ⊙ g|``."""
    if len(y) == 0:
        raise ConfigError("score batch is empty")
    g = nn.backward(params, mask, x, y).astype(np.float64)
    if variant == "grad_only":
        s = np.abs(g)
    elif variant == "weight_times_grad":
        s = np.abs(params.values.astype(np.float64) * g)
    else:
        raise ConfigError(f"unknown SNIP variant {variant!r}")
    return ScoreVector(_sentinel(s, mask), f"snip:{variant}")


def grasp_from_hg(theta, hg) -> np.ndarray:
    return -np.asarray(theta, dtype=np.float64) * np.asarray(hg, dtype=np.float64)


def grasp_score(params, mask, x, y, keep_high: bool = False) -> ScoreVector:
    """``S = -θ ⊙ Hg`` with ``g`` the (fixed) batch gradient.

    Lowest scores are pruned; ``keep_high=True`` negates the score so the
    opposite end of the ranking survives.
    """
    if len(y) == 0:
        raise ConfigError("score batch is empty")
    g = nn.backward(params, mask, x, y)
    hg = nn.hvp(params, mask, x, y, g)
    s = grasp_from_hg(params.values, hg)
    if keep_high:
        s = -s
    return ScoreVector(_sentinel(s, mask), "grasp" + (":flipped" if keep_high else ""))


# ---------------------------------------------------------------- NPB-lite


def _connectivity(mask, specs):
    m = np.ones(nn.param_count(specs), dtype=np.uint8) if mask is None else np.asarray(mask)
    return [(W != 0).astype(np.float64) for W, _ in nn.unpack(m, specs)]


def path_stats(mask, specs):
    """Surviving input->node and node->output path counts for every node layer.

    Returns two lists indexed by node layer (0 = inputs, last = outputs).
    Counts are float64, saturated at the largest finite double.
    """
    conn = _connectivity(mask, specs)
    big = np.finfo(np.float64).max
    in_paths = [np.ones(specs[0].in_dim)]
    out_paths = [np.ones(specs[-1].out_dim)]
    with np.errstate(over="ignore"):
        for C in conn:
            in_paths.append(np.minimum(in_paths[-1] @ C, big))
        for C in reversed(conn):
            out_paths.insert(0, np.minimum(C @ out_paths[0], big))
    return in_paths, out_paths


@dataclass(frozen=True)
class NpbConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")


def npb_lite_score(params, mask, cfg: NpbConfig = NpbConfig()) -> ScoreVector:
    """``α·f_n + (1-α)·f_p`` per weight edge.

    ``f_p``: paths through the edge, ``in(src)·out(dst)``, min-max scaled over
    the network. ``f_n``: 1 when both endpoints are on some input->output path.
    Biases get ``f_n`` of their node and ``f_p`` of 0.
    """
    specs = params.specs
    in_p, out_p = path_stats(mask, specs)
    fp = np.zeros(params.k)
    fn = np.zeros(params.k)
    for i, ((W, b), (FW, Fb)) in enumerate(zip(nn.unpack(fp, specs), nn.unpack(fn, specs))):
        src_live = (in_p[i] > 0) & (out_p[i] > 0)
        dst_live = (in_p[i + 1] > 0) & (out_p[i + 1] > 0)
        W[...] = np.outer(in_p[i], out_p[i + 1])
        FW[...] = np.outer(src_live, dst_live)
        if Fb is not None:
            Fb[...] = dst_live
    if mask is not None:
        dead = ~np.asarray(mask, dtype=bool)
        fp[dead] = 0.0
        fn[dead] = 0.0
    weights = params.weight_positions()
    lo, hi = fp[weights].min(), fp[weights].max()
    if hi <= 0:
        log.warning("degenerate network: no surviving input->output path")
        return ScoreVector(_sentinel(np.zeros(params.k), mask), "npb", True)
    fp = (fp - lo) / (hi - lo) if hi > lo else np.where(fp > 0, 1.0, 0.0)
    fp[~weights] = 0.0
    s = cfg.alpha * fn + (1 - cfg.alpha) * fp
    return ScoreVector(_sentinel(s, mask), "npb", True)
