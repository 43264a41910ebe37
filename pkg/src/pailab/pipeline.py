"""End-to-end workflows shared by the CLI and the experiment suites:
prune a fresh initialization with any criterion, retrain, evaluate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import criteria, irp, mask as masks, metrics, nn
from .errors import ConfigError
from .scorer import ScorerModel, init_and_grad, score
from .seeds import derive_seed


@dataclass(frozen=True)
class PruneOptions:
    score_batch_size: int = 512
    snip_variant: str = "grad_only"
    grasp_keep_high: bool = False
    npb_alpha: float = 0.5
    npb_rounds: int = 10
    scope: str = "global"
    include_bias: bool = False


def criterion_scores(criterion: str, theta0, batch, g0, seed: int, opts: PruneOptions,
                     model: ScorerModel | None = None, eligible=None) -> np.ndarray:
    """One-shot score vector of a criterion evaluated at initialization."""
    if criterion == "random":
        return criteria.random_score(theta0.k, derive_seed(seed, "random-score")).values
    if criterion == "magnitude":
        return criteria.magnitude_score(theta0).values
    if criterion == "snip":
        return criteria.snip_score(theta0, None, *batch, variant=opts.snip_variant).values
    if criterion == "grasp":
        return criteria.grasp_score(theta0, None, *batch, keep_high=opts.grasp_keep_high).values
    if criterion == "autos":
        if model is None:
            raise ConfigError("criterion 'autos' needs a trained scorer")
        return score(model, theta0.values, g0, eligible).values
    raise ConfigError(f"unknown criterion {criterion!r}; expected one of {criteria.CRITERIA}")


def _npb_mask(theta0, density, eligible, seed, opts: PruneOptions):
    # path scores are tied within a layer on a dense net, so prune in rounds
    # and break ties with a seeded random key
    tiebreak = np.random.default_rng(derive_seed(seed, "npb-ties")).uniform(size=theta0.k)
    cfg = criteria.NpbConfig(opts.npb_alpha)
    m = np.ones(theta0.k, dtype=np.uint8)
    rounds = max(1, opts.npb_rounds)
    for r in range(1, rounds + 1):
        s = criteria.npb_lite_score(theta0, m, cfg).values
        m = masks.refine_mask(m, s, density ** (r / rounds), eligible, tiebreak=tiebreak)
    return m


def make_mask(criterion: str, specs, dataset, density: float, seed: int,
              opts: PruneOptions = PruneOptions(), model: ScorerModel | None = None, dtype=np.float32):
    """Prune a fresh Kaiming init. Returns ``(mask, θ₀)``."""
    masks.check_density(density)
    theta0, batch, g0 = init_and_grad(specs, dataset, seed, opts.score_batch_size, dtype)
    eligible = masks.eligible_positions(theta0, opts.include_bias)
    if criterion == "npb":
        return _npb_mask(theta0, density, eligible, seed, opts), theta0
    s = criterion_scores(criterion, theta0, batch, g0, seed, opts, model, eligible)
    m = masks.topk_mask(s, density, eligible, opts.scope, theta0.layer_index())
    return m, theta0


def train_masked(theta0, mask, dataset, hyper: nn.TrainHyper, seed: int):
    return nn.train(theta0, mask, dataset.features, dataset.labels,
                    replace(hyper, seed=derive_seed(seed, "post-train")))


def run_point(criterion: str, specs, train_set, test_set, density: float, seed: int,
              hyper: nn.TrainHyper, opts: PruneOptions = PruneOptions(), model: ScorerModel | None = None,
              dtype=np.float32, notes: str = "") -> metrics.EvalReport:
    """Prune, retrain, evaluate one (criterion, density, seed) point."""
    t0 = time.perf_counter()
    m, theta0 = make_mask(criterion, specs, train_set, density, seed, opts, model, dtype)
    trained, _ = train_masked(theta0, m, train_set, hyper, seed)
    eligible = masks.eligible_positions(theta0, opts.include_bias)
    report = metrics.evaluate(trained, m, test_set, criterion, masks.density(m, eligible), seed,
                              epochs=hyper.epochs, wall_s=time.perf_counter() - t0,
                              eligible_set="all" if opts.include_bias else "weights",
                              per_layer=masks.per_layer_report(m, theta0, eligible), notes=notes)
    return report


def dense_point(specs, train_set, test_set, seed: int, hyper: nn.TrainHyper, dtype=np.float32,
                notes: str = "") -> metrics.EvalReport:
    t0 = time.perf_counter()
    theta0 = nn.kaiming_init(specs, derive_seed(seed, "init"), dtype)
    trained, _ = train_masked(theta0, None, train_set, hyper, seed)
    return metrics.evaluate(trained, None, test_set, "dense", 1.0, seed, epochs=hyper.epochs,
                            wall_s=time.perf_counter() - t0, notes=notes)


def irp_point(specs, train_set, test_set, cfg: irp.IrpConfig, hyper: nn.TrainHyper, dtype=np.float32):
    """Iterative rewind pruning, then retrain the final ticket from θ₀."""
    t0 = time.perf_counter()
    theta0 = nn.kaiming_init(specs, derive_seed(cfg.seed, "init"), dtype)
    ds = irp.run_irp(specs, train_set, replace(cfg, keep_masks=True), theta0=theta0, dtype=dtype)
    final = ds.masks[-1]
    trained, _ = train_masked(theta0, final, train_set, hyper, cfg.seed)
    eligible = masks.eligible_positions(theta0, cfg.include_bias)
    rep = metrics.evaluate(trained, final, test_set, f"irp-{cfg.criterion}", masks.density(final, eligible),
                           cfg.seed, epochs=hyper.epochs, wall_s=time.perf_counter() - t0)
    return rep, ds
