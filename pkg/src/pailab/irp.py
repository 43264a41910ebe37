"""Iterative rewind pruning and surviving-score dataset generation.

Each round trains the current subnetwork from the initial weights, scores
the trained weights with a criterion, removes more of the survivors and
rewinds. A weight's label is the fraction of rounds it survived.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import criteria, data, mask as masks, metrics, nn
from .errors import ConfigError, MergeError
from .seeds import derive_seed

log = logging.getLogger(__name__)

IRP_CRITERIA = ("magnitude", "snip", "grasp", "random")


def schedule_density(final_density: float, n_iter: int, i: int) -> float:
    """Geometric interpolation: ``final_density ** (i / n_iter)``."""
    if not 0 <= i <= n_iter:
        raise ConfigError(f"iteration {i} outside [0, {n_iter}]")
    return float(final_density) ** (i / n_iter)


@dataclass(frozen=True)
class IrpConfig:
    criterion: str = "snip"
    iterations: int = 20
    final_density: float = 0.01
    train_hyper: nn.TrainHyper = nn.TrainHyper()
    seed: int = 0
    score_batch_size: int = 512
    snip_variant: str = "grad_only"
    include_bias: bool = False
    full_grad: bool = False
    keep_masks: bool = False

    def __post_init__(self):
        if self.criterion not in IRP_CRITERIA:
            raise ConfigError(f"IRP criterion must be one of {IRP_CRITERIA}, got {self.criterion!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0.0 < self.final_density < 1.0:
            raise ConfigError("final_density must be in (0, 1)")


FEATURE_COLUMNS = ("theta0", "grad0")


@dataclass
class AutoSDataset:
    """Per-eligible-parameter records ``(θ₀, g₀) -> surviving score``."""

    features: np.ndarray  # (n, len(columns))
    labels: np.ndarray
    columns: tuple = FEATURE_COLUMNS
    header: dict = field(default_factory=dict)
    masks: np.ndarray | None = None  # (N + 1, k) when kept for debugging

    def __post_init__(self):
        self.columns = tuple(self.columns)
        if self.features.ndim != 2 or self.features.shape != (self.labels.size, len(self.columns)):
            raise ConfigError("feature matrix must be (n_records, n_columns)")

    def __len__(self):
        return self.labels.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.features[:, self.columns.index(name)]
        except ValueError:
            raise ConfigError(f"dataset has no column {name!r}") from None

    @property
    def theta0(self):
        return self.column("theta0")

    @property
    def grad0(self):
        return self.column("grad0")

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _round_scores(cfg: IrpConfig, trained, mask_i, xb, yb, i):
    if cfg.criterion == "magnitude":
        return criteria.magnitude_score(trained, mask_i).values
    if cfg.criterion == "snip":
        return criteria.snip_score(trained, mask_i, xb, yb, cfg.snip_variant).values
    if cfg.criterion == "grasp":
        return criteria.grasp_score(trained, mask_i, xb, yb).values
    return criteria.random_score(trained.k, derive_seed(cfg.seed, "irp-random", i)).values


def initial_gradient(theta0, dataset: data.LabeledDataset, cfg: IrpConfig, batch=None):
    if cfg.full_grad:
        return nn.full_gradient(theta0, None, dataset.features, dataset.labels)
    if batch is None:
        batch = data.balanced_batch(dataset, cfg.score_batch_size, derive_seed(cfg.seed, "score-batch"))
    return nn.backward(theta0, None, *batch)


def run_irp(specs, dataset: data.LabeledDataset, cfg: IrpConfig, theta0: nn.ParamVector | None = None,
            dtype=np.float32) -> AutoSDataset:
    """Generate a surviving-score dataset.

    ``theta0`` defaults to a Kaiming init seeded from ``cfg.seed``; pass one
    explicitly to run several IRPs from the same initialization.
    """
    if theta0 is None:
        theta0 = nn.kaiming_init(specs, derive_seed(cfg.seed, "init"), dtype)
    theta0_bytes = theta0.values.tobytes()
    eligible = masks.eligible_positions(theta0, cfg.include_bias)
    batch = data.balanced_batch(dataset, cfg.score_batch_size, derive_seed(cfg.seed, "score-batch"))
    grad0 = initial_gradient(theta0, dataset, cfg, batch)

    N = cfg.iterations
    mask_i = np.ones(theta0.k, dtype=np.uint8)
    survived = np.zeros(theta0.k, dtype=np.int64)
    history = [mask_i] if cfg.keep_masks else None
    for i in range(N):
        if cfg.criterion == "random":
            # random scores ignore the trained weights, so the training round is skipped
            trained = theta0
        else:
            hyper = replace(cfg.train_hyper, seed=derive_seed(cfg.seed, "irp-train", i))
            trained, _ = nn.train(theta0, mask_i, dataset.features, dataset.labels, hyper)
        scores = _round_scores(cfg, trained, mask_i, *batch, i)
        mask_i = masks.refine_mask(mask_i, scores, schedule_density(cfg.final_density, N, i + 1), eligible)
        survived += mask_i
        collapsed = [r.layer for r in masks.per_layer_report(mask_i, theta0, eligible, warn=False) if r.collapsed]
        if collapsed:
            log.warning("IRP iteration %d: layers %s collapsed", i + 1, collapsed)
        if history is not None:
            history.append(mask_i)
        log.info("IRP %s iteration %d/%d density %.4f", cfg.criterion, i + 1, N, masks.density(mask_i, eligible))
        # rewind: θ₀ is never written to; guard that invariant
        assert theta0.values.tobytes() == theta0_bytes

    labels = survived[eligible] / N
    feats = np.column_stack([theta0.values[eligible], grad0[eligible]]).astype(np.float64)
    header = {
        "source_model": nn.arch_string(specs),
        "source_data": dataset.name,
        "criterion": cfg.criterion,
        "iterations": N,
        "final_density": cfg.final_density,
        "seed": cfg.seed,
        "schedule": "geometric",
        "eligible_set": "all" if cfg.include_bias else "weights",
        "score_batch_size": cfg.score_batch_size,
        "grad0": "full" if cfg.full_grad else "balanced-batch",
        "snip_variant": cfg.snip_variant,
        "train_epochs": cfg.train_hyper.epochs,
        "feature_mean": feats.mean(axis=0).tolist(),
        "feature_std": feats.std(axis=0).tolist(),
        "sources": [],
    }
    out = AutoSDataset(feats, labels.astype(np.float64), FEATURE_COLUMNS, header,
                       np.array(history, dtype=np.uint8) if history is not None else None)
    out.header["sources"] = [_source_entry(out.header)]
    return out


def _source_entry(header):
    return {k: header[k] for k in ("source_model", "source_data", "criterion", "iterations",
                                   "final_density", "seed") if k in header}


def merge_datasets(datasets) -> AutoSDataset:
    """Concatenate records; labels are kept exactly as produced (no rescaling)."""
    datasets = list(datasets)
    if not datasets:
        raise MergeError("nothing to merge")
    cols = datasets[0].columns
    for d in datasets[1:]:
        if d.columns != cols:
            raise MergeError(f"feature columns differ: {cols} vs {d.columns}")
    feats = np.concatenate([d.features for d in datasets])
    labels = np.concatenate([d.labels for d in datasets])
    sources = [s for d in datasets for s in d.header.get("sources", [_source_entry(d.header)])]
    header = {
        "merged": len(datasets),
        "sources": sources,
        "criterion": "+".join(sorted({str(s.get("criterion")) for s in sources})),
        "iterations": "+".join(str(s.get("iterations")) for s in sources),
        "feature_mean": feats.mean(axis=0).tolist(),
        "feature_std": feats.std(axis=0).tolist(),
    }
    return AutoSDataset(feats, labels, cols, header)


def ccc_protocol(specs, dataset: data.LabeledDataset, pair, init_mode: str, seeds, base: IrpConfig,
                 dtype=np.float32) -> float:
    """Agreement (CCC) of the labels of two IRP runs.

    ``init_mode="same"`` shares the initialization drawn from ``seeds[0]``;
    ``"different"`` draws a fresh initialization per run.
    """
    if init_mode not in ("same", "different"):
        raise ConfigError(f"init_mode must be 'same' or 'different', got {init_mode!r}")
    crit_a, crit_b = pair
    seed_a, seed_b = seeds
    shared = nn.kaiming_init(specs, derive_seed(seed_a, "init"), dtype) if init_mode == "same" else None
    runs = []
    for crit, seed in ((crit_a, seed_a), (crit_b, seed_b)):
        cfg = replace(base, criterion=crit, seed=seed)
        runs.append(run_irp(specs, dataset, cfg, theta0=shared, dtype=dtype))
    return metrics.ccc(runs[0].labels, runs[1].labels)
