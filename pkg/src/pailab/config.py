"""Experiment configuration: INI-style file with sections, every key
overridable by a CLI flag of the same name (flag > file > default).
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import data, irp, nn
from .errors import ConfigError
from .pipeline import PruneOptions
from .scorer import ScorerHyper
from .seeds import derive_seed


def _f(default, section, help):
    return field(default=default, metadata={"section": section, "help": help})


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    arch: str = _f("784-300-100-10", "model", "MLP widths, input to logits")
    include_bias: bool = _f(False, "model", "let biases be pruned too")
    dtype: str = _f("float32", "model", "float32 or float64")
    # data
    dataset: str = _f("mnist", "data", "mnist or blobs")
    data_dir: str = _f("", "data", f"MNIST IDX directory (falls back to ${data.DATA_DIR_ENV}, then ./data/mnist)")
    train_subset: int = _f(0, "data", "use only the first N training examples (0 = all)")
    blob_classes: int = _f(10, "data", "synthetic blobs: classes")
    blob_per_class: int = _f(200, "data", "synthetic blobs: examples per class")
    blob_dim: int = _f(20, "data", "synthetic blobs: feature width")
    blob_separation: float = _f(6.0, "data", "synthetic blobs: centre separation in noise stds")
    # prune
    criterion: str = _f("snip", "prune", "random|magnitude|snip|grasp|npb|autos")
    density: float = _f(0.05, "prune", "fraction of eligible weights kept (sparsity = 1 - density)")
    scope: str = _f("global", "prune", "global or per-layer")
    snip_variant: str = _f("grad_only", "prune", "grad_only (|g|) or weight_times_grad (|θ·g|)")
    grasp_keep_high: bool = _f(False, "prune", "flip the GraSP ranking")
    npb_alpha: float = _f(0.5, "prune", "NPB-lite node/path mixing weight")
    npb_rounds: int = _f(10, "prune", "NPB-lite pruning rounds")
    score_batch_size: int = _f(512, "prune", "class-balanced batch for gradients at init")
    scorer_path: str = _f("", "prune", "trained scorer checkpoint (criterion autos)")
    # irp
    irp_criterion: str = _f("snip", "irp", "magnitude|snip|grasp|random")
    iterations: int = _f(20, "irp", "rewind-pruning rounds N")
    final_density: float = _f(0.01, "irp", "density after the last round")
    irp_epochs: int = _f(5, "irp", "training epochs per round")
    full_grad: bool = _f(False, "irp", "initial gradient over the full training set")
    keep_masks: bool = _f(False, "irp", "store per-round masks in the dataset")
    # scorer
    feature_mode: str = _f("param_and_grad", "scorer", "param_only|grad_only|param_and_grad")
    scorer_lr: float = _f(0.01, "scorer", "Adam learning rate")
    scorer_batch_size: int = _f(1024, "scorer", "minibatch size")
    scorer_epochs: int = _f(10, "scorer", "epochs")
    scorer_hidden: str = _f("64,64", "scorer", "hidden widths")
    dataset_path: str = _f("", "scorer", "AutoS dataset checkpoint(s), comma separated (merged)")
    # train
    optimizer: str = _f("adam", "train", "adam or momentum-sgd")
    lr: float = _f(1.2e-3, "train", "learning rate")
    batch_size: int = _f(128, "train", "minibatch size")
    epochs: int = _f(5, "train", "epochs of post-pruning training")
    weight_decay: float = _f(5e-4, "train", "decoupled weight decay on weights")
    lr_drop_factor: float = _f(0.2, "train", "step LR multiplier")
    lr_drop_epochs: str = _f("60,120", "train", "epochs where the LR drops")
    # run
    seed: int = _f(0, "run", "master seed")
    out_dir: str = _f("runs", "run", "output directory")
    output: str = _f("", "run", "explicit output path for the command's main artifact")
    params_path: str = _f("", "run", "parameter checkpoint input (train/eval)")
    mask_path: str = _f("", "run", "mask checkpoint input (train/eval)")
    results: str = _f("", "run", "results CSV (default <out_dir>/results.csv)")
    full_scale: bool = _f(False, "run", "full-length schedules (long running)")
    # ccc
    ccc_pairs: str = _f("", "ccc", "criterion pairs like snip:snip,random:magnitude (default: 10 pairs)")
    ccc_seed_pairs: int = _f(1, "ccc", "seed pairs per cell (mean reported)")
    ccc_same_seed: bool = _f(False, "ccc", "give both runs of a pair the same seed (sanity check)")
    # sweep
    densities: str = _f("0.1,0.05,0.01", "sweep", "densities to sweep")
    criteria: str = _f("random,magnitude,snip", "sweep", "criteria to sweep")
    n_seeds: int = _f(3, "sweep", "seeds per point")
    workers: int = _f(1, "sweep", "parallel worker processes")

    # ---------------------------------------------------------- derived

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return np.dtype(self.dtype)

    def specs(self):
        return nn.parse_arch(self.arch)

    def train_hyper(self, epochs: int | None = None) -> nn.TrainHyper:
        return nn.TrainHyper(self.optimizer, self.lr, self.batch_size,
                             self.epochs if epochs is None else epochs, self.weight_decay,
                             self.lr_drop_factor, _ints(self.lr_drop_epochs), seed=self.seed)

    def irp_config(self) -> irp.IrpConfig:
        return irp.IrpConfig(self.irp_criterion, self.iterations, self.final_density,
                             self.train_hyper(self.irp_epochs), derive_seed(self.seed, "irp"),
                             self.score_batch_size, self.snip_variant, self.include_bias,
                             self.full_grad, self.keep_masks)

    def scorer_hyper(self) -> ScorerHyper:
        return ScorerHyper(self.scorer_lr, self.scorer_batch_size, self.scorer_epochs,
                           derive_seed(self.seed, "scorer"), tuple(_ints(self.scorer_hidden)))

    def prune_options(self) -> PruneOptions:
        return PruneOptions(self.score_batch_size, self.snip_variant, self.grasp_keep_high,
                            self.npb_alpha, self.npb_rounds, self.scope, self.include_bias)

    def load_data(self):
        """(train, test) datasets."""
        if self.dataset == "mnist":
            d = self.data_dir or None
            train = data.load_mnist_split("train", d).head(self.train_subset)
            return train, data.load_mnist_split("test", d)
        if self.dataset == "blobs":
            full = data.synth_blobs(self.blob_classes, self.blob_per_class, self.blob_dim,
                                    self.blob_separation, derive_seed(self.seed, "blobs"))
            cut = int(0.8 * len(full))
            train = full.subset(np.arange(cut), "blobs-train").head(self.train_subset)
            return train, full.subset(np.arange(cut, len(full)), "blobs-test")
        raise ConfigError(f"unknown dataset {self.dataset!r}")


FULL_SCALE = {"epochs": 100, "irp_epochs": 100, "iterations": 20, "final_density": 0.01}


def _ints(s) -> list[int]:
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).replace(";", ",").split(",") if v.strip()]


def floats(s) -> list[float]:
    return [float(v) for v in str(s).split(",") if v.strip()]


def words(s) -> list[str]:
    return [v.strip() for v in str(s).split(",") if v.strip()]


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def coerce(name: str, value):
    f = FIELDS[name]
    if isinstance(value, str):
        if f.type in ("bool", bool):
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ConfigError(f"{name}: expected a boolean, got {value!r}")
            return low in ("1", "true", "yes", "on")
        try:
            if f.type in ("int", int):
                return int(value)
            if f.type in ("float", float):
                return float(value)
        except ValueError as exc:
            raise ConfigError(f"{name}: cannot parse {value!r}") from exc
    return value


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = key.replace("-", "_")
            if name not in FIELDS:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            if FIELDS[name].metadata["section"] != section:
                raise ConfigError(f"{path}: key {key!r} belongs in [{FIELDS[name].metadata['section']}]")
            values[name] = coerce(name, raw)
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = dict(file_values or {})
    full = (overrides or {}).get("full_scale", values.get("full_scale", False))
    if full:
        for k, v in FULL_SCALE.items():
            values.setdefault(k, v)
    values.update({k: coerce(k, v) for k, v in (overrides or {}).items() if v is not None})
    cfg = replace(ExperimentConfig(), **values)
    if not 0 < cfg.density <= 1:
        raise ConfigError(f"density must be in (0, 1], got {cfg.density}")
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` in the file format accepted by ``read_config_file``."""
    by_section: dict = {}
    for f in fields(cfg):
        by_section.setdefault(f.metadata["section"], []).append(f)
    out = []
    for section, fs in by_section.items():
        out.append(f"[{section}]")
        for f in fs:
            v = getattr(cfg, f.name)
            out.append(f"# {f.metadata['help']}")
            out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        out.append("")
    return "\n".join(out)
