"""Command-line harness.

Every subcommand accepts ``--config FILE`` plus one flag per configuration
key; see ``pailab <command> --help``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import irp, mask as masks, metrics, pipeline, store
from .config import FIELDS, ExperimentConfig, build_config, floats, read_config_file, words
from .errors import ConfigError, PaiLabError
from .scorer import train_scorer
from .seeds import derive_seed

log = logging.getLogger("pailab")

CCC_PAIRS = (("random", "random"), ("snip", "snip"), ("magnitude", "magnitude"), ("grasp", "grasp"),
             ("random", "magnitude"), ("random", "grasp"), ("random", "snip"), ("snip", "magnitude"),
             ("snip", "grasp"), ("magnitude", "grasp"))
SHORT = {"random": "Random", "snip": "SNIP", "magnitude": "Mag", "grasp": "GraSP"}


def _emit(obj):
    print(json.dumps(obj, default=str, sort_keys=True))


def _out(cfg: ExperimentConfig, default_name: str) -> Path:
    return Path(cfg.output) if cfg.output else Path(cfg.out_dir) / default_name


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.config_hash(), "config": cfg.to_dict(), **extra}


def _density_fields(d: float) -> dict:
    return {"density": d, "sparsity": round(1.0 - d, 12)}


def _eligible_name(cfg):
    return "all" if cfg.include_bias else "weights"


# ---------------------------------------------------------------- commands


def cmd_gen_dataset(cfg: ExperimentConfig):
    train, _ = cfg.load_data()
    ds = irp.run_irp(cfg.specs(), train, cfg.irp_config(), dtype=cfg.np_dtype())
    ds.header["config_hash"] = cfg.config_hash()
    path = _out(cfg, f"autos_{cfg.irp_criterion}_N{cfg.iterations}.aspr")
    store.save(ds, path, _meta(cfg))
    _emit({"command": "gen-dataset", "path": str(path), "records": len(ds), "checksum": ds.checksum(),
           "criterion": ds.header["criterion"], "iterations": ds.header["iterations"],
           "final_density": ds.header["final_density"], "config_hash": cfg.config_hash()})


def cmd_train_scorer(cfg: ExperimentConfig):
    paths = words(cfg.dataset_path)
    if not paths:
        raise ConfigError("train-scorer needs --dataset_path")
    parts = [store.load(p, "autos_dataset") for p in paths]
    ds = parts[0] if len(parts) == 1 else irp.merge_datasets(parts)
    model = train_scorer(ds, cfg.feature_mode, cfg.scorer_hyper(), cfg.np_dtype())
    model.header["config_hash"] = cfg.config_hash()
    path = _out(cfg, f"scorer_{cfg.feature_mode}.aspr")
    store.save(model, path, _meta(cfg))
    h = model.header
    _emit({"command": "train-scorer", "path": str(path), "records": len(ds), "feature_mode": model.mode,
           "learning_rate": h["learning_rate"], "batch_size": h["batch_size"], "epochs": h["epochs"],
           "train_mse": h["train_mse"], "config_hash": cfg.config_hash()})


def _load_scorer(cfg):
    if cfg.criterion != "autos":
        return None
    if not cfg.scorer_path:
        raise ConfigError("criterion autos needs --scorer_path")
    return store.load(cfg.scorer_path, "scorer")


def cmd_prune(cfg: ExperimentConfig):
    train, _ = cfg.load_data()
    specs = cfg.specs()
    m, theta0 = pipeline.make_mask(cfg.criterion, specs, train, cfg.density, cfg.seed,
                                   cfg.prune_options(), _load_scorer(cfg), cfg.np_dtype())
    eligible = masks.eligible_positions(theta0, cfg.include_bias)
    out = Path(cfg.output) if cfg.output else Path(cfg.out_dir)
    meta = _meta(cfg, criterion=cfg.criterion, seed=cfg.seed, snip_variant=cfg.snip_variant,
                 eligible_set=_eligible_name(cfg), **_density_fields(cfg.density))
    store.save(theta0, out / "theta0.aspr", meta)
    store.save(masks.PruneMask(m, cfg.scope, _eligible_name(cfg), specs), out / "mask.aspr", meta)
    report = masks.per_layer_report(m, theta0, eligible)
    achieved = masks.density(m, eligible)
    _emit({"command": "prune", "criterion": cfg.criterion, "requested": _density_fields(cfg.density),
           "achieved": _density_fields(achieved), "kept": int(m[eligible].sum()),
           "eligible": int(eligible.sum()), "eligible_set": _eligible_name(cfg),
           "per_layer": [[r.layer, r.kept, r.total] for r in report],
           "collapsed_layers": [r.layer for r in report if r.collapsed],
           "out": str(out), "config_hash": cfg.config_hash()})


def _load_pair(cfg, default_params):
    out = Path(cfg.out_dir)
    params = store.load(cfg.params_path or out / default_params, "params")
    mask_path = cfg.mask_path or out / "mask.aspr"
    pm = store.load(mask_path, "mask")
    return params, pm, store.metadata(mask_path)


def cmd_train(cfg: ExperimentConfig):
    train, _ = cfg.load_data()
    params, pm, meta = _load_pair(cfg, "theta0.aspr")
    trained, history = pipeline.train_masked(params, pm.bits, train, cfg.train_hyper(), cfg.seed)
    path = _out(cfg, "trained.aspr")
    store.save(trained, path, _meta(cfg, criterion=meta.get("criterion"), history=history))
    _emit({"command": "train", "path": str(path), "history": history, "config_hash": cfg.config_hash()})


def cmd_eval(cfg: ExperimentConfig):
    _, test = cfg.load_data()
    params, pm, meta = _load_pair(cfg, "trained.aspr")
    eligible = masks.eligible_positions(params, pm.eligible_set == "all")
    crit = meta.get("criterion", cfg.criterion)
    rep = metrics.evaluate(params, pm.bits, test, crit, masks.density(pm.bits, eligible), cfg.seed,
                           epochs=cfg.epochs, eligible_set=pm.eligible_set,
                           notes=f"config={cfg.config_hash()}")
    results = Path(cfg.results) if cfg.results else Path(cfg.out_dir) / "results.csv"
    store.write_results([rep], results)
    _emit({"command": "eval", "results": str(results), **store.report_row(rep)})


def _pairs(cfg):
    if not cfg.ccc_pairs:
        return list(CCC_PAIRS)
    out = []
    for item in words(cfg.ccc_pairs):
        a, _, b = item.partition(":")
        if not b:
            raise ConfigError(f"ccc pair {item!r} must look like snip:grasp")
        out.append((a, b))
    return out


def ccc_table(cfg: ExperimentConfig, train):
    base = cfg.irp_config()
    rows = []
    for pair in _pairs(cfg):
        cell = {"pair": f"{SHORT.get(pair[0], pair[0])} & {SHORT.get(pair[1], pair[1])}"}
        for mode in ("same", "different"):
            vals = []
            for j in range(cfg.ccc_seed_pairs):
                sa = derive_seed(cfg.seed, "ccc-a", j)
                sb = sa if cfg.ccc_same_seed else derive_seed(cfg.seed, "ccc-b", j)
                vals.append(irp.ccc_protocol(cfg.specs(), train, pair, mode, (sa, sb), base, cfg.np_dtype()))
            cell[f"{mode}_init"] = float(np.mean(vals))
        rows.append(cell)
    return rows


def cmd_ccc(cfg: ExperimentConfig):
    train, _ = cfg.load_data()
    rows = ccc_table(cfg, train)
    path = _out(cfg, "ccc.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# config={cfg.config_hash()}\nmethods,same_init,different_init\n")
        for r in rows:
            f.write(f"{r['pair']},{r['same_init']:.5f},{r['different_init']:.5f}\n")
    print(f"{'Methods':<22}{'Same Init.':>12}{'Different Init.':>18}")
    for r in rows:
        print(f"{r['pair']:<22}{r['same_init']:>12.5f}{r['different_init']:>18.5f}")
    _emit({"command": "ccc", "path": str(path), "rows": rows, "config_hash": cfg.config_hash()})


_WORKER_CACHE: dict = {}


def sweep_points(cfg: ExperimentConfig):
    """(criterion, density, seed) grid; seeds depend only on the seed index."""
    seeds = [derive_seed(cfg.seed, "sweep-seed", i) for i in range(cfg.n_seeds)]
    return [(c, d, s) for c in words(cfg.criteria) for d in floats(cfg.densities) for s in seeds]


def _sweep_job(cfg_dict, criterion, density, seed):
    cfg = ExperimentConfig(**cfg_dict)
    key = cfg.config_hash()
    if key not in _WORKER_CACHE:
        _WORKER_CACHE.clear()
        _WORKER_CACHE[key] = (cfg.load_data(), _load_scorer(replace(cfg, criterion="autos"))
                              if cfg.scorer_path else None)
    (train, test), model = _WORKER_CACHE[key]
    return pipeline.run_point(criterion, cfg.specs(), train, test, density, seed, cfg.train_hyper(),
                              cfg.prune_options(), model, cfg.np_dtype(), notes=f"config={cfg.config_hash()}")


def _point_key(criterion, density, seed):
    return (criterion, round(float(density), 12), int(seed))


def cmd_sweep(cfg: ExperimentConfig):
    results = Path(cfg.results) if cfg.results else Path(cfg.out_dir) / "sweep.csv"
    done = {_point_key(r["criterion"], r["density"], r["seed"]) for r in store.read_results(results)}
    todo = [p for p in sweep_points(cfg) if _point_key(*p) not in done]
    log.info("sweep: %d points, %d already done", len(todo) + len(done), len(done))
    cfg_dict = cfg.to_dict()
    written = 0

    def _record(rep, density):
        nonlocal written
        rep.density = density  # requested density keys the resume check
        store.write_results([rep], results)
        written += 1

    if cfg.workers <= 1:
        for c, d, s in todo:
            _record(_sweep_job(cfg_dict, c, d, s), d)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = {pool.submit(_sweep_job, cfg_dict, c, d, s): d for c, d, s in todo}
            for fut in as_completed(futs):
                _record(fut.result(), futs[fut])
    _emit({"command": "sweep", "results": str(results), "new_rows": written, "skipped": len(done),
           "config_hash": cfg.config_hash()})


COMMANDS = {
    "gen-dataset": (cmd_gen_dataset, "run iterative rewind pruning and write a surviving-score dataset"),
    "train-scorer": (cmd_train_scorer, "train the learned scorer on one or more datasets"),
    "prune": (cmd_prune, "prune a fresh initialization with a criterion"),
    "train": (cmd_train, "train a pruned network"),
    "eval": (cmd_eval, "evaluate a trained network and append to the results CSV"),
    "ccc": (cmd_ccc, "score-consistency table over criterion pairs and init modes"),
    "sweep": (cmd_sweep, "criteria x densities x seeds, resumable"),
}


# ---------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config file (INI sections, same key names as the flags)")
    p.add_argument("--sparsity", type=float, help="alias: sets density = 1 - sparsity")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    groups = {}
    for f in fields(ExperimentConfig):
        sec = f.metadata["section"]
        g = groups.setdefault(sec, p.add_argument_group(f"[{sec}]"))
        default = f.default
        help_text = f"{f.metadata['help']} (default: {default!r})".replace("%", "%%")
        if f.type in ("bool", bool):
            g.add_argument(f"--{f.name}", nargs="?", const="true", default=None, metavar="BOOL", help=help_text)
        else:
            g.add_argument(f"--{f.name}", default=None, metavar=f.name.upper(), help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pailab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        _add_config_flags(sub.add_parser(name, help=help_text, description=help_text))
    return parser


def config_from_args(args) -> ExperimentConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in FIELDS if getattr(args, k, None) is not None}
    if args.sparsity is not None:
        if "density" in overrides:
            raise ConfigError("give --density or --sparsity, not both")
        overrides["density"] = repr(round(1.0 - args.sparsity, 12))
    return build_config(file_values, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command][0](cfg)
    except PaiLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
