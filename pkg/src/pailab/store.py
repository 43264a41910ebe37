"""Binary checkpoints and the results CSV.

Checkpoint layout (all integers little-endian)::

    0   4 bytes   magic "ASPR"
    4   u16       format version (1)
    6   u8        payload kind: 1 params, 2 mask, 3 scorer, 4 autos_dataset
    7   u8        reserved, 0
    8   u32       metadata length M
    12  M bytes   metadata, UTF-8 JSON object
    ..  u32       array count
    per array:
        u16 name length, name (UTF-8)
        u8  dtype: 1 f32, 2 f64, 3 u8
        u8  ndim, then ndim x u64 shape
        raw little-endian data, prod(shape) * itemsize bytes

Nothing may follow the last array.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import (ConfigError, KindMismatchError, ParseError, StorageError,
                     TruncatedFileError, VersionError, WrongMagicError)
from .irp import AutoSDataset
from .mask import PruneMask
from .scorer import FeatureStats, ScorerModel

MAGIC = b"ASPR"
VERSION = 1
KINDS = {"params": 1, "mask": 2, "scorer": 3, "autos_dataset": 4}
KIND_NAMES = {v: k for k, v in KINDS.items()}
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("uint8"): 3}

RESULT_COLUMNS = ("criterion", "density", "sparsity", "seed", "accuracy", "loss", "epochs",
                  "wall_s", "eligible_set", "notes")


@dataclass
class Checkpoint:
    kind: str
    metadata: dict
    arrays: dict


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_checkpoint(path, kind: str, metadata: dict, arrays: dict) -> None:
    if kind not in KINDS:
        raise ConfigError(f"unknown payload kind {kind!r}")
    meta = json.dumps(metadata, default=_jsonable, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HBB", VERSION, KINDS[kind], 0), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in DTYPE_CODES:
            raise ConfigError(f"array {name!r}: dtype {arr.dtype} not storable (f32, f64, u8)")
        code = DTYPE_CODES[arr.dtype]
        raw = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        bname = name.encode("utf-8")
        parts += [struct.pack("<H", len(bname)), bname, struct.pack("<BB", code, arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), raw]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise TruncatedFileError(
                f"{self.path}: truncated, needed {end} bytes but file has {len(self.buf)}",
                expected=end, actual=len(self.buf),
            )
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path, kind: str | None = None) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise WrongMagicError(f"{path}: not a checkpoint (bad magic)")
    version, code, _ = r.unpack("<HBB")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported format version {version} (this build reads {VERSION})")
    if code not in KIND_NAMES:
        raise ParseError(f"{path}: unknown payload kind code {code}")
    found = KIND_NAMES[code]
    if kind is not None and found != kind:
        raise KindMismatchError(f"{path}: holds a {found!r} payload, {kind!r} requested")
    (mlen,) = r.unpack("<I")
    metadata = json.loads(r.take(mlen).decode("utf-8"))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        dcode, ndim = r.unpack("<BB")
        if dcode not in DTYPES:
            raise ParseError(f"{path}: array {name!r} has unknown dtype code {dcode}")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        dt = DTYPES[dcode]
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape).copy()
    if r.pos != len(buf):
        raise ParseError(f"{path}: {len(buf) - r.pos} trailing bytes after last array")
    return Checkpoint(found, metadata, arrays)


def _specs_meta(specs):
    return [[s.in_dim, s.out_dim, s.has_bias, s.activation] for s in specs]


def _specs_from(meta):
    return tuple(nn.LayerSpec(int(a), int(b), bool(c), str(d)) for a, b, c, d in meta)


def save(obj, path, metadata: dict | None = None) -> None:
    """Write any supported artifact; ``metadata`` lands beside the payload."""
    meta = dict(metadata or {})
    if isinstance(obj, nn.ParamVector):
        meta["payload"] = {"specs": _specs_meta(obj.specs)}
        write_checkpoint(path, "params", meta, {"values": obj.values})
    elif isinstance(obj, PruneMask):
        meta["payload"] = {"scope": obj.scope, "eligible_set": obj.eligible_set,
                           "specs": _specs_meta(obj.specs) if obj.specs else None}
        write_checkpoint(path, "mask", meta, {"bits": np.asarray(obj.bits, dtype=np.uint8)})
    elif isinstance(obj, ScorerModel):
        meta["payload"] = {"specs": _specs_meta(obj.params.specs), "mode": obj.mode, "header": obj.header}
        write_checkpoint(path, "scorer", meta, {"values": obj.params.values, "mean": obj.stats.mean,
                                                 "std": obj.stats.std})
    elif isinstance(obj, AutoSDataset):
        meta["payload"] = {"columns": list(obj.columns), "header": obj.header}
        arrays = {"features": obj.features, "labels": obj.labels}
        if obj.masks is not None:
            arrays["masks"] = obj.masks
        write_checkpoint(path, "autos_dataset", meta, arrays)
    else:
        raise ConfigError(f"cannot checkpoint a {type(obj).__name__}")


def load(path, kind: str):
    """Read an artifact of the requested kind; other kinds raise ``KindMismatchError``."""
    ck = read_checkpoint(path, kind)
    p = ck.metadata.get("payload", {})
    a = ck.arrays
    if kind == "params":
        return nn.ParamVector(a["values"], _specs_from(p["specs"]))
    if kind == "mask":
        specs = _specs_from(p["specs"]) if p.get("specs") else ()
        return PruneMask(a["bits"], p["scope"], p["eligible_set"], specs)
    if kind == "scorer":
        params = nn.ParamVector(a["values"], _specs_from(p["specs"]))
        return ScorerModel(params, p["mode"], FeatureStats(a["mean"], a["std"]), p["header"])
    return AutoSDataset(a["features"], a["labels"], tuple(p["columns"]), p["header"], a.get("masks"))


def metadata(path) -> dict:
    return read_checkpoint(path).metadata


# ---------------------------------------------------------------- results CSV


def report_row(rep) -> dict:
    return {
        "criterion": rep.criterion,
        "density": repr(float(rep.density)),
        "sparsity": repr(round(1.0 - float(rep.density), 12)),
        "seed": rep.seed,
        "accuracy": f"{rep.accuracy:.6f}",
        "loss": f"{rep.loss:.6f}",
        "epochs": rep.epochs,
        "wall_s": f"{rep.wall_s:.3f}",
        "eligible_set": rep.eligible_set,
        "notes": rep.notes,
    }


def write_results(rows, path, append: bool = True) -> None:
    """Write EvalReport rows under the fixed header; header only once per file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not append or not path.exists() or path.stat().st_size == 0
        with open(path, "w" if not append else "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
            if fresh:
                w.writeheader()
            for rep in rows:
                w.writerow(report_row(rep))
            f.flush()
            os.fsync(f.fileno())
    except OSError as exc:
        raise StorageError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
