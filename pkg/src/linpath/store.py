"""On-disk formats: JSON checkpoints, run records, path CSVs and comparison tables.

Every file carries the tool version, the producing config digest and the seed.
Floats are written with ``repr`` (shortest exact round-trip), so save -> load ->
save reproduces the same bytes. Writes go to a temporary file that is renamed
into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .interp import InterpPath, PathShape, ShapeTolerances
from .nn import LayerSelector, ModelSpec, ParamState

CHECKPOINT_FORMAT = "linpath-checkpoint"
CHECKPOINT_VERSION = 1
RECORD_FORMAT = "linpath-run"
RECORD_VERSION = 1


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=True) + "\n"


def _clean(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# -- checkpoints -------------------------------------------------------------

def checkpoint_dict(params: ParamState, config_digest: str = "", seed: int | None = None,
                    epoch: int | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tool_version": __version__,
        "config_digest": config_digest,
        "seed": seed,
        "epoch": epoch,
        "model": params.spec.to_dict(),
        "spec_hash": params.spec_hash,
        "digest": params.digest(),
        "layout": "row-major float64",
        "params": [
            {"layer": layer, "name": name, "shape": list(arr.shape),
             "values": [float(v) for v in arr.ravel(order="C")]}
            for layer, name, arr in params.entries()
        ],
    }


def save_checkpoint(path: str | Path, params: ParamState, config_digest: str = "",
                    seed: int | None = None, epoch: int | None = None) -> Path:
    return atomic_write(path, dumps(checkpoint_dict(params, config_digest, seed, epoch)))


def checkpoint_from_dict(doc: dict) -> ParamState:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a checkpoint file (format field missing or wrong)")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    spec = ModelSpec.from_dict(doc["model"])
    arrays = {}
    for entry in doc["params"]:
        shape = tuple(entry["shape"])
        arrays[(int(entry["layer"]), entry["name"])] = np.array(entry["values"], dtype=np.float64).reshape(shape)
    return ParamState(spec, arrays)


def load_checkpoint(path: str | Path) -> tuple[ParamState, dict]:
    doc = json.loads(Path(path).read_text())
    params = checkpoint_from_dict(doc)
    meta = {k: doc.get(k) for k in ("tool_version", "config_digest", "seed", "epoch")}
    return params, meta


# -- interpolation paths -----------------------------------------------------

PATH_COLUMNS = ("alpha", "loss", "accuracy")


def path_csv(path: InterpPath, shape: PathShape | None = None, config_digest: str = "",
             seed: int | None = None, label: str = "") -> str:
    buf = io.StringIO()
    meta = [
        ("tool", f"linpath {__version__}"),
        ("config_digest", config_digest),
        ("seed", "" if seed is None else str(seed)),
        ("label", label),
        ("selector", path.varied.label()),
        ("endpoints", ",".join(path.endpoints)),
        ("split", path.split),
    ]
    if shape is not None:
        t = shape.tolerances
        meta.append(("tolerances", f"rise={t.rise!r},plateau={t.plateau!r},span={t.plateau_span!r}"))
        meta.append(("shape", json.dumps(shape.to_dict(), sort_keys=True)))
    for k, v in meta:
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PATH_COLUMNS)
    for a, l, acc in zip(path.alphas, path.losses, path.accuracies):
        w.writerow([repr(float(a)), repr(float(l)), repr(float(acc))])
    return buf.getvalue()


def save_path_csv(file: str | Path, path: InterpPath, shape: PathShape | None = None, **meta) -> Path:
    return atomic_write(file, path_csv(path, shape, **meta))


def read_path_csv(file: str | Path) -> tuple[InterpPath, dict]:
    meta: dict[str, str] = {}
    rows = []
    with open(file, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            else:
                body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != PATH_COLUMNS:
        raise ValueError(f"{file}: expected columns {PATH_COLUMNS}, got {header}")
    for r in reader:
        if r:
            rows.append([float(v) for v in r])
    arr = np.array(rows)
    endpoints = tuple(meta.get("endpoints", ",").split(",")[:2])
    if len(endpoints) < 2:
        endpoints = (endpoints[0] if endpoints else "", "")
    sel = LayerSelector.parse(meta["selector"]) if meta.get("selector") else LayerSelector.all()
    path = InterpPath(arr[:, 0].tolist(), arr[:, 1].tolist(), arr[:, 2].tolist(), sel,
                      endpoints, meta.get("split", "test"))
    return path, meta


def shape_dict(shape: PathShape, **meta) -> dict:
    return {"tool_version": __version__, **meta, **shape.to_dict()}


def tolerances_from_dict(d: dict) -> ShapeTolerances:
    return ShapeTolerances(**d)


# -- generic JSON / CSV ------------------------------------------------------

def save_json(path: str | Path, obj) -> Path:
    return atomic_write(path, dumps(_clean(obj)))


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return "" if v is None else str(v)


def table_csv(rows: Iterable[dict], columns: list[str], meta: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def text_table(rows: list[dict], columns: list[str], floatfmt: str = "{:.4f}") -> str:
    def cell(v):
        if isinstance(v, float):
            return "" if math.isnan(v) else floatfmt.format(v)
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(columns)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
