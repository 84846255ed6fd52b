"""File formats: JSON documents, CSV tables, matrix files and run configs.

Matrix files are CSV with a header line ``# rows cols`` followed by one
comma-separated row of doubles per line (``.npy`` files are also accepted).
Floats in CSV are written with 17 significant digits, ``.`` as the decimal
separator.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import numpy as np

from .attention import HeadSpec, LayerSpec, LinearHead, SoftmaxHead
from .drift import EventBlock, RunConfig
from .envelopes import EventSchedule
from .errors import AnchorError
from .operators import AffineSet, operator_from_dict


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_table(path, header, rows, fmt_kind="csv"):
    """Write rows as CSV (``fmt_kind="csv"``) or as a JSON list of records."""
    rows = [list(r) for r in rows]
    if fmt_kind == "json":
        path = os.path.splitext(path)[0] + ".json"
        records = [dict(zip(header, (_jsonable(v) for v in r))) for r in rows]
        write_json(path, records)
        return path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return path


def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def save_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"# {M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def load_matrix(path):
    if str(path).endswith(".npy"):
        return np.atleast_2d(np.load(path))
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise AnchorError(f"{path}: matrix file must start with '# rows cols'")
        rows, cols = (int(t) for t in header[1:].split())
        data = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    M = np.array(data, dtype=np.float64).reshape(len(data), -1) if data else np.zeros((0, cols))
    if M.shape != (rows, cols):
        raise AnchorError(f"{path}: header says {rows}x{cols}, data is {M.shape[0]}x{M.shape[1]}")
    return M


def resolve_matrix(value, base_dir="."):
    """A matrix given inline (nested lists) or as a path relative to ``base_dir``."""
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(base_dir, value)
        return load_matrix(path)
    return np.atleast_2d(np.asarray(value, dtype=np.float64))


# Run configurations ----------------------------------------------------------------

def run_config_from_dict(doc):
    schedule = EventSchedule(tuple(doc.get("event_times", [])), int(doc["horizon"]))
    if "drifts" in doc:
        drifts = [operator_from_dict(d) for d in doc["drifts"]]
    else:
        drifts = operator_from_dict(doc["drift"])
    blocks = [
        EventBlock(
            AffineSet.from_dict(b["anchor"]),
            [operator_from_dict(m) for m in b.get("intra_maps", [])],
        )
        for b in doc.get("blocks", [])
    ]
    return RunConfig(
        drifts, schedule, blocks, doc["x0"], doc["z"], bool(doc.get("record_local_moduli", True))
    )


# Attention manifests -----------------------------------------------------------------

def head_map_from_dict(doc, base_dir="."):
    kind = doc.get("kind", "linear")
    if kind == "linear":
        return LinearHead(resolve_matrix(doc["matrix"], base_dir))
    if kind == "softmax":
        return SoftmaxHead(
            resolve_matrix(doc["Q"], base_dir),
            resolve_matrix(doc["K"], base_dir),
            resolve_matrix(doc["V"], base_dir),
            float(doc.get("beta", 1.0)),
        )
    raise AnchorError(f"unknown head map kind {kind!r}")


def layer_from_manifest(doc, base_dir="."):
    heads = []
    for h in doc["heads"]:
        P = resolve_matrix(h["projector"], base_dir)
        head_map = head_map_from_dict(h["head_map"], base_dir) if "head_map" in h else None
        heads.append(HeadSpec(P, head_map, h.get("modulus_bound")))
    return LayerSpec(heads, resolve_matrix(doc["output_map"], base_dir))


def inline_manifest(doc, base_dir="."):
    """Copy of a manifest with every matrix file reference replaced by its contents."""
    def inline(value):
        return resolve_matrix(value, base_dir).tolist() if isinstance(value, str) else value

    out = dict(doc)
    out["output_map"] = inline(doc["output_map"])
    heads = []
    for h in doc["heads"]:
        h = dict(h)
        h["projector"] = inline(h["projector"])
        if "head_map" in h:
            hm = dict(h["head_map"])
            for key in ("matrix", "Q", "K", "V"):
                if key in hm:
                    hm[key] = inline(hm[key])
            h["head_map"] = hm
        heads.append(h)
    out["heads"] = heads
    return out
