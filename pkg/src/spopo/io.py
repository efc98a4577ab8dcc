"""Artifact persistence: atomic writes, CSV tables, JSON summaries and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


def atomic_write_bytes(path, data):
    """Write ``data`` to a temporary file in the target directory, then rename it into place."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return "" if x is None else str(x)


def write_csv(path, header, rows):
    """RFC-4180 CSV with a header row, CRLF line ends and round-trip float formatting."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    return x


def write_json(path, obj):
    """JSON with sorted keys; non-finite floats become the strings ``"inf"`` / ``"nan"``."""
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Record of one CLI run.

    Output files are listed with their SHA-256.  Wall time is stored only
    here, so the outputs of a seeded run are byte-identical across repeats.
    """

    subcommand: str
    config: dict
    seed: int | None = None
    version: str = ""
    wall_time_s: float = 0.0
    params: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add_output(self, path):
        self.outputs[os.path.basename(path)] = sha256_file(path)

    def to_dict(self):
        return {
            "tool": "spopo",
            "version": self.version,
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "params": self.params,
            "wall_time_s": self.wall_time_s,
            "outputs": dict(sorted(self.outputs.items())),
            **({"extra": self.extra} if self.extra else {}),
        }

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        write_json(path, self.to_dict())
        return path
