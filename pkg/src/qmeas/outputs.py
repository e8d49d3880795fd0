"""Deterministic result emission: delimited tables and JSON documents.

Every numeric table carries its provenance (scenario hash, grids,
tolerances) as '# key: value' comment lines above the header row.  Floats
are written with 17 significant digits so a re-ingested table compares
bitwise equal to the in-memory array; nothing here depends on wall-clock
time, so identical runs emit identical bytes.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Mapping, Sequence

import numpy as np


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence],
              provenance: Mapping | None = None) -> str:
    path = str(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(provenance or {}):
            fh.write(f"# {key}: {(provenance or {})[key]}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row of width {len(row)} against "
                                 f"{len(columns)} columns")
            fh.write(",".join(format_value(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """Provenance comments, column names, and the numeric body of a table."""
    provenance: dict = {}
    columns: list[str] = []
    body: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                provenance[key.strip()] = value.strip()
                continue
            if not columns:
                columns = line.split(",")
                continue
            body.append([float(p) for p in line.split(",")])
    data = np.array(body) if body else np.empty((0, len(columns)))
    return provenance, columns, data


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, payload) -> str:
    path = str(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
