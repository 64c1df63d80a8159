"""JSON reports and CSV plot data.

Reports are deterministic: keys are sorted, floats use ``repr`` and nothing
time- or host-dependent is recorded, so an identical configuration produces a
byte-identical file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import asdict, is_dataclass
from importlib import metadata

import numpy as np

SCHEMA_VERSION = 1

__all__ = ["SCHEMA_VERSION", "to_jsonable", "build_report", "dumps", "write_report", "write_csv"]


def _package_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def to_jsonable(obj):
    """Convert numpy values, tuples and dataclasses into JSON-ready structures.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def build_report(command, passed, result, provenance):
    """Versioned report envelope."""
    prov = dict(provenance)
    prov.setdefault("package", "dichotomy_lab")
    prov.setdefault("version", _package_version())
    return {
        "schema": SCHEMA_VERSION,
        "command": command,
        "pass": bool(passed),
        "provenance": prov,
        "result": result,
    }


def dumps(report):
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report, path=None):
    """Write the JSON report to ``path`` or standard output."""
    text = dumps(report)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def write_csv(path, header, rows):
    """Comma-separated file with a header row and ``.`` decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
