"""Deterministic CSV and JSON output.

Floats are written with ``repr`` (shortest round-trip form, '.' decimal,
locale independent).  Missing or undefined values are empty CSV cells and
JSON ``null``; NaN and infinities never reach a file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def clean(x):
    """Plain-Python, JSON-safe copy of ``x`` (non-finite floats become None)."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def format_cell(x) -> str:
    x = clean(x)
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        w.writerow([format_cell(c) for c in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(clean(obj), indent=2, allow_nan=False) + "\n"


def emit(text: str, path: Optional[str]) -> None:
    """Write ``text`` to ``path``, or to stdout when ``path`` is None or '-'."""
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


SCHEMAS = ("analyze", "sweep", "trajectory", "ensemble", "scaling", "multistage")


def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise KeyError(f"no schema {name!r}; known: {', '.join(SCHEMAS)}")
    text = resources.files("parahost.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)
