"""Readers for the experiment report files, with schema validation by column."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """The input file does not match the expected report schema."""


def _read_csv(path, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    lines = [ln for ln in path.read_text().split("\n") if ln]
    if not lines:
        raise SchemaError(f"{path}: empty file, expected a header row")
    cols = lines[0].split(",")
    for col in required:
        if col not in cols:
            raise SchemaError(f"{path}: missing column '{col}' (found {cols})")
    for col in cols:
        if col not in required and col not in optional:
            raise SchemaError(f"{path}: unexpected column '{col}'")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(cols):
            raise SchemaError(f"{path}: row {i} has {len(cells)} cells, expected {len(cols)}")
        rows.append([float(c) for c in cells])
    data = np.asarray(rows) if rows else np.empty((0, len(cols)))
    return {col: data[:, k] for k, col in enumerate(cols)}


def read_trace(path) -> dict:
    """Decay-trace CSV: t, mean_sq_dist, second moments, optional q_form."""
    return _read_csv(path, ("t", "mean_sq_dist", "second_moment_a", "second_moment_b"),
                     optional=("q_form",))


def read_poc(path) -> dict:
    """Scaling-table CSV: n, sup_gap, delta_d, ratio."""
    return _read_csv(path, ("n", "sup_gap", "delta_d", "ratio"))


def read_picard(path) -> dict:
    """Fixed-point history CSV: iter, step_w1, ratio."""
    return _read_csv(path, ("iter", "step_w1", "ratio"))


def read_summary(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise SchemaError(f"{path}: summary file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed summary JSON: {exc}") from None
