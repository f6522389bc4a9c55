"""Small CSV helpers shared by the stage writers."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x: float) -> str:
    """Format a float with 17 significant digits (round-trips float64)."""
    return format(float(x), ".17g")


def write_matrix_csv(path: str | Path, header: Sequence, values: np.ndarray) -> None:
    """Write a square matrix: one header row of labels, then one row per matrix row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([str(h) for h in header])
        for row in np.asarray(values, dtype=float):
            w.writerow([fmt(v) for v in row])


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    values = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if values.size == 0:
        values = values.reshape(0, len(header))
    if values.shape != (len(header), len(header)):
        raise ValueError(f"{path}: expected a {len(header)}x{len(header)} matrix, got {values.shape}")
    return header, values


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
