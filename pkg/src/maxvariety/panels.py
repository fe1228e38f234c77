"""Return panels and their CSV round trip.

A panel is an m x N matrix with one row per asset and one column per
observation, plus asset labels and per-observation timestamps.  The CSV
layout has observations as rows (header ``t,<label>,<label>,...``) or,
when ``orient="rows"``, assets as rows (header ``asset,<t>,<t>,...``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, ParameterError


@dataclass
class ReturnsPanel:
    """Asset returns, one row per asset and one column per observation."""

    values: np.ndarray
    labels: list[str] = field(default_factory=list)
    timestamps: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ParameterError("returns panel must be a 2-d array")
        m, n = self.values.shape
        if not self.labels:
            self.labels = [f"A{i:03d}" for i in range(m)]
        if not self.timestamps:
            self.timestamps = [str(t) for t in range(n)]
        if len(self.labels) != m:
            raise ParameterError(
                f"{len(self.labels)} labels for {m} assets")
        if len(self.timestamps) != n:
            raise ParameterError(
                f"{len(self.timestamps)} timestamps for {n} observations")

    @property
    def n_assets(self) -> int:
        return self.values.shape[0]

    @property
    def n_obs(self) -> int:
        return self.values.shape[1]


def save_returns_csv(panel: ReturnsPanel, path, orient: str = "columns") -> None:
    """Write a panel to CSV with assets as columns (default) or rows."""
    if orient not in ("columns", "rows"):
        raise ParameterError(f"unknown orient {orient!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if orient == "columns":
            writer.writerow(["t"] + list(panel.labels))
            for j, stamp in enumerate(panel.timestamps):
                writer.writerow([stamp] + [repr(float(v)) for v in panel.values[:, j]])
        else:
            writer.writerow(["asset"] + list(panel.timestamps))
            for i, label in enumerate(panel.labels):
                writer.writerow([label] + [repr(float(v)) for v in panel.values[i, :]])


def load_returns_csv(path, orient: str = "columns") -> ReturnsPanel:
    """Read a panel written by :func:`save_returns_csv`.

    Raises :class:`IngestionError` naming the offending row and column when a
    cell is missing or not numeric.
    """
    if orient not in ("columns", "rows"):
        raise ParameterError(f"unknown orient {orient!r}")
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read returns file {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise IngestionError(f"{path}: missing header row")
    header = rows[0]
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path}: no observations")
    width = len(header)
    cells = np.empty((len(body), width - 1), dtype=float)
    keys = []
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise IngestionError(
                f"{path}: row {r} has {len(row)} fields, expected {width}")
        keys.append(row[0])
        for c, text in enumerate(row[1:], start=2):
            try:
                cells[r - 2, c - 2] = float(text)
            except ValueError as exc:
                raise IngestionError(
                    f"{path}: row {r}, column {c} ({header[c - 1]!r}): "
                    f"not a number: {text!r}") from exc
    if orient == "columns":
        return ReturnsPanel(cells.T, labels=header[1:], timestamps=keys)
    return ReturnsPanel(cells, labels=keys, timestamps=header[1:])
