"""Simulated noisy labeling measurements and their CSV file format.

Each observation is ``truth + N(0, (relative_sd * truth)^2)``; values are not
clipped, so heavy noise near zero can produce small negative proportions.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .compiler import ScaledModel
from .simulate import default_t_max, solve_exact

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    relative_sd: float = 0.025
    replicates: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (self.relative_sd >= 0 and math.isfinite(self.relative_sd)):
            raise ValueError(f"relative_sd must be a nonnegative number, got {self.relative_sd}")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ValueError(f"replicates must be a positive integer, got {self.replicates}")


@dataclass(frozen=True)
class Dataset:
    nodes: tuple[str, ...]
    times: np.ndarray
    measurements: np.ndarray  # T x N x replicates
    noise: Optional[NoiseSpec] = None
    truth: Optional[ScaledModel] = field(default=None, compare=False)
    flags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).reshape(-1))
        meas = np.asarray(self.measurements, dtype=float)
        if meas.ndim != 3 or meas.shape[:2] != (len(self.times), len(self.nodes)):
            raise ValueError(f"measurements must be T x N x R, got {meas.shape}")
        object.__setattr__(self, "measurements", meas)

    @property
    def n_replicates(self) -> int:
        return self.measurements.shape[2]

    @property
    def n_observations(self) -> int:
        return self.measurements.size

    def restrict(self, time_mask) -> "Dataset":
        mask = np.asarray(time_mask, dtype=bool)
        return Dataset(self.nodes, self.times[mask], self.measurements[mask],
                       self.noise, self.truth, self.flags)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.nodes == other.nodes
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.measurements, other.measurements))

    __hash__ = None


def evenly_spaced_times(n_timepoints: int, t_max: float) -> np.ndarray:
    """n points ending at t_max, spaced t_max / n apart; t = 0 is left out."""
    if n_timepoints < 1:
        raise ValueError("need at least one time point")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    return t_max * np.arange(1, n_timepoints + 1) / n_timepoints


def gen_dataset(m: ScaledModel, n_timepoints: int, t_max: Optional[float] = None,
                noise: NoiseSpec = NoiseSpec()) -> Dataset:
    """Sample noisy replicate measurements of the exact trajectory."""
    if not isinstance(noise, NoiseSpec):
        raise TypeError("noise must be a NoiseSpec")
    t_max = default_t_max(m) if t_max is None else float(t_max)
    times = evenly_spaced_times(n_timepoints, t_max)
    truth = solve_exact(m, times).values
    rng = np.random.default_rng(noise.seed)
    eps = rng.standard_normal((len(times), m.n_nodes, noise.replicates))
    meas = truth[:, :, None] * (1.0 + noise.relative_sd * eps)
    return Dataset(m.nodes, times, meas, noise, m)


HEADER = ["time", "node", "replicate", "value"]


def dataset_to_csv(d: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for ti, t in enumerate(d.times):
        for ni, node in enumerate(d.nodes):
            for r in range(d.n_replicates):
                w.writerow([repr(float(t)), node, r + 1, repr(float(d.measurements[ti, ni, r]))])
    return buf.getvalue()


def write_dataset(d: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(d), encoding="utf-8")


def _number(text: str, row: int, column: str) -> float:
    if text is None or text.strip() == "":
        raise DatasetFormatError(f"row {row}: missing {column}")
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"row {row}: cannot read {column} {text!r}") from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"row {row}: {column} is not finite")
    return value


def dataset_from_csv(text: str, nodes=None) -> Dataset:
    """Parse the measurement CSV. Row numbers in errors count the header as row 1."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file") from None
    if [h.strip() for h in header] != HEADER:
        raise DatasetFormatError(f"header must be {','.join(HEADER)}, got {','.join(header)}")
    cells: dict = {}
    node_order: list[str] = []
    time_order: list[float] = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DatasetFormatError(f"row {rowno}: expected 4 fields, got {len(row)}")
        t = _number(row[0], rowno, "time")
        node = row[1].strip()
        if not node:
            raise DatasetFormatError(f"row {rowno}: missing node")
        rep_text = row[2].strip()
        if not rep_text.isdigit() or int(rep_text) < 1:
            raise DatasetFormatError(f"row {rowno}: replicate must be a positive integer")
        rep = int(rep_text)
        value = _number(row[3], rowno, "value")
        key = (t, node, rep)
        if key in cells:
            raise DatasetFormatError(f"row {rowno}: duplicate observation {key}")
        cells[key] = value
        if node not in node_order:
            node_order.append(node)
        if t not in time_order:
            time_order.append(t)
    if not cells:
        raise DatasetFormatError("no observations")
    if nodes is not None:
        unknown = set(node_order) - set(nodes)
        if unknown:
            raise DatasetFormatError(f"unknown nodes {sorted(unknown)}")
        node_order = [n for n in nodes if n in node_order]
    times = sorted(time_order)
    reps_per_cell = {}
    for (t, node, rep) in cells:
        reps_per_cell.setdefault((t, node), set()).add(rep)
    counts = {len(v) for v in reps_per_cell.values()}
    n_rep = max(counts)
    for t in times:
        for node in node_order:
            got = reps_per_cell.get((t, node), set())
            if got != set(range(1, n_rep + 1)):
                raise DatasetFormatError(
                    f"inconsistent replicates at time {t!r}, node {node!r}: "
                    f"have {sorted(got)}, expected 1..{n_rep}")
    meas = np.empty((len(times), len(node_order), n_rep))
    for (t, node, rep), v in cells.items():
        meas[times.index(t), node_order.index(node), rep - 1] = v
    flags = []
    n_neg = int(np.sum(meas < 0))
    if n_neg:
        flags.append(f"{n_neg} negative proportion(s)")
    n_big = int(np.sum(meas > 1))
    if n_big:
        flags.append(f"{n_big} proportion(s) above 1")
    for f in flags:
        log.warning("dataset: %s (raw noisy values are kept)", f)
    return Dataset(node_order, times, meas, flags=tuple(flags))


def read_dataset(path, nodes=None) -> Dataset:
    return dataset_from_csv(Path(path).read_text(encoding="utf-8"), nodes)
