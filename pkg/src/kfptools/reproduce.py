"""Noise-level x time-point grids of synthetic fits for the built-in fixtures."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import NoiseSpec, gen_dataset, write_dataset
from .fixtures import FIGURES, NOISE_LEVELS, TIMEPOINT_COUNTS, FigureFixture
from .inference.fit import PosteriorResult, SamplerConfig, fit
from .simulate import default_t_max

log = logging.getLogger(__name__)


@dataclass
class CellResult:
    n_timepoints: int
    noise: float
    data_seed: int
    fit_seed: int
    t_max: float
    result: PosteriorResult
    seconds: float


def cell_seeds(seed: int, index: int) -> tuple[int, int]:
    """Independent (data, fit) seeds for grid cell ``index``."""
    state = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return int(state[0]), int(state[1])


def get_figure(name: str) -> FigureFixture:
    try:
        return FIGURES[name]
    except KeyError:
        raise KeyError(f"unknown figure {name!r}; choose from {sorted(FIGURES)}") from None


def run_grid(figure: str, seed: int, config: SamplerConfig = SamplerConfig(),
             noise_levels: Sequence[float] = NOISE_LEVELS,
             timepoints: Sequence[int] = TIMEPOINT_COUNTS, replicates: int = 3,
             t_max: Optional[float] = None, outdir: Optional[Path] = None) -> list[CellResult]:
    """Generate a dataset and fit it for every (noise, time points) cell.

    With ``outdir`` each cell's data, draws and summary go to their own
    subdirectory ``n<points>_noise<pct>``.
    """
    fx = get_figure(figure)
    model, graph = fx.model(), fx.graph()
    t_max = default_t_max(model) if t_max is None else float(t_max)
    cells = []
    index = 0
    for noise in noise_levels:
        for n in timepoints:
            data_seed, fit_seed = cell_seeds(seed, index)
            index += 1
            d = gen_dataset(model, n, t_max, NoiseSpec(noise, replicates, data_seed))
            start = time.perf_counter()
            res = fit(d, graph, config=replace(config, seed=fit_seed))
            elapsed = time.perf_counter() - start
            log.info("%s: %d points, %.1f%% noise fitted in %.1fs", figure, n, 100 * noise, elapsed)
            cell = CellResult(n, noise, data_seed, fit_seed, t_max, res, elapsed)
            cells.append(cell)
            if outdir is not None:
                cdir = Path(outdir) / cell_dirname(n, noise)
                cdir.mkdir(parents=True, exist_ok=True)
                write_dataset(d, cdir / "data.csv")
                (cdir / "samples.csv").write_text(res.samples_csv(), encoding="utf-8")
                (cdir / "summary.json").write_text(json.dumps(res.summary_json(), indent=2) + "\n",
                                                   encoding="utf-8")
    return cells


def cell_dirname(n_timepoints: int, noise: float) -> str:
    return f"n{n_timepoints}_noise{noise * 100:g}pct"


def summary_rows(figure: str, cells: Sequence[CellResult]) -> list[dict]:
    fx = get_figure(figure)
    rows = []
    for c in cells:
        for name in c.result.names:
            j = c.result.index(name)
            truth = fx.truth.get(name)
            rows.append({
                "n_timepoints": c.n_timepoints,
                "noise": c.noise,
                "parameter": name,
                "truth": None if truth is None else float(truth),
                "mode": float(c.result.kde_mode[j]),
                "ci_low": float(c.result.credible_95[j, 0]),
                "ci_high": float(c.result.credible_95[j, 1]),
                "width": c.result.width(name),
                "rhat": float(c.result.rhat[j]),
                "ess": float(c.result.ess[j]),
            })
    return rows
