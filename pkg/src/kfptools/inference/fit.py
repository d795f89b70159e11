"""Run MCMC chains on a pathway posterior and summarize the draws."""

from __future__ import annotations

import io
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..data import Dataset
from ..graph import PathwayGraph
from .nuts import METRICS, NUTS
from .posterior import KFPPosterior, PriorSpec
from .rwm import AdaptiveMetropolis
from .summary import credible_interval, diagnostics, kde_mode

log = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.05
SAMPLERS = ("hmc", "rwm")


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int = 0
    sampler: str = "hmc"  # "hmc" is NUTS; "rwm" is adaptive random-walk Metropolis
    sigma_mode: Union[str, float] = "infer"
    target_accept: float = 0.9
    max_tree_depth: int = 10
    metric: str = "diag"
    workers: int = 1

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.chains < 2:
            raise ValueError("need at least two chains for convergence diagnostics")
        if self.warmup < 0 or self.draws < 1:
            raise ValueError("warmup must be >= 0 and draws >= 1")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.sigma_mode != "infer" and not float(self.sigma_mode) > 0:
            raise ValueError("fixed sigma must be positive")


@dataclass
class PosteriorResult:
    names: list
    samples: np.ndarray  # chains x draws x parameters, constrained scale
    kde_mode: np.ndarray
    credible_95: np.ndarray  # P x 2
    rhat: np.ndarray
    ess: np.ndarray
    acceptance_stats: dict
    converged: bool
    config: SamplerConfig = field(default=None)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def draws(self, name: str) -> np.ndarray:
        return self.samples[:, :, self.index(name)].reshape(-1)

    def width(self, name: str) -> float:
        lo, hi = self.credible_95[self.index(name)]
        return float(hi - lo)

    def summary_json(self) -> dict:
        params = {}
        for j, name in enumerate(self.names):
            params[name] = {
                "mode": float(self.kde_mode[j]),
                "credible_95": [float(v) for v in self.credible_95[j]],
                "rhat": _json_float(self.rhat[j]),
                "ess": _json_float(self.ess[j]),
            }
        return {
            "parameters": params,
            "converged": self.converged,
            "acceptance": self.acceptance_stats,
            "config": None if self.config is None else asdict(self.config),
        }

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "draw", *self.names])
        for c in range(self.samples.shape[0]):
            for d in range(self.samples.shape[1]):
                w.writerow([c + 1, d + 1, *(repr(float(v)) for v in self.samples[c, d])])
        return buf.getvalue()


def _json_float(v: float):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def _run_chain(post: KFPPosterior, cfg: SamplerConfig, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    logp, logp_grad = post.density_functions()
    if cfg.sampler == "hmc":
        sampler = NUTS(logp_grad, post.dim, rng,
                       cfg.target_accept, cfg.max_tree_depth, cfg.metric)
        draws, infos = sampler.run(cfg.warmup, cfg.draws)
        stats = {
            "mean_accept_stat": float(np.mean([i["accept_stat"] for i in infos])),
            "divergences": int(sum(i["diverging"] for i in infos)),
            "mean_tree_depth": float(np.mean([i["tree_depth"] for i in infos])),
            "step_size": float(sampler.step_size),
        }
    else:
        sampler = AdaptiveMetropolis(logp, post.dim, rng)
        draws, infos = sampler.run(cfg.warmup, cfg.draws)
        stats = {"mean_accept_stat": float(np.mean([i["accept_stat"] for i in infos]))}
    constrained = np.array([post.to_constrained(u) for u in draws])
    return constrained, stats


def fit(dataset: Dataset, graph: PathwayGraph, prior: Optional[PriorSpec] = None,
        config: SamplerConfig = SamplerConfig()) -> PosteriorResult:
    """Sample the posterior; chains get independent streams spawned from ``config.seed``."""
    post = KFPPosterior(graph, dataset, prior, config.sigma_mode)
    streams = np.random.SeedSequence(config.seed).spawn(config.chains)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_chain, [post] * config.chains,
                                    [config] * config.chains, streams))
    else:
        results = [_run_chain(post, config, s) for s in streams]
    samples = np.stack([r[0] for r in results])
    per_chain = [r[1] for r in results]
    P = samples.shape[2]
    flat = samples.reshape(-1, P)
    modes = np.array([kde_mode(flat[:, j]) for j in range(P)])
    ci = np.array([credible_interval(flat[:, j]) for j in range(P)])
    rhat, ess = diagnostics(samples)
    bad = [n for n, r in zip(post.names, rhat) if not r <= RHAT_THRESHOLD]
    if bad:
        log.warning("not converged: R-hat above %.2f for %s", RHAT_THRESHOLD, bad)
    accept = {
        "per_chain": per_chain,
        "mean_accept_stat": float(np.mean([c["mean_accept_stat"] for c in per_chain])),
    }
    if config.sampler == "hmc":
        accept["divergences"] = int(sum(c["divergences"] for c in per_chain))
    return PosteriorResult(list(post.names), samples, modes, ci, rhat, ess, accept,
                           not bad, config)
