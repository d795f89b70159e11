"""Adaptive random-walk Metropolis, the gradient-free fallback sampler.

Warmup tunes a Gaussian proposal: the covariance is re-estimated from the chain
history at doubling intervals and a global scale is driven toward the target
acceptance rate by Robbins-Monro updates. Both are frozen for the draws.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .nuts import INIT_ATTEMPTS, INIT_RADIUS, InitializationError

TARGET_ACCEPT = 0.234


class AdaptiveMetropolis:
    def __init__(self, logp: Callable, dim: int, rng: np.random.Generator,
                 target_accept: float = TARGET_ACCEPT):
        self.logp = logp
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.log_scale = math.log(2.38 / math.sqrt(dim))
        self.chol = np.eye(dim)

    def initial_point(self):
        for _ in range(INIT_ATTEMPTS):
            q = self.rng.uniform(-INIT_RADIUS, INIT_RADIUS, self.dim)
            lp = float(self.logp(q))
            if np.isfinite(lp):
                return q, lp
        raise InitializationError(f"no finite log density after {INIT_ATTEMPTS} random starts")

    def step(self, q, lp):
        proposal = q + math.exp(self.log_scale) * (self.chol @ self.rng.standard_normal(self.dim))
        lp_new = float(self.logp(proposal))
        log_ratio = lp_new - lp if np.isfinite(lp_new) else -np.inf
        u = self.rng.uniform()
        accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
        if u < accept_prob:
            return proposal, lp_new, accept_prob
        return q, lp, accept_prob

    def _refit(self, history: np.ndarray):
        n = len(history)
        cov = np.cov(history, rowvar=False).reshape(self.dim, self.dim)
        # shrink toward a small diagonal so the factorization always exists
        cov = (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(self.dim)
        self.chol = np.linalg.cholesky(cov)
        self.log_scale = math.log(2.38 / math.sqrt(self.dim))

    def run(self, n_warmup: int, n_draws: int, init=None):
        if init is None:
            q, lp = self.initial_point()
        else:
            q = np.asarray(init, dtype=float)
            lp = float(self.logp(q))
        history = np.empty((n_warmup, self.dim))
        next_refit = 100
        since = 0
        for it in range(n_warmup):
            q, lp, a = self.step(q, lp)
            history[it] = q
            since += 1
            self.log_scale += (a - self.target_accept) / since ** 0.6
            if it + 1 == next_refit and it + 1 < n_warmup:
                # the first half is treated as burn-in for the covariance estimate
                self._refit(history[(it + 1) // 2: it + 1])
                next_refit *= 2
                since = 0
        draws = np.empty((n_draws, self.dim))
        infos = []
        for it in range(n_draws):
            q, lp, a = self.step(q, lp)
            draws[it] = q
            infos.append({"accept_stat": a})
        return draws, infos
