"""No-U-Turn sampler with multinomial trajectory sampling.

Adaptation during warmup: dual averaging of the step size toward a target
acceptance statistic and a diagonal inverse metric estimated over doubling
windows (initial fast buffer, slow windows, terminal fast buffer).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_DELTA_H = 1000.0
INIT_RADIUS = 2.0
INIT_ATTEMPTS = 100


class InitializationError(RuntimeError):
    pass


@dataclass(slots=True)
class _State:
    q: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    logp: float
    v: np.ndarray = None  # velocity M^-1 p


@dataclass(slots=True)
class _Tree:
    beg: _State
    end: _State
    p_sharp_beg: np.ndarray
    p_sharp_end: np.ndarray
    rho: np.ndarray
    log_w: float
    sample: _State
    sum_accept: float
    n_leapfrog: int
    valid: bool = True
    diverging: bool = False


def _reversed(t: _Tree) -> _Tree:
    return _Tree(t.end, t.beg, t.p_sharp_end, t.p_sharp_beg, t.rho, t.log_w, t.sample,
                 t.sum_accept, t.n_leapfrog, t.valid, t.diverging)


def _no_u_turn(p_sharp_beg, p_sharp_end, rho) -> bool:
    return p_sharp_beg @ rho > 0 and p_sharp_end @ rho > 0


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


class DualAveraging:
    """Nesterov dual averaging on log step size."""

    def __init__(self, step_size: float, target: float = 0.8, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** -self.kappa
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WindowSchedule:
    """Warmup iterations at which the metric is re-estimated.

    Windows default to 75 fast / doubling slow windows from 25 / 50 fast; short
    warmups shrink the buffers to 15% / 75% / 10% of the budget.
    """

    def __init__(self, n_warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                 base_window: int = 25):
        if n_warmup < 20:
            self.ends = []
            self.start = self.stop = n_warmup
            return
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - init_buffer - term_buffer
        self.start = init_buffer
        self.stop = n_warmup - term_buffer
        ends = []
        size = base_window
        pos = init_buffer
        while pos < self.stop:
            end = pos + size
            # stretch the last window to the terminal buffer if the next would not fit
            if end + 2 * size > self.stop:
                end = self.stop
            ends.append(end)
            pos = end
            size *= 2
        self.ends = ends

    def in_slow_window(self, it: int) -> bool:
        return self.start <= it < self.stop

    def window_closes(self, it: int) -> bool:
        return (it + 1) in self.ends


class WelfordVariance:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized(self) -> np.ndarray:
        n = self.n
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


class WelfordCovariance:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def add(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, x - self.mean)

    def regularized(self) -> np.ndarray:
        n = self.n
        cov = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(len(self.mean))


METRICS = ("diag", "dense")


class NUTS:
    """One chain of NUTS over an unconstrained log density.

    ``logp_grad(q)`` returns ``(log density, gradient)``; a non-finite density
    marks points outside the support and is treated as a divergence. With
    ``metric="dense"`` the inverse metric is a full covariance estimate, which
    removes linear correlations between parameters.
    """

    def __init__(self, logp_grad: Callable, dim: int, rng: np.random.Generator,
                 target_accept: float = 0.8, max_tree_depth: int = 10, metric: str = "diag"):
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        self.logp_grad = logp_grad
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.metric = metric
        self.set_inv_metric(np.ones(dim) if metric == "diag" else np.eye(dim))
        self.step_size = 1.0

    def set_inv_metric(self, inv_metric: np.ndarray):
        self.inv_metric = inv_metric
        if self.metric == "dense":
            self._chol = np.linalg.cholesky(inv_metric)

    def _velocity(self, p: np.ndarray) -> np.ndarray:
        if self.metric == "dense":
            return self.inv_metric @ p
        return self.inv_metric * p

    # -- dynamics ---------------------------------------------------------

    def _state(self, q):
        logp, grad = self.logp_grad(q)
        return _State(q, None, np.asarray(grad, dtype=float), float(logp))

    def _hamiltonian(self, s: _State) -> float:
        return -s.logp + 0.5 * float(s.p @ self._velocity(s.p))

    def _leapfrog(self, s: _State, eps: float) -> _State:
        p = s.p + (0.5 * eps) * s.grad
        q = s.q + eps * self._velocity(p)
        logp, grad = self.logp_grad(q)
        logp = float(logp)
        if not math.isfinite(logp):
            return _State(q, p, np.zeros(self.dim), -math.inf)
        p = p + (0.5 * eps) * grad
        return _State(q, p, grad, logp)

    def _accept(self, log_ratio: float) -> bool:
        u = self.rng.random()
        return log_ratio >= 0 or u < math.exp(log_ratio)

    def _sample_momentum(self) -> np.ndarray:
        z = self.rng.standard_normal(self.dim)
        if self.metric == "dense":
            # p ~ N(0, inv_metric^-1)
            return np.linalg.solve(self._chol.T, z)
        return z / np.sqrt(self.inv_metric)

    # -- trajectory -------------------------------------------------------

    def _leaf(self, s: _State, eps: float, h0: float) -> _Tree:
        new = self._leapfrog(s, eps)
        v = new.v = self._velocity(new.p)
        if math.isfinite(new.logp):
            delta = h0 + new.logp - 0.5 * float(new.p @ v)
            if math.isnan(delta):
                delta = -math.inf
        else:
            delta = -math.inf
        diverging = not (delta > -MAX_DELTA_H)
        accept = 0.0 if diverging else math.exp(min(delta, 0.0))
        return _Tree(new, new, v, v, new.p, -math.inf if diverging else delta,
                     new, accept, 1, valid=not diverging, diverging=diverging)

    def _merge_criterion(self, first: _Tree, second: _Tree, rho: np.ndarray) -> bool:
        ok = _no_u_turn(first.p_sharp_beg, second.p_sharp_end, rho)
        # extra checks across the seam between the two halves
        if not ok:
            return False
        rho_ext = first.rho + second.beg.p
        if not _no_u_turn(first.p_sharp_beg, second.beg.v, rho_ext):
            return False
        rho_ext = second.rho + first.end.p
        return _no_u_turn(first.end.v, second.p_sharp_end, rho_ext)

    def _build(self, s: _State, depth: int, eps: float, h0: float) -> _Tree:
        if depth == 0:
            return self._leaf(s, eps, h0)
        first = self._build(s, depth - 1, eps, h0)
        if not first.valid:
            return first
        second = self._build(first.end, depth - 1, eps, h0)
        n_leap = first.n_leapfrog + second.n_leapfrog
        acc = first.sum_accept + second.sum_accept
        if not second.valid:
            second.n_leapfrog, second.sum_accept = n_leap, acc
            return second
        log_w = _logaddexp(first.log_w, second.log_w)
        sample = second.sample if self._accept(second.log_w - log_w) else first.sample
        rho = first.rho + second.rho
        ok = self._merge_criterion(first, second, rho)
        return _Tree(first.beg, second.end, first.p_sharp_beg, second.p_sharp_end, rho, log_w,
                     sample, acc, n_leap, valid=ok)

    def transition(self, current: _State) -> tuple[_State, dict]:
        eps = self.step_size
        p0 = self._sample_momentum()
        s0 = _State(current.q, p0, current.grad, current.logp, self._velocity(p0))
        h0 = -s0.logp + 0.5 * float(p0 @ s0.v)
        tree = _Tree(s0, s0, s0.v, s0.v, p0, 0.0, s0, 0.0, 0)
        sample = s0
        depth = 0
        diverging = False
        while depth < self.max_tree_depth:
            forward = self.rng.random() < 0.5
            if forward:
                sub = self._build(tree.end, depth, eps, h0)
            else:
                sub = self._build(tree.beg, depth, -eps, h0)
            tree.n_leapfrog += sub.n_leapfrog
            tree.sum_accept += sub.sum_accept
            depth += 1
            if not sub.valid:
                diverging = sub.diverging
                break
            # biased progressive sampling favours the new subtree
            if self._accept(sub.log_w - tree.log_w):
                sample = sub.sample
            log_w = _logaddexp(tree.log_w, sub.log_w)
            rho = tree.rho + sub.rho
            # a backward subtree is built right to left
            first, second = (tree, sub) if forward else (_reversed(sub), tree)
            ok = self._merge_criterion(first, second, rho)
            tree = _Tree(first.beg, second.end, first.p_sharp_beg, second.p_sharp_end, rho, log_w,
                         sample, tree.sum_accept, tree.n_leapfrog)
            if not ok:
                break
        accept = tree.sum_accept / max(tree.n_leapfrog, 1)
        info = {"accept_stat": accept, "tree_depth": depth, "n_leapfrog": tree.n_leapfrog,
                "diverging": diverging, "step_size": eps}
        return _State(sample.q, None, sample.grad, sample.logp), info

    # -- setup ------------------------------------------------------------

    def initial_point(self) -> _State:
        for _ in range(INIT_ATTEMPTS):
            q = self.rng.uniform(-INIT_RADIUS, INIT_RADIUS, self.dim)
            s = self._state(q)
            if np.isfinite(s.logp) and np.all(np.isfinite(s.grad)):
                return s
        raise InitializationError(f"no finite log density after {INIT_ATTEMPTS} random starts")

    def find_reasonable_step_size(self, s: _State) -> float:
        """Double or halve the step until one leapfrog step's acceptance crosses 0.8."""
        eps = self.step_size
        p = self._sample_momentum()
        start = _State(s.q, p, s.grad, s.logp)
        h0 = self._hamiltonian(start)
        new = self._leapfrog(start, eps)
        delta = h0 - self._hamiltonian(new) if np.isfinite(new.logp) else -np.inf
        direction = 1 if delta > math.log(0.8) else -1
        for _ in range(100):
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            new = self._leapfrog(start, eps)
            delta = h0 - self._hamiltonian(new) if np.isfinite(new.logp) else -np.inf
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and delta > math.log(0.8):
                break
            if eps > 1e7 or eps < 1e-10:
                break
        return eps

    def run(self, n_warmup: int, n_draws: int, init=None):
        """Warm up then draw; returns (draws x dim array, per-draw info list)."""
        s = self.initial_point() if init is None else self._state(np.asarray(init, dtype=float))
        self.step_size = self.find_reasonable_step_size(s)
        adapt = DualAveraging(self.step_size, self.target_accept)
        windows = WindowSchedule(n_warmup)
        estimator = WelfordCovariance if self.metric == "dense" else WelfordVariance
        var = estimator(self.dim)
        for it in range(n_warmup):
            s, info = self.transition(s)
            self.step_size = adapt.update(info["accept_stat"])
            if windows.in_slow_window(it):
                var.add(s.q)
                if windows.window_closes(it):
                    self.set_inv_metric(var.regularized())
                    var = estimator(self.dim)
                    self.step_size = self.find_reasonable_step_size(s)
                    adapt.restart(self.step_size)
        if n_warmup > 0:
            self.step_size = adapt.final_step_size
        draws = np.empty((n_draws, self.dim))
        infos = []
        for it in range(n_draws):
            s, info = self.transition(s)
            draws[it] = s.q
            infos.append(info)
        return draws, infos
