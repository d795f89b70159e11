"""Steady-state identifiability and fast-slow timescale analysis."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .compiler import ParameterMap, ScaledModel, free_parameters
from .graph import EdgeKind, PathwayGraph, arborescence_parents, edge_census

log = logging.getLogger(__name__)

FD_STEP = 1e-6
RANK_RTOL = 1e-8
SLOW_MANIFOLD_ATOL = 1e-12
DEFAULT_FAST_RATIO = 10.0


class SingularSteadyState(ArithmeticError):
    """I - B is singular; a validated graph should never produce this."""


@dataclass(frozen=True)
class SteadyState:
    nodes: tuple[str, ...]
    xbar_ss: np.ndarray


def steady_state(m: ScaledModel) -> SteadyState:
    """Solve (I - B) x = alpha. Turnover rates play no part."""
    lhs = np.eye(m.n_nodes) - m.B
    try:
        x = np.linalg.solve(lhs, m.alpha)
    except np.linalg.LinAlgError:
        raise SingularSteadyState("I - B is singular; check the graph's labeled-input paths") from None
    return SteadyState(m.nodes, x)


@dataclass(frozen=True)
class WCDDResult:
    ok: bool
    strict_rows: tuple[int, ...]
    # node -> path of nodes ending in a strictly dominant row (None if no path)
    chains: dict

    def __bool__(self):
        return self.ok


def check_wcdd(B: np.ndarray, labeled_targets=(), tol: float = 1e-12) -> WCDDResult:
    """Weak chained diagonal dominance of I - B, with a witness chain per row.

    Row i of I - B has diagonal 1 and off-diagonal mass sum_j |B[i, j]|. The
    directed graph has an edge i -> j whenever B[i, j] != 0.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    M = np.eye(n) - B
    diag = np.abs(np.diag(M))
    off = np.abs(M).sum(axis=1) - diag
    weak = diag >= off - tol
    strict = tuple(int(i) for i in np.flatnonzero(diag > off + tol))
    chains: dict = {i: [i] for i in strict}
    # reverse BFS from the strict rows finds each row's shortest chain
    reverse = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and M[i, j] != 0:
                reverse[j].append(i)
    queue = deque(strict)
    while queue:
        j = queue.popleft()
        for i in reverse[j]:
            if i not in chains:
                chains[i] = [i, *chains[j]]
                queue.append(i)
    full = {i: chains.get(i) for i in range(n)}
    ok = bool(np.all(weak)) and bool(strict) and all(c is not None for c in full.values())
    return WCDDResult(ok, strict, full)


def check_ss_condition(g: PathwayGraph) -> bool:
    """Necessary counting condition |E_L| + |E_U| + |E_W| <= 2N."""
    c = edge_census(g)
    return c.labeled_in + c.unlabeled_in + c.internal <= 2 * c.n_nodes


def proportion_parameter_map(g: PathwayGraph) -> ParameterMap:
    return ParameterMap(free_parameters(g, concentrations_available=False), g.nodes)


def steady_state_jacobian(m: ScaledModel, g: PathwayGraph, step: float = FD_STEP):
    """Forward-difference Jacobian of the map (free alpha, beta) -> x_ss."""
    pmap = proportion_parameter_map(g)
    theta0 = pmap.values_from_model(m.with_k(np.ones(m.n_nodes)))
    cols = np.flatnonzero(pmap.is_proportion)
    names = [pmap.spec.free[i].name for i in cols]

    def xss(theta):
        B, alpha = pmap.proportions(theta)
        return np.linalg.solve(np.eye(m.n_nodes) - B, alpha)

    base = xss(theta0)
    J = np.zeros((m.n_nodes, len(cols)))
    for c, idx in enumerate(cols):
        theta = theta0.copy()
        theta[idx] += step
        J[:, c] = (xss(theta) - base) / step
    return J, names


def numerical_rank(J: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if J.size == 0:
        return 0
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s >= rtol * s[0]))


@dataclass(frozen=True)
class DegeneracyFlag:
    code: str  # "all-alpha-zero" | "duplicate-input-node" | "rank-deficient"
    message: str
    nodes: tuple[int, ...] = ()


def detect_degenerate_ss(m: ScaledModel, g: PathwayGraph) -> list[DegeneracyFlag]:
    flags = []
    if np.all(m.alpha == 0):
        flags.append(DegeneracyFlag("all-alpha-zero",
                                    "no unlabeled input: every pool ends fully labeled"))
    for i in range(m.n_nodes):
        if i in m.labeled_targets or m.alpha[i] != 0:
            continue
        sources = np.flatnonzero(m.B[i])
        if len(sources) == 1:
            j = int(sources[0])
            flags.append(DegeneracyFlag(
                "duplicate-input-node",
                f"{m.nodes[i]!r} is fed only by {m.nodes[j]!r}; both share one steady state",
                (i, j)))
    J, names = steady_state_jacobian(m, g)
    rank = numerical_rank(J)
    if rank < len(names):
        flags.append(DegeneracyFlag(
            "rank-deficient",
            f"steady-state Jacobian has rank {rank} for {len(names)} proportion parameters"))
    return flags


@dataclass(frozen=True)
class IdentifiabilityReport:
    counting_ok: bool
    wcdd_ok: bool
    degenerate_flags: tuple[DegeneracyFlag, ...]
    ss_jacobian_rank: int
    n_proportion_parameters: int
    verdict: str  # "ss-recoverable" | "ss-underdetermined" | "ss-degenerate"
    steady_state: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        return {
            "ss_condition": self.counting_ok,
            "wcdd": self.wcdd_ok,
            "degenerate_flags": [f.code for f in self.degenerate_flags],
            "ss_jacobian_rank": self.ss_jacobian_rank,
            "n_proportion_parameters": self.n_proportion_parameters,
            "verdict": self.verdict,
            "steady_state": None if self.steady_state is None else self.steady_state.tolist(),
        }


def identifiability_report(m: ScaledModel, g: PathwayGraph) -> IdentifiabilityReport:
    counting = check_ss_condition(g)
    wcdd = check_wcdd(m.B, m.labeled_targets).ok
    flags = detect_degenerate_ss(m, g)
    J, names = steady_state_jacobian(m, g)
    rank = numerical_rank(J)
    if not counting:
        verdict = "ss-underdetermined"
    elif flags or rank < len(names):
        verdict = "ss-degenerate"
    else:
        verdict = "ss-recoverable"
    xss = steady_state(m).xbar_ss if wcdd else None
    return IdentifiabilityReport(counting, wcdd, tuple(flags), rank, len(names), verdict, xss)


def recover_arborescence_alphas(ss: SteadyState, g: PathwayGraph) -> np.ndarray:
    """Invert the steady-state map on an arborescence.

    The root keeps its steady state; a child i of parent j gets
    (x_i - x_j) / (1 - x_j).
    """
    parents = arborescence_parents(g)
    x = np.asarray(ss.xbar_ss, dtype=float)
    alpha = np.empty(g.n_nodes)
    for i, j in parents.items():
        if j is None:
            alpha[i] = x[i]
            continue
        if x[j] == 1.0:
            raise ZeroDivisionError(f"parent {g.nodes[j]!r} has steady state 1")
        alpha[i] = (x[i] - x[j]) / (1.0 - x[j])
    return alpha


@dataclass(frozen=True)
class SlowManifold:
    """Affine set coefficients @ x + constant = 0 where the fast pool is at rest."""

    fast_node: int
    coefficients: np.ndarray
    constant: float

    def residual(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.coefficients + self.constant

    def solve_for(self, node: int, x: np.ndarray) -> float:
        """Value of ``x[node]`` on the manifold given the other coordinates of ``x``."""
        others = sum(self.coefficients[i] * x[i] for i in range(len(x)) if i != node)
        return -(others + self.constant) / self.coefficients[node]


def slow_manifold(m: ScaledModel, fast_node: int) -> SlowManifold:
    coef = m.B[fast_node] - np.eye(m.n_nodes)[fast_node]
    return SlowManifold(fast_node, coef, float(m.alpha[fast_node]))


@dataclass(frozen=True)
class FastSlowReport:
    fast_node: int
    ratio: float
    ic_on_slow_manifold: bool
    identifiable_fast_rate: bool
    slow_manifold_residual_at_ic: float
    manifold: SlowManifold = field(repr=False, default=None)

    def to_json(self, nodes=None) -> dict:
        return {
            "fast_node": self.fast_node + 1 if nodes is None else nodes[self.fast_node],
            "ratio": self.ratio,
            "ic_on_slow_manifold": self.ic_on_slow_manifold,
            "identifiable_fast_rate": self.identifiable_fast_rate,
            "slow_manifold_residual_at_ic": self.slow_manifold_residual_at_ic,
        }


def classify_fast_slow(m: ScaledModel, threshold: float = DEFAULT_FAST_RATIO) -> Optional[FastSlowReport]:
    """Find a single pool turning over at least ``threshold`` times faster than every other.

    The residual of the fast pool's nullcline at the all-ones start is zero unless
    the pool receives labeled input, in which case its turnover rate shows in
    early data.
    """
    k = m.require_k()
    if len(k) < 2:
        return None
    order = np.argsort(k)[::-1]
    ratio = float(k[order[0]] / k[order[1]])
    if ratio < threshold:
        ks = np.sort(k)[::-1]
        gaps = ks[:-1] / ks[1:]
        if np.any(gaps >= threshold):
            cut = int(np.argmax(gaps >= threshold)) + 1
            log.warning("%d pools are fast together (%s); only a single fast pool is analysed",
                        cut, [m.nodes[i] for i in order[:cut]])
        return None
    n = int(order[0])
    manifold = slow_manifold(m, n)
    r = float(manifold.residual(np.ones(m.n_nodes)))
    on = abs(r) <= SLOW_MANIFOLD_ATOL
    return FastSlowReport(n, ratio, on, not on, r, manifold)
