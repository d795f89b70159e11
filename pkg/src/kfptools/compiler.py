"""Compile a pathway graph into the raw-flux and scaled labeling ODE systems.

Raw system (unlabeled concentrations ``xU``)::

    dxU/dt = A_hat @ xU + b_hat,   A_hat = (W.T - D_out - D_V) @ inv(X_T)

Scaled system (unlabeled proportions ``x = xU / x_T``)::

    dx/dt = K @ (B - I) @ x + K @ alpha,   x(0) = 1

with ``alpha_i = D_U[i] / F_i``, ``B[i, j] = W[j, i] / F_i`` and ``k_i = F_i / x_T[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .graph import EdgeKind, PathwayError, PathwayGraph

BALANCE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# raw flux matrices


def build_incidence(g: PathwayGraph) -> np.ndarray:
    """N x R incidence matrix: +1 where an edge enters a node, -1 where it leaves."""
    m = np.zeros((g.n_nodes, g.n_edges), dtype=int)
    for col, e in enumerate(g.edges):
        if e.target is not None:
            m[e.target, col] += 1
        if e.source is not None:
            m[e.source, col] -= 1
    return m


def _fluxes(g: PathwayGraph) -> list[Fraction]:
    missing = [e.id for e in g.edges if e.flux is None]
    if missing:
        raise PathwayError(f"missing flux on edges {missing}")
    return [e.flux for e in g.edges]


def check_flux_balance(g: PathwayGraph) -> list[Fraction]:
    """Per-node influx minus outflux, computed exactly."""
    fluxes = _fluxes(g)
    residual = [Fraction(0)] * g.n_nodes
    for e, f in zip(g.edges, fluxes):
        if e.target is not None:
            residual[e.target] += f
        if e.source is not None:
            residual[e.source] -= f
    return residual


@dataclass(frozen=True)
class CompiledModel:
    nodes: tuple[str, ...]
    W: np.ndarray
    D_in: np.ndarray
    D_out: np.ndarray
    D_L: np.ndarray
    D_U: np.ndarray
    D_V: np.ndarray
    F_in: np.ndarray
    F_out: np.ndarray
    M: np.ndarray
    A_hat: Optional[np.ndarray] = None
    b_hat: Optional[np.ndarray] = None
    x_total: Optional[np.ndarray] = None

    @property
    def labeled_influx(self) -> np.ndarray:
        return np.diag(self.D_L).copy()

    def rhs(self, x_unlabeled: np.ndarray) -> np.ndarray:
        """Right-hand side of the raw ODE for unlabeled concentrations."""
        if self.A_hat is None:
            raise ValueError("compiled without total concentrations")
        return self.A_hat @ x_unlabeled + self.b_hat


def _flux_matrices(g: PathwayGraph):
    n = g.n_nodes
    W = np.zeros((n, n))
    d_l, d_u, d_v = np.zeros(n), np.zeros(n), np.zeros(n)
    for e in g.edges:
        f = float(e.flux)
        if e.kind is EdgeKind.INTERNAL:
            W[e.source, e.target] += f
        elif e.kind is EdgeKind.LABELED_IN:
            d_l[e.target] += f
        elif e.kind is EdgeKind.UNLABELED_IN:
            d_u[e.target] += f
        else:
            d_v[e.source] += f
    return W, d_l, d_u, d_v


def compile_raw(g: PathwayGraph, x_total: Optional[Sequence[float]] = None) -> CompiledModel:
    """Build W, the degree/entry/exit matrices, F_in, F_out, M and (given ``x_total``) A_hat, b_hat."""
    _fluxes(g)
    W, d_l, d_u, d_v = _flux_matrices(g)
    D_out = np.diag(W.sum(axis=1))
    D_in = np.diag(W.sum(axis=0))
    D_L, D_U, D_V = np.diag(d_l), np.diag(d_u), np.diag(d_v)
    F_in = D_in + D_L + D_U
    F_out = D_out + D_V
    A_hat = b_hat = xt = None
    if x_total is not None:
        xt = np.asarray(x_total, dtype=float)
        if xt.shape != (g.n_nodes,):
            raise ValueError(f"x_total must have length {g.n_nodes}")
        if np.any(xt <= 0):
            raise ValueError("total concentrations must be strictly positive")
        A_hat = (W.T - D_out - D_V) / xt[None, :]
        b_hat = d_u.copy()
    return CompiledModel(g.nodes, W, D_in, D_out, D_L, D_U, D_V, F_in, F_out,
                         build_incidence(g), A_hat, b_hat, xt)


# ---------------------------------------------------------------------------
# scaled model


@dataclass(frozen=True)
class ScaledModel:
    """Turnover rates ``k``, flux-ratio matrix ``B`` and unlabeled-input proportions ``alpha``.

    ``k`` may be None for a model compiled without total concentrations; such a
    model supports steady-state analysis but not simulation.
    """

    nodes: tuple[str, ...]
    B: np.ndarray
    alpha: np.ndarray
    labeled_targets: frozenset
    k: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "B", np.array(self.B, dtype=float))
        object.__setattr__(self, "alpha", np.array(self.alpha, dtype=float))
        object.__setattr__(self, "labeled_targets", frozenset(self.labeled_targets))
        if self.k is not None:
            object.__setattr__(self, "k", np.array(self.k, dtype=float))
        n = len(self.nodes)
        if self.B.shape != (n, n) or self.alpha.shape != (n,):
            raise ValueError("B must be N x N and alpha length N")
        if self.k is not None and self.k.shape != (n,):
            raise ValueError("k must have length N")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def with_k(self, k: Sequence[float]) -> "ScaledModel":
        return ScaledModel(self.nodes, self.B, self.alpha, self.labeled_targets, np.asarray(k, float))

    def require_k(self) -> np.ndarray:
        if self.k is None:
            raise ValueError("model has no turnover rates")
        return self.k

    @property
    def system_matrix(self) -> np.ndarray:
        """K (B - I)."""
        k = self.require_k()
        return k[:, None] * (self.B - np.eye(self.n_nodes))

    @property
    def forcing(self) -> np.ndarray:
        """K alpha."""
        return self.require_k() * self.alpha

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.system_matrix @ x + self.forcing

    def violations(self, atol: float = 1e-12) -> list[str]:
        out = []
        if np.any(self.alpha < -atol) or np.any(self.alpha > 1 + atol):
            out.append("alpha outside [0, 1]")
        if np.any(self.B < -atol) or np.any(self.B > 1 + atol):
            out.append("beta outside [0, 1]")
        if np.any(np.abs(np.diag(self.B)) > 0):
            out.append("nonzero diagonal in B")
        total = self.B.sum(axis=1) + self.alpha
        for i in range(self.n_nodes):
            if i in self.labeled_targets:
                if not total[i] < 1:
                    out.append(f"row {self.nodes[i]!r}: proportions sum to {total[i]:.17g}, "
                               "labeled node needs < 1")
            elif abs(total[i] - 1) > atol:
                out.append(f"row {self.nodes[i]!r}: proportions sum to {total[i]:.17g}, expected 1")
        if self.k is not None and np.any(self.k <= 0):
            out.append("turnover rates must be positive")
        return out

    def validate(self, atol: float = 1e-12) -> "ScaledModel":
        problems = self.violations(atol)
        if problems:
            raise ValueError("invalid scaled model: " + "; ".join(problems))
        return self


def compile_scaled(g: PathwayGraph, x_total: Optional[Sequence[float]] = None) -> ScaledModel:
    """Scale a fluxed, balanced graph into (k, B, alpha)."""
    residual = check_flux_balance(g)
    W, d_l, d_u, d_v = _flux_matrices(g)
    F = W.sum(axis=0) + d_l + d_u
    for i in range(g.n_nodes):
        if F[i] == 0:
            raise PathwayError(f"no flux through metabolite {g.nodes[i]!r}")
        if abs(float(residual[i])) > BALANCE_RTOL * F[i]:
            raise PathwayError(f"flux balance violated at {g.nodes[i]!r}: "
                               f"influx - outflux = {float(residual[i]):.6g}")
    B = W.T / F[:, None]
    alpha = d_u / F
    k = None
    if x_total is not None:
        xt = np.asarray(x_total, dtype=float)
        if xt.shape != (g.n_nodes,) or np.any(xt <= 0):
            raise ValueError("x_total must be a positive vector of length N")
        k = F / xt
    return ScaledModel(g.nodes, B, alpha, g.labeled_targets, k)


# ---------------------------------------------------------------------------
# free parameters


def k_name(i: int) -> str:
    return f"k{i + 1}"


def alpha_name(i: int) -> str:
    return f"alpha{i + 1}"


def beta_name(i: int, j: int) -> str:
    """Name of beta_{i,j}: share of node i's influx that comes from node j."""
    return f"beta{i + 1}_{j + 1}"


def xt_name(i: int) -> str:
    return f"xT{i + 1}"


@dataclass(frozen=True)
class FreeParameter:
    name: str
    kind: str  # "turnover" | "alpha" | "beta"
    node: int
    source: Optional[int] = None  # beta only: the upstream node j of beta_{i,j}
    bounds: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class DerivedParameter:
    name: str
    expression: str
    kind: str
    node: int
    source: Optional[int] = None
    # eliminated beta: 1 - sum(terms); terms name alpha/beta parameters in the same row
    terms: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConcentrationConstraint:
    """Balance for a node without an exit edge: F_i = sum_j beta_{j,i} F_j."""

    node: int
    downstream: tuple[int, ...]
    expression: str  # solved for k_i, written with xT concentrations


@dataclass(frozen=True)
class ParameterSpec:
    free: tuple[FreeParameter, ...]
    derived: tuple[DerivedParameter, ...]
    concentration_dependent: tuple[ConcentrationConstraint, ...] = ()
    requires_concentrations: bool = False
    n_nodes: int = 0
    labeled_targets: frozenset = field(default_factory=frozenset)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.free]

    def to_json(self) -> dict:
        return {
            "free": [{"name": p.name, "kind": p.kind, "bounds": list(p.bounds)} for p in self.free],
            "derived": [{"name": d.name, "expression": d.expression} for d in self.derived],
            "concentration_dependent": [
                {"node": c.node + 1, "constraint": f"{k_name(c.node)} = {c.expression}"}
                for c in self.concentration_dependent
            ],
            "requires_concentrations": self.requires_concentrations,
        }


def _exitless_constraint(g: PathwayGraph, i: int) -> ConcentrationConstraint:
    downstream = tuple(sorted({e.target for e in g.edges_of(EdgeKind.INTERNAL) if e.source == i}))
    terms = [f"{beta_name(j, i)}*{k_name(j)}*({xt_name(j)}/{xt_name(i)})" for j in downstream]
    return ConcentrationConstraint(i, downstream, " + ".join(terms) if terms else "0")


def free_parameters(g: PathwayGraph, concentrations_available: bool = False) -> ParameterSpec:
    """Free parameter layout after eliminating one beta per unlabeled-input-only row.

    In each row without a labeled input, the beta with the lowest column index is
    written as ``1 - alpha_i - (other betas in the row)``. Nodes lacking an exit edge
    add a balance constraint that needs total concentrations; it is solved for the
    node's turnover rate when ``concentrations_available``.
    """
    n = g.n_nodes
    labeled = g.labeled_targets
    has_alpha = {e.target for e in g.edges_of(EdgeKind.UNLABELED_IN)}
    has_exit = {e.source for e in g.edges_of(EdgeKind.EXIT)}
    upstream = [sorted(e.source for e in g.edges_of(EdgeKind.INTERNAL) if e.target == i)
                for i in range(n)]

    constraints = [_exitless_constraint(g, i) for i in range(n) if i not in has_exit]
    solved_k = {c.node for c in constraints} if concentrations_available else set()

    free: list[FreeParameter] = []
    derived: list[DerivedParameter] = []
    for i in range(n):
        if i not in solved_k:
            free.append(FreeParameter(k_name(i), "turnover", i, bounds=(0.0, float("inf"))))
    for i in range(n):
        if i in has_alpha:
            free.append(FreeParameter(alpha_name(i), "alpha", i))
    for i in range(n):
        row = upstream[i]
        if i not in labeled and row:
            first, rest = row[0], row[1:]
            terms = ([alpha_name(i)] if i in has_alpha else []) + [beta_name(i, j) for j in rest]
            expr = " - ".join(["1", *terms])
            derived.append(DerivedParameter(beta_name(i, first), expr, "beta", i, first, tuple(terms)))
        else:
            rest = row
        for j in rest:
            free.append(FreeParameter(beta_name(i, j), "beta", i, j))
    for c in constraints:
        if c.node in solved_k:
            derived.append(DerivedParameter(k_name(c.node), c.expression, "turnover", c.node))

    return ParameterSpec(
        free=tuple(free),
        derived=tuple(derived),
        concentration_dependent=() if concentrations_available else tuple(constraints),
        requires_concentrations=bool(constraints),
        n_nodes=n,
        labeled_targets=labeled,
    )


class ParameterMap:
    """Affine map from proportion parameters to (B, alpha), plus the turnover slots.

    ``B = B0 + sum_p theta_p * dB[p]`` and ``alpha = a0 + sum_p theta_p * da[p]`` over
    the free alpha/beta parameters; turnover parameters fill ``k`` directly.
    Nodes whose turnover rate is derived from a concentration constraint are
    filled by solving the balance equations, which needs ``x_total``.
    """

    def __init__(self, spec: ParameterSpec, nodes: Sequence[str], x_total=None):
        self.spec = spec
        self.nodes = tuple(nodes)
        n = spec.n_nodes
        p = len(spec.free)
        self.n_params = p
        self.index = {q.name: idx for idx, q in enumerate(spec.free)}
        self.k_slots = np.full(n, -1)
        self.B0 = np.zeros((n, n))
        self.a0 = np.zeros(n)
        self.dB = np.zeros((p, n, n))
        self.da = np.zeros((p, n))
        for idx, q in enumerate(spec.free):
            if q.kind == "turnover":
                self.k_slots[q.node] = idx
            elif q.kind == "alpha":
                self.da[idx, q.node] = 1.0
            else:
                self.dB[idx, q.node, q.source] = 1.0
        for d in spec.derived:
            if d.kind != "beta":
                continue
            self.B0[d.node, d.source] = 1.0
            for term in d.terms:
                self.dB[self.index[term], d.node, d.source] -= 1.0
        self.dB_flat = self.dB.reshape(p, n * n)
        self.labeled = np.array(sorted(spec.labeled_targets), dtype=int)
        self.is_turnover = np.array([q.kind == "turnover" for q in spec.free], dtype=bool)
        self.is_proportion = ~self.is_turnover
        self.solved_k = [d.node for d in spec.derived if d.kind == "turnover"]
        self.x_total = None if x_total is None else np.asarray(x_total, dtype=float)
        if self.solved_k and self.x_total is None:
            raise ValueError("derived turnover rates need total concentrations")

    def proportions(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        n = len(self.a0)
        B = self.B0 + (theta @ self.dB_flat).reshape(n, n)
        alpha = self.a0 + theta @ self.da
        return B, alpha

    def turnover(self, theta: np.ndarray, B: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = np.where(self.k_slots >= 0, theta[np.maximum(self.k_slots, 0)], 0.0)
        if self.solved_k:
            # F_i = sum_j B[j, i] F_j for each exit-less node i, with F = k * x_total
            xt = self.x_total
            solved = self.solved_k
            known = [i for i in range(len(k)) if i not in solved]
            F_known = k[known] * xt[known]
            A = np.eye(len(solved)) - B[np.ix_(solved, solved)].T
            rhs = B[np.ix_(known, solved)].T @ F_known
            F_solved = np.linalg.solve(A, rhs)
            k[solved] = F_solved / xt[solved]
        return k

    def model(self, theta: np.ndarray, labeled_targets=None) -> ScaledModel:
        B, alpha = self.proportions(theta)
        k = self.turnover(theta, B)
        return ScaledModel(self.nodes, B, alpha,
                           self.spec.labeled_targets if labeled_targets is None else labeled_targets, k)

    def values_from_model(self, m: ScaledModel) -> np.ndarray:
        """Read the free-parameter vector off a scaled model."""
        out = np.zeros(self.n_params)
        for idx, q in enumerate(self.spec.free):
            if q.kind == "turnover":
                out[idx] = m.require_k()[q.node]
            elif q.kind == "alpha":
                out[idx] = m.alpha[q.node]
            else:
                out[idx] = m.B[q.node, q.source]
        return out

    def feasible(self, theta: np.ndarray) -> bool:
        """Proportions valid: derived betas nonnegative and labeled rows keep some labeled influx."""
        return self.feasible_proportions(*self.proportions(theta))

    def feasible_proportions(self, B: np.ndarray, alpha: np.ndarray) -> bool:
        if B.min() < 0 or alpha.min() < 0:
            return False
        lab = self.labeled
        return bool((B[lab].sum(axis=1) + alpha[lab]).max() < 1) if len(lab) else True
