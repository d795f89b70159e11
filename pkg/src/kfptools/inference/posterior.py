"""Log-posterior of the free parameters given a measurement dataset.

Predictions come from the augmented linear system ``z = [x, s_1..s_P, 1]`` where
``s_p = dx/dtheta_p``::

    x'   = A x + c
    s_p' = A s_p + (dA/dtheta_p) x + dc/dtheta_p

so one matrix exponential per distinct sampling interval gives the trajectory
and its exact parameter sensitivities.

Likelihood: every replicate is an independent Gaussian with standard deviation
``max(c * prediction, SIGMA_FLOOR)``; ``c`` is either inferred (parameter
``sigma_rel``) or fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..compiler import ParameterMap, ScaledModel, free_parameters
from ..data import Dataset
from ..expm import expm
from ..graph import PathwayGraph, require_valid
from . import _kernel

SIGMA_FLOOR = 1e-3
SIGMA_NAME = "sigma_rel"
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class ModelDataMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors keyed by parameter name.

    Unlisted parameters get the defaults: Uniform(0, 3) for turnover rates,
    Uniform(0, 1) for proportions and Uniform(0, 0.5) for ``sigma_rel``.
    """

    bounds: dict = field(default_factory=dict)
    turnover: tuple[float, float] = (0.0, 3.0)
    proportion: tuple[float, float] = (0.0, 1.0)
    sigma: tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        for name, (lo, hi) in {**self.bounds, "<turnover>": self.turnover,
                               "<proportion>": self.proportion, "<sigma>": self.sigma}.items():
            if not lo < hi:
                raise ValueError(f"prior for {name}: need lo < hi, got ({lo}, {hi})")
        lo, hi = self.proportion
        if lo < 0 or hi > 1:
            raise ValueError("proportion priors must lie within [0, 1]")

    def for_parameter(self, name: str, kind: str) -> tuple[float, float]:
        if name in self.bounds:
            lo, hi = self.bounds[name]
            if kind in ("alpha", "beta") and (lo < 0 or hi > 1):
                raise ValueError(f"prior for {name} must lie within [0, 1]")
            return float(lo), float(hi)
        return {"turnover": self.turnover, "alpha": self.proportion, "beta": self.proportion,
                "sigma": self.sigma}[kind]


def _group_gaps(times: np.ndarray, rtol: float = 1e-9):
    """Sampling intervals, merging ones equal up to rounding so they share one expm."""
    gaps = np.diff(np.concatenate([[0.0], times]))
    reps: list[float] = []
    ids = np.empty(len(gaps), dtype=int)
    for i, gap in enumerate(gaps):
        for r, rep in enumerate(reps):
            if abs(gap - rep) <= rtol * max(abs(rep), 1e-300) or gap == rep:
                ids[i] = r
                break
        else:
            reps.append(gap)
            ids[i] = len(reps) - 1
    # each group evaluated at its mean interval
    means = np.array([gaps[ids == r].mean() for r in range(len(reps))])
    return means, ids


class KFPPosterior:
    """Posterior density over the free parameters of a pathway for one dataset.

    Parameter order is ``free_parameters(graph).free`` followed by ``sigma_rel``
    when the noise scale is inferred.
    """

    def __init__(self, graph: PathwayGraph, dataset: Dataset, prior: Optional[PriorSpec] = None,
                 sigma: Union[str, float] = "infer", compiled: bool = True):
        require_valid(graph)
        self.graph = graph
        self.dataset = dataset
        self.prior = prior or PriorSpec()
        self.spec = free_parameters(graph, concentrations_available=False)
        self.pmap = ParameterMap(self.spec, graph.nodes)
        self.n_nodes = graph.n_nodes
        self.n_model = self.pmap.n_params

        missing = [n for n in dataset.nodes if n not in graph.nodes]
        if missing:
            raise ModelDataMismatch(f"dataset nodes {missing} are not metabolites of the pathway")
        self.obs_nodes = np.array([graph.index(n) for n in dataset.nodes], dtype=int)

        if sigma == "infer":
            self.infer_sigma = True
            self.fixed_sigma = None
        else:
            value = float(sigma)
            if not value > 0:
                raise ValueError("fixed relative noise must be positive")
            self.infer_sigma = False
            self.fixed_sigma = value

        self.names = [p.name for p in self.spec.free] + ([SIGMA_NAME] if self.infer_sigma else [])
        self.kinds = [p.kind for p in self.spec.free] + (["sigma"] if self.infer_sigma else [])
        bounds = [self.prior.for_parameter(n, k) for n, k in zip(self.names, self.kinds)]
        self.lower = np.array([b[0] for b in bounds])
        self.upper = np.array([b[1] for b in bounds])
        self.width = self.upper - self.lower
        self._log_prior_const = -float(np.sum(np.log(self.width)))

        order = np.argsort(dataset.times, kind="stable")
        self.times = dataset.times[order]
        if np.any(self.times < 0):
            raise ValueError("measurement times must be nonnegative")
        self.y = dataset.measurements[order]  # T x Nobs x R
        self.n_rep = self.y.shape[2]
        self.y_sum = self.y.sum(axis=2)
        self.y_sq_sum = (self.y ** 2).sum(axis=2)
        self.gap_values, self.gap_ids = _group_gaps(self.times)

        P, N = self.n_model, self.n_nodes
        self._dim_full = N * (P + 1) + 1
        self._turnover_params = [(idx, q.node) for idx, q in enumerate(self.spec.free)
                                 if q.kind == "turnover"]
        self._proportion_params = [idx for idx, q in enumerate(self.spec.free)
                                   if q.kind != "turnover"]
        if self.pmap.solved_k:
            raise ValueError("fitting needs every turnover rate free")
        self._k_index = self.pmap.k_slots.copy()
        self._eye = np.eye(N)
        self._ll_const = self.y.size * _HALF_LOG_2PI
        self._G_template = np.zeros((self._dim_full, self._dim_full))
        self._block_starts = [N * b for b in range(P + 1)]
        self._prop_rows = np.concatenate(
            [np.arange(N * (p + 1), N * (p + 2)) for p in self._proportion_params]
            or [np.zeros(0, dtype=int)])
        self._dB_prop = self.pmap.dB[self._proportion_params]
        self._da_prop = self.pmap.da[self._proportion_params]
        self._z0_full = np.zeros(self._dim_full)
        self._z0_full[:N] = 1.0
        self._z0_full[-1] = 1.0
        # the compiled kernel is used for unconstrained evaluations; numpy stays the reference
        self.compiled = compiled
        self._kernel_args = (
            self.lower, self.width, self.n_model, self.infer_sigma,
            0.0 if self.fixed_sigma is None else self.fixed_sigma,
            np.ascontiguousarray(self._k_index, dtype=np.int64),
            np.ascontiguousarray(self.pmap.B0, dtype=float),
            np.ascontiguousarray(self.pmap.a0, dtype=float),
            np.ascontiguousarray(self._dB_prop, dtype=float).reshape(-1, N, N),
            np.ascontiguousarray(self._da_prop, dtype=float).reshape(-1, N),
            np.asarray(self._proportion_params, dtype=np.int64),
            np.asarray(self.pmap.labeled, dtype=np.int64),
            np.ascontiguousarray(self.gap_values, dtype=float),
            np.ascontiguousarray(self.gap_ids, dtype=np.int64),
            self.obs_nodes.astype(np.int64),
            np.ascontiguousarray(self.y_sum, dtype=float),
            np.ascontiguousarray(self.y_sq_sum, dtype=float),
            float(self.n_rep), float(self._ll_const), float(self._log_prior_const),
        )

    @property
    def dim(self) -> int:
        return len(self.names)

    # -- parameter plumbing ---------------------------------------------------

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters {self.names}, got shape {theta.shape}")
        model = theta[: self.n_model]
        c = theta[self.n_model] if self.infer_sigma else self.fixed_sigma
        return model, c

    def model(self, theta) -> ScaledModel:
        model, _ = self.split(theta)
        return self.pmap.model(model)

    def in_support(self, theta) -> bool:
        return self._supported(np.asarray(theta, dtype=float)) is not None

    def _supported(self, theta: np.ndarray):
        """(B, alpha, k, c) for a point inside the prior support, else None."""
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters {self.names}, got shape {theta.shape}")
        if not ((theta >= self.lower) & (theta <= self.upper)).all():
            return None  # also rejects NaN
        model = theta[: self.n_model]
        c = theta[self.n_model] if self.infer_sigma else self.fixed_sigma
        if c <= 0:
            return None
        k = model[self._k_index]
        if k.min() <= 0:
            return None
        B, alpha = self.pmap.proportions(model)
        if not self.pmap.feasible_proportions(B, alpha):
            return None
        return B, alpha, k, c

    def log_prior(self, theta) -> float:
        return self._log_prior_const if self.in_support(theta) else -np.inf

    # -- forward model --------------------------------------------------------

    def _system(self, B, alpha, k, with_sensitivities: bool):
        N = self.n_nodes
        BI = B - self._eye
        A = k[:, None] * BI
        c = k * alpha
        if not with_sensitivities:
            G = np.zeros((N + 1, N + 1))
            G[:N, :N] = A
            G[:N, N] = c
            return G
        G = self._G_template.copy()
        for lo in self._block_starts:
            G[lo:lo + N, lo:lo + N] = A
        G[:N, -1] = c
        for p, node in self._turnover_params:
            lo = N * (p + 1)
            G[lo + node, :N] = BI[node]
            G[lo + node, -1] = alpha[node]
        if self._proportion_params:
            rows = self._prop_rows
            G[rows, :N] = (k[None, :, None] * self._dB_prop).reshape(-1, N)
            G[rows, -1] = (k[None, :] * self._da_prop).reshape(-1)
        return G

    def _propagate(self, G: np.ndarray, z0: np.ndarray) -> np.ndarray:
        props = [expm(gap * G) for gap in self.gap_values]
        out = np.empty((len(self.times), len(z0)))
        z = z0
        for i, gid in enumerate(self.gap_ids):
            z = props[gid] @ z
            out[i] = z
        return out

    def _parts(self, theta):
        theta = np.asarray(theta, dtype=float)
        model, _ = self.split(theta)
        B, alpha = self.pmap.proportions(model)
        return B, alpha, self.pmap.turnover(model, B)

    def predict(self, theta) -> np.ndarray:
        """Predicted proportions at the dataset times for every pathway node (T x N)."""
        return self._predict(*self._parts(theta))

    def _predict(self, B, alpha, k):
        G = self._system(B, alpha, k, with_sensitivities=False)
        z0 = np.ones(self.n_nodes + 1)
        return self._propagate(G, z0)[:, : self.n_nodes]

    def predict_with_sensitivities(self, theta):
        """Predictions (T x N) and their derivatives (T x N x P_model)."""
        return self._predict_sens(*self._parts(theta))

    def _predict_sens(self, B, alpha, k):
        G = self._system(B, alpha, k, with_sensitivities=True)
        N, P = self.n_nodes, self.n_model
        Z = self._propagate(G, self._z0_full)
        x = Z[:, :N]
        sens = Z[:, N:N * (P + 1)].reshape(len(self.times), P, N).transpose(0, 2, 1)
        return x, sens

    # -- density --------------------------------------------------------------

    def _loglik_terms(self, mu: np.ndarray, c: float):
        # replicate sums give sum_r (y - mu)^2 = Syy - 2 mu Sy + R mu^2 without the R axis
        R = self.n_rep
        raw = c * mu
        active = raw > SIGMA_FLOOR
        sigma = np.where(active, raw, SIGMA_FLOOR)
        inv2 = 1.0 / (sigma * sigma)
        s1 = self.y_sum - R * mu
        s2 = self.y_sq_sum - mu * (self.y_sum + s1)
        ll = -0.5 * float((s2 * inv2).sum()) - R * float(np.log(sigma).sum()) - self._ll_const
        dsig = (s2 * inv2 - R) / sigma  # d ll / d sigma
        dsig[~active] = 0.0
        dmu = s1 * inv2 + dsig * c
        dc = float((dsig * mu).sum())
        return ll, dmu, dc

    def log_likelihood(self, theta) -> float:
        if self.y.size == 0:
            return 0.0
        _, c = self.split(theta)
        mu = self.predict(theta)[:, self.obs_nodes]
        return self._loglik_terms(mu, c)[0]

    def log_posterior(self, theta) -> float:
        parts = self._supported(np.asarray(theta, dtype=float))
        if parts is None:
            return -np.inf
        lp = self._log_prior_const
        if self.y.size == 0:
            return lp
        B, alpha, k, c = parts
        mu = self._predict(B, alpha, k)[:, self.obs_nodes]
        ll = self._loglik_terms(mu, c)[0]
        return lp + ll if np.isfinite(ll) else -np.inf

    def log_posterior_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        parts = self._supported(theta)
        grad = np.zeros(self.dim)
        if parts is None:
            return -np.inf, grad
        lp = self._log_prior_const
        if self.y.size == 0:
            return lp, grad
        B, alpha, k, c = parts
        x, sens = self._predict_sens(B, alpha, k)
        ll, dmu, dc = self._loglik_terms(x[:, self.obs_nodes], c)
        if not np.isfinite(ll):
            return -np.inf, grad
        grad[: self.n_model] = np.einsum("tn,tnp->p", dmu, sens[:, self.obs_nodes, :])
        if self.infer_sigma:
            grad[self.n_model] = dc
        return lp + ll, grad

    # -- unconstrained coordinates -------------------------------------------

    def to_constrained(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.lower + self.width * _expit(u)

    def to_unconstrained(self, theta) -> np.ndarray:
        s = (np.asarray(theta, dtype=float) - self.lower) / self.width
        return np.log(s) - np.log1p(-s)

    def _log_jacobian(self, u):
        # log(width * s * (1 - s)) with s = expit(u)
        return float(np.sum(np.log(self.width) - np.logaddexp(0.0, -u) - np.logaddexp(0.0, u)))

    def logp_unconstrained(self, u) -> float:
        """Log density of u = logit((theta - lower) / width), Jacobian included."""
        u = self._check_u(u)
        if self.compiled:
            return _kernel.logp_grad(u, *self._kernel_args, False)[0]
        lp = self.log_posterior(self.to_constrained(u))
        return lp + self._log_jacobian(u) if np.isfinite(lp) else -np.inf

    def logp_grad_unconstrained(self, u):
        u = self._check_u(u)
        if self.compiled:
            return _kernel.logp_grad(u, *self._kernel_args, True)
        return self._logp_grad_unconstrained_ref(u)

    def density_functions(self):
        """Unchecked ``(logp(u), logp_grad(u))`` callables for samplers.

        They skip argument validation; ``u`` must be a float64 vector of length ``dim``.
        """
        if not self.compiled:
            return self.logp_unconstrained, self.logp_grad_unconstrained
        kern, args = _kernel.logp_grad, self._kernel_args

        def logp(u):
            return kern(u, *args, False)[0]

        def logp_grad(u):
            return kern(u, *args, True)

        return logp, logp_grad

    def _check_u(self, u) -> np.ndarray:
        u = np.ascontiguousarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters {self.names}, got shape {u.shape}")
        return u

    def _logp_grad_unconstrained_ref(self, u):
        s = _expit(u)
        theta = self.lower + self.width * s
        lp, g = self.log_posterior_and_grad(theta)
        if not np.isfinite(lp):
            return -np.inf, np.zeros_like(u)
        dtheta = self.width * s * (1.0 - s)
        return lp + self._log_jacobian(u), g * dtheta + (1.0 - 2.0 * s)


def _expit(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def log_posterior(theta, dataset: Dataset, graph: PathwayGraph, prior: Optional[PriorSpec] = None,
                  sigma: Union[str, float] = "infer") -> float:
    """One-shot evaluation; build a KFPPosterior directly for repeated calls."""
    return KFPPosterior(graph, dataset, prior, sigma).log_posterior(theta)
