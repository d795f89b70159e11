"""Trajectories of unlabeled proportions for the scaled labeling ODE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .compiler import ScaledModel
from .expm import expm


class StiffnessError(RuntimeError):
    """The explicit integrator could not meet its tolerance within the step budget."""


@dataclass(frozen=True)
class Trajectory:
    nodes: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray  # T x N

    def to_csv(self) -> str:
        lines = [",".join(["time", *self.nodes])]
        for t, row in zip(self.times, self.values):
            lines.append(",".join(repr(float(v)) for v in (t, *row)))
        return "\n".join(lines) + "\n"


def default_t_max(m: ScaledModel) -> float:
    """Ten time constants of the slowest pool."""
    return 10.0 / float(np.min(m.require_k()))


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and sorted")
    return times


def steady_state_vector(m: ScaledModel) -> np.ndarray:
    return np.linalg.solve(np.eye(m.n_nodes) - m.B, m.alpha)


def solve_exact(m: ScaledModel, times: Sequence[float]) -> Trajectory:
    """x(t) = x_ss + expm(t K (B - I)) (1 - x_ss)."""
    times = _check_times(times)
    A = m.system_matrix
    xss = steady_state_vector(m)
    offset = 1.0 - xss
    values = np.empty((len(times), m.n_nodes))
    for row, t in enumerate(times):
        values[row] = 1.0 if t == 0 else xss + expm(t * A) @ offset
    return Trajectory(m.nodes, times, values)


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def solve_numeric(m: ScaledModel, times: Sequence[float], rel_tol: float = 1e-8,
                  abs_tol: Optional[float] = None, max_steps: int = 1_000_000) -> Trajectory:
    """Adaptive Dormand-Prince integration, stepping exactly onto each output time.

    ``abs_tol`` defaults to ``rel_tol / 100``. Raises StiffnessError when the step
    size collapses or the step budget runs out.
    """
    if rel_tol <= 0 or (abs_tol is not None and abs_tol <= 0):
        raise ValueError("tolerances must be positive")
    atol = rel_tol / 100 if abs_tol is None else abs_tol
    times = _check_times(times)
    values = np.empty((len(times), m.n_nodes))
    if len(times) == 0:
        return Trajectory(m.nodes, times, values)
    A, c = m.system_matrix, m.forcing

    def f(y):
        return A @ y + c

    y = np.ones(m.n_nodes)
    t = 0.0
    k1 = f(y)
    h = min(0.01 / max(np.abs(A).sum(axis=1).max(), 1e-300), times[-1] or 1.0)
    steps = 0
    for row, t_out in enumerate(times):
        while t < t_out:
            if steps >= max_steps:
                raise StiffnessError(f"step budget of {max_steps} exhausted at t={t:.6g}")
            last = t + h >= t_out
            step = t_out - t if last else h
            if step < 1e-14 * max(1.0, abs(t)):
                raise StiffnessError(f"step size underflow at t={t:.6g}")
            ks = [k1]
            for i in range(1, 7):
                ks.append(f(y + step * sum(a * kk for a, kk in zip(_A[i], ks))))
            y_new = y + step * sum(b * kk for b, kk in zip(_B5, ks) if b)
            err = step * sum(e * kk for e, kk in zip(_E, ks))
            scale = atol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = np.sqrt(np.mean((err / scale) ** 2))
            steps += 1
            if err_norm <= 1.0:
                t = t_out if last else t + step
                y = y_new
                k1 = ks[6]  # first-same-as-last
                factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
                h = max(h, step) * factor if not last else max(h, step * factor)
            else:
                h = step * max(0.2, 0.9 * err_norm ** -0.2)
        values[row] = y
    return Trajectory(m.nodes, times, values)


@dataclass(frozen=True)
class PhasePlane:
    grid_x1: np.ndarray  # G x G
    grid_x2: np.ndarray
    field_x1: np.ndarray
    field_x2: np.ndarray
    # nullcline of variable i: coefficients[i] @ x + constants[i] = 0
    nullcline_coefficients: np.ndarray  # 2 x 2
    nullcline_constants: np.ndarray  # 2
    equilibrium: np.ndarray
    trajectory: Trajectory


def phase_plane_sample(m: ScaledModel, resolution: int = 21, n_times: int = 400,
                       t_max: Optional[float] = None) -> PhasePlane:
    """Vector field on [0, 1]^2, both nullclines and the trajectory from (1, 1)."""
    if m.n_nodes != 2:
        raise ValueError("phase plane needs a two-metabolite model")
    axis = np.linspace(0.0, 1.0, resolution)
    X1, X2 = np.meshgrid(axis, axis, indexing="xy")
    A, c = m.system_matrix, m.forcing
    F1 = A[0, 0] * X1 + A[0, 1] * X2 + c[0]
    F2 = A[1, 0] * X1 + A[1, 1] * X2 + c[1]
    coef = m.B - np.eye(2)
    t_max = default_t_max(m) if t_max is None else t_max
    # log-spaced so the fast transient is resolved
    times = np.concatenate([[0.0], np.geomspace(t_max * 1e-6, t_max, n_times - 1)])
    traj = solve_exact(m, times)
    return PhasePlane(X1, X2, F1, F2, coef, m.alpha.copy(), steady_state_vector(m), traj)
