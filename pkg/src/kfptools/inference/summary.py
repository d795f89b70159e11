"""Posterior summaries: KDE mode, equal-tailed credible interval, R-hat and ESS.

R-hat is the rank-normalized split statistic (maximum of the bulk and folded
versions); ESS is the bulk effective sample size of the rank-normalized split
chains, with autocorrelations truncated by Geyer's initial monotone sequence.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

KDE_GRID = 512
MIN_KDE_SAMPLES = 10
MIN_INTERVAL_SAMPLES = 40


class InsufficientSamples(ValueError):
    pass


def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(sd, IQR / 1.34) * n^(-1/5); falls back to sd when the IQR is zero."""
    n = len(x)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.quantile(x, [0.75, 0.25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * n ** -0.2


def kde_mode(samples, grid_size: int = KDE_GRID) -> float:
    """Argmax of a Gaussian KDE evaluated on a uniform grid over [min, max]."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if len(x) < MIN_KDE_SAMPLES:
        raise InsufficientSamples(f"kde_mode needs at least {MIN_KDE_SAMPLES} samples, got {len(x)}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo
    h = silverman_bandwidth(x)
    grid = np.linspace(lo, hi, grid_size)
    density = np.zeros(grid_size)
    chunk = max(1, 2_000_000 // grid_size)
    for start in range(0, len(x), chunk):
        z = (grid[:, None] - x[None, start:start + chunk]) / h
        density += np.exp(-0.5 * z * z).sum(axis=1)
    return float(grid[int(np.argmax(density))])


def credible_interval(samples, mass: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval from linearly interpolated empirical quantiles."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    if len(x) < MIN_INTERVAL_SAMPLES:
        raise InsufficientSamples(
            f"credible_interval needs at least {MIN_INTERVAL_SAMPLES} samples, got {len(x)}")
    tail = (1.0 - mass) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    return float(lo), float(hi)


def _split(chains: np.ndarray) -> np.ndarray:
    """Halve each chain (dropping a middle draw if odd): C x N -> 2C x N/2."""
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    ranks = rankdata(chains.reshape(-1), method="average").reshape(chains.shape)
    return ndtri((ranks - 0.375) / (chains.size + 0.25))


def _rhat_basic(chains: np.ndarray) -> float:
    m, n = chains.shape
    means = chains.mean(axis=1)
    constant_chains = bool(np.all(chains == chains[:, :1]))
    W = 0.0 if constant_chains else float(chains.var(axis=1, ddof=1).mean())
    B = 0.0 if np.all(means == means[0]) else n * float(means.var(ddof=1))
    if W == 0:
        return math.inf if B > 0 else math.nan
    var_plus = (n - 1) / n * W + B / n
    return math.sqrt(var_plus / W)


def split_rhat(chains) -> float:
    """Rank-normalized split R-hat for one parameter (chains x draws)."""
    chains = _check_chains(chains)
    s = _split(chains)
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat_basic(_rank_normalize(folded))
    if math.isnan(bulk) or math.isnan(tail):
        return bulk if math.isnan(tail) else tail
    return max(bulk, tail)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _ess_basic(chains: np.ndarray) -> float:
    m, n = chains.shape
    acov = np.array([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return math.nan
    mean_acov = acov.mean(axis=0)
    rho = 1.0 - (W - mean_acov) / var_plus
    rho[0] = 1.0
    # Geyer: sum pairs while positive, then enforce monotone decrease
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s <= 0:
            break
        if pair_sums and s > pair_sums[-1]:
            s = pair_sums[-1]
        pair_sums.append(s)
        t += 2
    tau = -1.0 + 2.0 * sum(pair_sums)
    tau = max(tau, 1.0 / math.log10(m * n))
    return m * n / tau


def ess_bulk(chains) -> float:
    chains = _check_chains(chains)
    return _ess_basic(_rank_normalize(_split(chains)))


def _check_chains(chains) -> np.ndarray:
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise ValueError("expected a chains x draws array")
    if chains.shape[0] < 2:
        raise ValueError("R-hat needs at least two chains")
    if chains.shape[1] < 4:
        raise ValueError("need at least four draws per chain")
    return chains


def diagnostics(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-parameter (R-hat, ESS) for a chains x draws x parameters array."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[:, :, None]
    if samples.ndim != 3:
        raise ValueError("expected a chains x draws x parameters array")
    rhat = np.array([split_rhat(samples[:, :, j]) for j in range(samples.shape[2])])
    ess = np.array([ess_bulk(samples[:, :, j]) for j in range(samples.shape[2])])
    return rhat, ess
