"""Sampler diagnostics: effective sample size, between-chain scale
reduction, and a successive-conditional (joint-distribution) correctness
test of the full update cycle."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .posterior import ChainConfig, ChainState, log_posterior, update_lambda, \
    update_latent, update_mixture
from .prior import Priors, stick_weights
from .rng import rng_stream
from .simulate import IncrementSample


def ess_autocorr(trace: np.ndarray) -> float:
    """Effective sample size via the initial-positive-sequence estimator."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 8 or np.allclose(x, x[0]):
        return float(n)
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(n // 2):
        gamma = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if gamma < 0:
            break
        tau += 2.0 * gamma
    tau = max(tau, 1.0)
    return float(n / tau)


def mcmc_se(trace: np.ndarray) -> float:
    """Autocorrelation-adjusted standard error of the trace mean."""
    x = np.asarray(trace, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(max(ess_autocorr(x), 1.0)))


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor across parallel chains."""
    c = np.asarray(chains, dtype=float)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("need at least two chains of equal length")
    m, n = c.shape
    w = c.var(axis=1, ddof=1).mean()
    b = n * c.mean(axis=1).var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(math.sqrt(var_hat / w)) if w > 0 else 1.0


# ----------------------------------------------------------------------
# successive-conditional correctness test
# ----------------------------------------------------------------------

_STAT_NAMES = (
    "lambda", "lambda_sq", "sigma", "sigma_sq", "jump_total", "jump_total_sq",
    "z_sum", "z_sq_sum", "weight_max", "loc_mean",
)


def _forward_draw(priors: Priors, n: int, mesh: float, rng) -> dict:
    lam = float(priors.lam.sample(rng))
    sticks = priors.dpm.sample_sticks(rng)
    weights = stick_weights(sticks)
    locs = priors.dpm.sample_locations(rng)
    sigma = np.atleast_2d(priors.dpm.sample_sigma(rng))
    d = priors.dpm.dim
    counts = rng.poisson(lam * mesh, size=n)
    chol = np.linalg.cholesky(sigma)
    total = int(counts.sum())
    if total:
        comp = rng.choice(weights.size, size=total, p=weights)
        jumps = locs[comp] + rng.standard_normal((total, d)) @ chol.T
    else:
        jumps = np.zeros((0, d))
    z = np.zeros((n, d))
    np.add.at(z, np.repeat(np.arange(n), counts), jumps)
    return {"lambda": lam, "sticks": sticks, "weights": weights, "locs": locs,
            "sigma": sigma, "counts": counts, "jumps": jumps, "z": z}


def _stats(draw: dict) -> np.ndarray:
    s = int(draw["counts"].sum())
    z = draw["z"]
    return np.array([
        draw["lambda"], draw["lambda"] ** 2,
        draw["sigma"][0, 0], draw["sigma"][0, 0] ** 2,
        float(s), float(s) ** 2,
        float(z[:, 0].sum()), float((z[:, 0] ** 2).sum()),
        float(draw["weights"].max()), float(draw["locs"][:, 0].mean()),
    ])


def _state_from_draw(draw: dict, n: int, d: int) -> ChainState:
    free = []
    resid = np.zeros((n, d))
    pos = 0
    for i in range(n):
        t = int(draw["counts"][i])
        grp = draw["jumps"][pos:pos + t]
        pos += t
        if t == 0:
            free.append(np.zeros((0, d)))
        else:
            free.append(grp[:-1].copy())
            resid[i] = draw["z"][i] - grp[:-1].sum(axis=0)
    return ChainState(lambda_=draw["lambda"], sticks=draw["sticks"].copy(),
                      weights=draw["weights"].copy(), locations=draw["locs"].copy(),
                      sigma=draw["sigma"].copy(), free=free,
                      counts=draw["counts"].astype(int).copy(), resid=resid,
                      allocations=np.zeros(0, dtype=int))


def geweke_zscores(priors: Priors, n: int = 3, mesh: float = 1.0,
                   cycles: int = 5000, seed: int = 0, sweeps_per_cycle: int = 2,
                   config: Optional[ChainConfig] = None) -> dict:
    """Compare forward prior-model draws against the successive-conditional
    chain (update cycle + data regeneration). Matching joint distributions
    give z-scores of order one for every tracked statistic.
    """
    config = config or ChainConfig(iterations=1, burn_in=0, thin=1, seed=seed)
    d = priors.dpm.dim

    rng_f = rng_stream(seed, 1)
    fwd = np.stack([_stats(_forward_draw(priors, n, mesh, rng_f))
                    for _ in range(cycles)])

    rng_s = rng_stream(seed, 2)
    draw = _forward_draw(priors, n, mesh, rng_s)
    rows = []
    for _ in range(cycles):
        state = _state_from_draw(draw, n, d)
        sample = IncrementSample(d, mesh, draw["z"])
        for _ in range(sweeps_per_cycle):
            update_latent(state, sample, rng_s, config)
            update_lambda(state, sample, priors.lam, rng_s)
            update_mixture(state, priors.dpm, rng_s)
        # regenerate latents + data given the updated parameters
        draw = _regenerate(state, priors, n, mesh, rng_s)
        rows.append(_stats(draw))
    sc = np.stack(rows)

    out = {}
    for j, name in enumerate(_STAT_NAMES):
        se_f = fwd[:, j].std(ddof=1) / math.sqrt(cycles)
        se_s = mcmc_se(sc[:, j])
        denom = math.sqrt(se_f ** 2 + se_s ** 2)
        out[name] = float((fwd[:, j].mean() - sc[:, j].mean()) / denom) if denom > 0 \
            else 0.0
    return out


def _regenerate(state: ChainState, priors: Priors, n: int, mesh: float, rng) -> dict:
    lam = state.lambda_
    weights = state.weights
    locs = state.locations
    sigma = state.sigma
    d = priors.dpm.dim
    counts = rng.poisson(lam * mesh, size=n)
    total = int(counts.sum())
    chol = np.linalg.cholesky(sigma)
    if total:
        comp = rng.choice(weights.size, size=total, p=weights / weights.sum())
        jumps = locs[comp] + rng.standard_normal((total, d)) @ chol.T
    else:
        jumps = np.zeros((0, d))
    z = np.zeros((n, d))
    np.add.at(z, np.repeat(np.arange(n), counts), jumps)
    return {"lambda": lam, "sticks": state.sticks, "weights": weights,
            "locs": locs, "sigma": sigma, "counts": counts, "jumps": jumps, "z": z}
