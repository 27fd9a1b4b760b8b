"""Posterior sampling by data augmentation.

Each increment is augmented with its latent jump count and jump vectors,
constrained to sum to the observed increment exactly (the last jump is the
residual and its density factor uses the constrained value). Latent moves
are Metropolis-Hastings birth / death / mass-relocation steps; the intensity
then has a truncated-Gamma-shaped full conditional (drawn by slice sampling,
exact regardless of tuning) and the mixture parameters have conjugate full
conditionals given the pooled jumps.

Increments that are exactly zero sit on the atom of the increment law, an
event of positive probability whose only positive-probability explanation
is "no jumps": any configuration of t >= 1 continuous jumps summing to
exactly zero is a null event. The default sampler therefore keeps t_i = 0
frozen at exact zeros (each contributing the factor exp(-lambda*mesh), the
same atom convention the likelihood module uses). ``atom_moves=True``
instead lets atoms trade t = 0 against cancelling-pair configurations
t in {2, 3, ...} via +/- pair birth/death moves; that targets the
Lebesgue-style disintegration at zero, which lets a spiky mixture
re-explain atoms continuously and biases the intensity upward, so it is
off by default.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln
from scipy.stats import invwishart

from .model import NormalMixture
from .prior import DpmPrior, LambdaPrior, Priors, stick_weights
from .rng import rng_stream
from .simulate import IncrementSample

_LOG_2PI = np.log(2.0 * np.pi)


class ChainAbortError(RuntimeError):
    """Raised when the chain reaches a non-finite log posterior."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20_000
    burn_in: int = 5_000
    thin: int = 10
    p_birth: float = 0.3
    p_death: float = 0.3
    p_relocate: float = 0.4
    relocate_scale: float = 1.0
    seed: int = 0
    atom_moves: bool = False

    def __post_init__(self):
        probs = (self.p_birth, self.p_death, self.p_relocate)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("move probabilities must be nonnegative and sum to 1")
        if not (self.iterations > self.burn_in >= 0):
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in
                ("iterations", "burn_in", "thin", "p_birth", "p_death",
                 "p_relocate", "relocate_scale", "seed", "atom_moves")}

    @classmethod
    def from_json(cls, obj: dict) -> "ChainConfig":
        return cls(**{k: obj[k] for k in obj})


class _SharedMixture:
    """Shared-covariance mixture over raw arrays (keeps near-zero sticks)."""

    def __init__(self, weights: np.ndarray, locations: np.ndarray, sigma: np.ndarray):
        self.weights = weights
        self.locations = locations
        self.sigma = sigma
        self.chol = np.linalg.cholesky(sigma)
        d = sigma.shape[0]
        self.log_norm = -0.5 * d * _LOG_2PI - float(np.log(np.diag(self.chol)).sum())
        self.logw = np.log(np.clip(weights, 1e-300, None))
        self._white_locs = solve_triangular(self.chol, locations.T, lower=True, check_finite=False).T

    def component_logliks(self, pts: np.ndarray) -> np.ndarray:
        """(n, K) matrix of log N(y; loc_k, sigma) without the weights."""
        u = solve_triangular(self.chol, pts.T, lower=True, check_finite=False).T
        quad = (np.einsum("ni,ni->n", u, u)[:, None]
                - 2.0 * u @ self._white_locs.T
                + np.einsum("ki,ki->k", self._white_locs, self._white_locs)[None, :])
        return self.log_norm - 0.5 * quad

    def logpdf(self, pts: np.ndarray) -> np.ndarray:
        terms = self.component_logliks(np.atleast_2d(pts)) + self.logw[None, :]
        mx = terms.max(axis=1)
        return mx + np.log(np.exp(terms - mx[:, None]).sum(axis=1))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.weights.size, size=size, p=self.weights / self.weights.sum())
        z = rng.standard_normal((size, self.sigma.shape[0]))
        return self.locations[comp] + z @ self.chol.T


@dataclass
class ChainState:
    """Mutable chain state: intensity, mixture draw, latent configuration."""

    lambda_: float
    sticks: np.ndarray          # (K-1,) stick fractions
    weights: np.ndarray         # (K,)
    locations: np.ndarray       # (K, d)
    sigma: np.ndarray           # (d, d) shared covariance
    free: list                  # per increment, (t_i - 1, d) unconstrained jumps
    counts: np.ndarray          # (n,) latent jump counts t_i
    resid: np.ndarray           # (n, d) residual jump (z_i minus free jumps)
    allocations: np.ndarray     # component label per pooled jump
    log_post: float = np.nan

    @property
    def total_jumps(self) -> int:
        return int(self.counts.sum())

    def mixture(self) -> NormalMixture:
        return NormalMixture(self.weights / self.weights.sum(), self.locations,
                             self.sigma, shared_sigma=True)

    def shared(self) -> _SharedMixture:
        return _SharedMixture(self.weights, self.locations, self.sigma)

    def pooled_jumps(self) -> np.ndarray:
        """All latent jumps (free + residual per active increment), (N, d)."""
        parts = []
        for i in range(self.counts.size):
            if self.counts[i] >= 1:
                parts.append(self.free[i])
                parts.append(self.resid[i][None, :])
        d = self.resid.shape[1]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, d))


def init_chain(sample: IncrementSample, priors: Priors, config: ChainConfig,
               rng: Optional[np.random.Generator] = None) -> ChainState:
    """Initial state: prior-median intensity, prior mixture draw, one latent
    jump per nonzero increment (the residual) and none at exact zeros."""
    rng = rng if rng is not None else rng_stream(config.seed, 0)
    d = sample.dim
    sticks = priors.dpm.sample_sticks(rng)
    locs = priors.dpm.sample_locations(rng)
    sigma = priors.dpm.sample_sigma(rng)
    zeros = sample.zero_mask()
    counts = (~zeros).astype(int)
    free = [np.zeros((0, d)) for _ in range(sample.n)]
    resid = sample.z.copy()
    state = ChainState(
        lambda_=priors.lam.median(), sticks=sticks, weights=stick_weights(sticks),
        locations=locs, sigma=np.atleast_2d(sigma), free=free, counts=counts,
        resid=resid, allocations=np.zeros(0, dtype=int))
    state.log_post = log_posterior(state, sample, priors)
    return state


# ----------------------------------------------------------------------
# Metropolis-Hastings log acceptance ratios for the latent moves
# ----------------------------------------------------------------------

def birth_log_ratio(rate: float, t: int, lr_new_resid: float, lr_resid: float,
                    p_birth: float, p_death: float) -> float:
    """Insert one jump drawn from the current jump density (t >= 1)."""
    return (math.log(p_death / p_birth) + math.log(rate) - math.log(t + 1)
            + lr_new_resid - lr_resid)


def death_log_ratio(rate: float, t: int, lr_merged_resid: float, lr_resid: float,
                    p_birth: float, p_death: float) -> float:
    """Delete one free jump, folding it into the residual (t >= 2)."""
    return (math.log(p_birth / p_death) + math.log(t) - math.log(rate)
            + lr_merged_resid - lr_resid)


def pair_birth_log_ratio(rate: float, lr_neg_u: float,
                         p_birth: float, p_death: float) -> float:
    """At an exact-zero increment, go from no jumps to a cancelling pair."""
    return (math.log(p_death / p_birth) + 2.0 * math.log(rate) - math.log(2.0)
            + lr_neg_u)


def pair_death_log_ratio(rate: float, lr_resid: float,
                         p_birth: float, p_death: float) -> float:
    """Remove the cancelling pair of an exact-zero increment (t == 2)."""
    return (math.log(p_birth / p_death) - 2.0 * math.log(rate) + math.log(2.0)
            - lr_resid)


def relocate_log_ratio(lr_a_new: float, lr_b_new: float,
                       lr_a_old: float, lr_b_old: float) -> float:
    """Move mass delta between two jumps; the pair sum is preserved."""
    return lr_a_new + lr_b_new - lr_a_old - lr_b_old


_BIRTH, _DEATH, _RELOCATE = 0, 1, 2


def update_latent(state: ChainState, sample: IncrementSample,
                  rng: np.random.Generator, config: ChainConfig,
                  counters: Optional[dict] = None) -> ChainState:
    """One sweep: per increment, attempt one birth/death/relocate move.

    Proposal evaluations are batched into a single mixture-density call;
    invalid proposals (e.g. death with nothing to delete) auto-reject.
    """
    n = sample.n
    z = sample.z
    d = sample.dim
    rate = state.lambda_ * sample.mesh
    mix = state.shared()
    zeros = sample.zero_mask()
    moves = rng.choice(3, size=n, p=[config.p_birth, config.p_death, config.p_relocate])
    log_u = np.log(rng.random(n))
    n_birth = int(np.sum(moves == _BIRTH))
    births = mix.sample(rng, size=max(n_birth, 1))[:n_birth]
    u_death = rng.random(n)
    u_pair = rng.random((n, 2))
    n_reloc = int(np.sum(moves == _RELOCATE))
    deltas = (config.relocate_scale
              * rng.standard_normal((max(n_reloc, 1), d)) @ mix.chol.T)[:n_reloc]

    pts: list = []
    plan: list = []
    b_ix = r_ix = 0
    for i in range(n):
        if zeros[i] and not config.atom_moves:
            continue  # the atom's only positive-probability explanation is t = 0
        t = int(state.counts[i])
        mv = moves[i]
        if mv == _BIRTH:
            u = births[b_ix]
            b_ix += 1
            if t == 0:
                plan.append((i, "pair_birth", u, len(pts)))
                pts.append(-u)
            else:
                w = state.resid[i]
                plan.append((i, "birth", u, len(pts)))
                pts.append(w - u)
                pts.append(w)
        elif mv == _DEATH:
            if t == 0 or (not zeros[i] and t == 1):
                plan.append((i, "reject_death", None, -1))
            elif zeros[i] and t == 2:
                plan.append((i, "pair_death", None, len(pts)))
                pts.append(state.resid[i])
            else:
                j = int(u_death[i] * (t - 1))
                w = state.resid[i]
                plan.append((i, "death", j, len(pts)))
                pts.append(w + state.free[i][j])
                pts.append(w)
        else:
            if t < 2:
                plan.append((i, "reject_relocate", None, -1))
                continue
            a = int(u_pair[i, 0] * t)
            b = int(u_pair[i, 1] * (t - 1))
            b += b >= a
            delta = deltas[r_ix]
            r_ix += 1
            ya = state.resid[i] if a == t - 1 else state.free[i][a]
            yb = state.resid[i] if b == t - 1 else state.free[i][b]
            plan.append((i, "relocate", (a, b, delta), len(pts)))
            pts.extend([ya + delta, yb - delta, ya, yb])

    lr = mix.logpdf(np.asarray(pts)) if pts else np.zeros(0)
    pb, pd_, log_rate = config.p_birth, config.p_death, math.log(rate)

    for i, kind, info, k in plan:
        t = int(state.counts[i])
        if kind == "reject_death":
            _tick(counters, "death", False)
            continue
        if kind == "reject_relocate":
            _tick(counters, "relocate", False)
            continue
        if kind == "pair_birth":
            la = pair_birth_log_ratio(rate, lr[k], pb, pd_)
            ok = log_u[i] < la
            if ok:
                state.free[i] = info[None, :].copy()
                state.counts[i] = 2
                state.resid[i] = z[i] - info
            _tick(counters, "birth", ok)
        elif kind == "birth":
            la = birth_log_ratio(rate, t, lr[k], lr[k + 1], pb, pd_)
            ok = log_u[i] < la
            if ok:
                state.free[i] = np.vstack([state.free[i], info[None, :]])
                state.counts[i] = t + 1
                state.resid[i] = z[i] - state.free[i].sum(axis=0)
            _tick(counters, "birth", ok)
        elif kind == "pair_death":
            la = pair_death_log_ratio(rate, lr[k], pb, pd_)
            ok = log_u[i] < la
            if ok:
                state.free[i] = np.zeros((0, d))
                state.counts[i] = 0
                state.resid[i] = np.zeros(d)
            _tick(counters, "death", ok)
        elif kind == "death":
            la = death_log_ratio(rate, t, lr[k], lr[k + 1], pb, pd_)
            ok = log_u[i] < la
            if ok:
                state.free[i] = np.delete(state.free[i], info, axis=0)
                state.counts[i] = t - 1
                state.resid[i] = z[i] - state.free[i].sum(axis=0)
            _tick(counters, "death", ok)
        else:
            a, b, delta = info
            la = relocate_log_ratio(lr[k], lr[k + 1], lr[k + 2], lr[k + 3])
            ok = log_u[i] < la
            if ok:
                if a < t - 1:
                    state.free[i][a] += delta
                if b < t - 1:
                    state.free[i][b] -= delta
                state.resid[i] = z[i] - state.free[i].sum(axis=0)
            _tick(counters, "relocate", ok)
    return state


def _tick(counters, kind, accepted):
    if counters is not None:
        counters[kind]["attempts"] += 1
        counters[kind]["accepts"] += int(accepted)


def update_lambda(state: ChainState, sample: IncrementSample, prior: LambdaPrior,
                  rng: np.random.Generator) -> ChainState:
    """Slice-sample the intensity from its full conditional
    lambda^S exp(-n*mesh*lambda) * prior(lambda) on [lo, hi]."""
    s = state.total_jumps
    scale = sample.n * sample.mesh

    def logf(lam: float) -> float:
        return s * math.log(lam) - scale * lam + prior.logpdf(lam)

    state.lambda_ = _slice_bounded(logf, state.lambda_, prior.lo, prior.hi, rng)
    return state


def _slice_bounded(logf, x0: float, lo: float, hi: float,
                   rng: np.random.Generator) -> float:
    """Shrinkage slice sampler on a bounded interval (no step-out needed)."""
    y = logf(x0) + math.log(rng.random())
    left, right = lo, hi
    while True:
        x1 = rng.uniform(left, right)
        if logf(x1) >= y:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1


def update_mixture(state: ChainState, prior: DpmPrior,
                   rng: np.random.Generator) -> ChainState:
    """Blocked Gibbs update of (allocations, sticks, locations, covariance)
    treating the pooled latent jumps as i.i.d. mixture data. With no jumps
    every conditional reduces to its prior."""
    y = state.pooled_jumps()
    n_jumps = y.shape[0]
    k = prior.truncation_k
    d = prior.dim

    if n_jumps == 0:
        alloc = np.zeros(0, dtype=int)
        n_k = np.zeros(k, dtype=int)
    else:
        mix = state.shared()
        logp = mix.component_logliks(y) + mix.logw[None, :]
        gumbel = -np.log(-np.log(rng.random(logp.shape)))
        alloc = np.argmax(logp + gumbel, axis=1)
        n_k = np.bincount(alloc, minlength=k)

    # sticks: Beta(1 + n_k, conc + jumps allocated beyond k)
    tail = (np.cumsum(n_k[::-1])[::-1] - n_k)[:-1]
    state.sticks = rng.beta(1.0 + n_k[:-1], prior.concentration + tail)
    state.weights = stick_weights(state.sticks)

    # locations: Gaussian conjugacy against the base measure
    base_prec = np.linalg.inv(prior.base_cov)
    base_term = base_prec @ prior.base_mean
    sig_prec = np.linalg.inv(state.sigma)
    locs = np.empty((k, d))
    noise = rng.standard_normal((k, d))
    for kk in range(k):
        if n_k[kk] == 0:
            cov = prior.base_cov
            mean = prior.base_mean
        else:
            prec = base_prec + n_k[kk] * sig_prec
            cov = np.linalg.inv(prec)
            mean = cov @ (base_term + sig_prec @ y[alloc == kk].sum(axis=0))
        locs[kk] = mean + np.linalg.cholesky(cov) @ noise[kk]
    state.locations = locs

    # shared covariance: inverse Wishart conjugacy on the residuals
    if n_jumps:
        dev = y - locs[alloc]
        scatter = dev.T @ dev
    else:
        scatter = np.zeros((d, d))
    state.sigma = np.atleast_2d(invwishart.rvs(
        df=prior.iw_df + n_jumps, scale=prior.iw_scale + scatter, random_state=rng))
    state.allocations = alloc
    return state


def log_posterior(state: ChainState, sample: IncrementSample, priors: Priors) -> float:
    """Unnormalized log posterior of the augmented state (trace statistic)."""
    rate = state.lambda_ * sample.mesh
    counts = state.counts
    out = float(np.sum(counts) * math.log(rate) - sample.n * rate
                - gammaln(counts + 1).sum())
    y = state.pooled_jumps()
    if y.shape[0]:
        out += float(np.sum(state.shared().logpdf(y)))
    out += priors.lam.logpdf(state.lambda_)
    conc = priors.dpm.concentration
    out += float(np.sum(math.log(conc) + (conc - 1.0) * np.log1p(-state.sticks)))
    base_chol = np.linalg.cholesky(priors.dpm.base_cov)
    white = solve_triangular(base_chol, (state.locations - priors.dpm.base_mean).T,
                             lower=True)
    out += float(-0.5 * np.sum(white ** 2)
                 - state.locations.shape[0]
                 * (0.5 * priors.dpm.dim * _LOG_2PI
                    + np.log(np.diag(base_chol)).sum()))
    out += float(invwishart.logpdf(state.sigma, df=priors.dpm.iw_df,
                                   scale=priors.dpm.iw_scale))
    return out


# ----------------------------------------------------------------------
# full chain
# ----------------------------------------------------------------------

@dataclass
class ChainOutput:
    config: ChainConfig
    lambda_trace: np.ndarray
    jump_count_trace: np.ndarray
    log_post_trace: np.ndarray
    retained: list            # dicts: iter, lambda, jump_count_total, mixture, log_post
    acceptance: dict
    ess_lambda: float
    runtime_seconds: float

    def retained_lambdas(self) -> np.ndarray:
        return np.array([r["lambda"] for r in self.retained])


def run_chain(sample: IncrementSample, priors: Priors, config: ChainConfig,
              rng: Optional[np.random.Generator] = None, stream: int = 0,
              init: Optional[ChainState] = None) -> ChainOutput:
    """Cycle latent -> intensity -> mixture updates, recording thinned states.

    Aborts with a diagnostic dump if the log posterior turns non-finite.
    """
    from .diagnostics import ess_autocorr

    rng = rng if rng is not None else rng_stream(config.seed, stream)
    t0 = time.perf_counter()
    state = init if init is not None else init_chain(sample, priors, config, rng)

    def dump(it):
        return {"iteration": it, "lambda": state.lambda_,
                "jump_count_total": state.total_jumps,
                "sigma": state.sigma.tolist(),
                "weights": state.weights.tolist(),
                "lambda_trace": lam_trace[:max(it, 0)].tolist()}

    counters = {k: {"attempts": 0, "accepts": 0} for k in ("birth", "death", "relocate")}
    lam_trace = np.empty(config.iterations)
    count_trace = np.empty(config.iterations, dtype=int)
    lp_trace = np.empty(config.iterations)
    retained = []
    if not np.isfinite(log_posterior(state, sample, priors)):
        raise ChainAbortError("non-finite log posterior at initialization", dump(-1))
    for it in range(config.iterations):
        try:
            update_latent(state, sample, rng, config, counters)
            update_lambda(state, sample, priors.lam, rng)
            update_mixture(state, priors.dpm, rng)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise ChainAbortError(
                f"numerical failure at iteration {it}: {exc}", dump(it)) from exc
        state.log_post = log_posterior(state, sample, priors)
        lam_trace[it] = state.lambda_
        count_trace[it] = state.total_jumps
        lp_trace[it] = state.log_post
        if not np.isfinite(state.log_post):
            raise ChainAbortError(
                f"non-finite log posterior at iteration {it}", dump(it))
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            retained.append({
                "iter": it,
                "lambda": state.lambda_,
                "jump_count_total": state.total_jumps,
                "mixture": state.mixture(),
                "log_post": state.log_post,
            })
    acc = {kind: (c["accepts"] / c["attempts"] if c["attempts"] else 0.0)
           for kind, c in counters.items()}
    post = lam_trace[config.burn_in:]
    output = ChainOutput(
        config=config, lambda_trace=lam_trace, jump_count_trace=count_trace,
        log_post_trace=lp_trace, retained=retained,
        acceptance={"rates": acc, "counts": counters},
        ess_lambda=ess_autocorr(post), runtime_seconds=time.perf_counter() - t0)
    return output


def posterior_mean_density(output: ChainOutput, grid) -> dict:
    """Pointwise average of retained mixture densities with a 5%/95% band."""
    if not output.retained:
        raise ValueError("no retained states")
    nodes = grid.nodes()
    vals = np.stack([np.exp(r["mixture"].logpdf(nodes)) for r in output.retained])
    return {
        "mean": vals.mean(axis=0),
        "q05": np.quantile(vals, 0.05, axis=0),
        "q95": np.quantile(vals, 0.95, axis=0),
    }
