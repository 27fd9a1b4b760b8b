"""Increment-law density, sample log-likelihood, and path likelihood ratios.

The law of one increment is a mixture of a point mass at the exact zero
vector (no jumps in the interval, mass e^{-lambda*mesh}) and an absolutely
continuous part equal to the Poisson-weighted series of m-fold
self-convolutions of the jump density. Densities here are taken with respect
to the fixed dominating measure (delta_0 + Lebesgue); likelihood *ratios*
between models are unaffected by that convention, and ratios are all the
inference machinery needs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from .model import CppModel, Grid, NormalMixture, _merge_and_prune
from .simulate import IncrementSample, SamplePath

_LOG_FLOOR = np.log(1e-300)


def poisson_truncation(rate: float, tail_tol: float, floor: int = 10) -> int:
    """Smallest M with P(Poisson(rate) > M) < tail_tol, at least ``floor``."""
    m = max(floor, int(rate))
    while poisson.sf(m, rate) >= tail_tol:
        m += 1
    return m


class IncrementDensity:
    """Evaluator for the increment law of a compound Poisson model.

    The continuous part is evaluated by one of three routes, recorded in
    ``route``:

    * ``mixture`` -- exact convolution algebra with duplicate merging and
      weight pruning (any dimension; pruned mass in ``prune_loss``),
    * ``grid_fft`` -- characteristic-function exponentiation on a grid with
      log-domain interpolation (dim <= 2; no series truncation),
    * ``monte_carlo`` -- partial-sum averaging of the convolution series
      (any dimension; used above dim 2).

    ``route="auto"`` keeps the exact algebra while the component budget
    permits and falls back to the other routes otherwise.
    """

    def __init__(self, model: CppModel, mesh: float = 1.0, tail_tol: float = 1e-10,
                 truncation: int | None = None, max_components: int = 4096,
                 prune_tol: float = 1e-10, route: str = "auto",
                 grid_points: int | None = None, mc_draws: int = 10_000,
                 rng: np.random.Generator | None = None):
        if mesh <= 0:
            raise ValueError("mesh must be positive")
        if route not in ("auto", "mixture", "grid_fft", "monte_carlo"):
            raise ValueError(f"unknown route {route!r}")
        self.model = model
        self.mesh = float(mesh)
        self.rate = model.lambda_ * self.mesh
        self.atom_mass = float(np.exp(-self.rate))
        self.tail_tol = tail_tol
        self.M = int(truncation) if truncation is not None else \
            poisson_truncation(self.rate, tail_tol)
        if self.M < 1:
            raise ValueError("truncation must be >= 1")
        self.tail_mass = float(poisson.sf(self.M, self.rate))
        self.max_components = max_components
        self.prune_tol = prune_tol
        self.prune_loss = 0.0
        self._log_pois = (-self.rate + np.arange(1, self.M + 1) * np.log(self.rate)
                          - gammaln(np.arange(2, self.M + 2)))
        self._powers: list[NormalMixture] | None = None
        self._table = None
        self._psums = None

        self.route = self._build(route, grid_points, mc_draws, rng)
        # tail bound: sup_x r^{*m}(x) <= sup_x r(x) for every m
        self.truncation_error_bound = (0.0 if self.route == "grid_fft"
                                       else self.tail_mass * model.jumps.peak_bound())

    # ------------------------------------------------------------------
    # construction of the evaluation backend
    # ------------------------------------------------------------------

    def _build(self, route: str, grid_points, mc_draws, rng) -> str:
        if route in ("auto", "mixture"):
            ok = self._build_mixture_cache(forced=(route == "mixture"))
            if ok:
                return "mixture"
        if route == "grid_fft" or (route == "auto" and self.model.dim <= 2):
            self._build_fft_table(grid_points)
            return "grid_fft"
        self._build_partial_sums(mc_draws, rng)
        return "monte_carlo"

    def _build_mixture_cache(self, forced: bool) -> bool:
        base = self.model.jumps
        cap = self.max_components if forced else 2**30
        powers = [base]
        lost = 0.0
        for _ in range(self.M - 1):
            nxt = powers[-1].convolve(base)
            nxt, dropped = _merge_and_prune(nxt, cap, self.prune_tol, 1e-9)
            if not forced and nxt.n_components > self.max_components:
                return False  # budget exceeded: let auto fall back
            lost += dropped
            powers.append(nxt)
        self._powers = powers
        self.prune_loss = lost
        return True

    def _fft_box(self) -> tuple[np.ndarray, np.ndarray]:
        jumps = self.model.jumps
        mu = jumps.means
        var = np.einsum("kii->ki", jumps.covariances)
        spread = 8.0 * np.sqrt(self.M * var.max(axis=0))
        lo = np.minimum(0.0, self.M * np.minimum(0.0, mu.min(axis=0))) - spread
        hi = np.maximum(0.0, self.M * np.maximum(0.0, mu.max(axis=0))) + spread
        lo = np.minimum(lo, (mu - spread).min(axis=0))
        hi = np.maximum(hi, (mu + spread).max(axis=0))
        return lo, hi

    def _build_fft_table(self, grid_points) -> None:
        d = self.model.dim
        if d > 2:
            raise ValueError("grid_fft route supports dim <= 2 only")
        g = grid_points or (4096 if d == 1 else 512)
        lo, hi = self._fft_box()
        # place the origin exactly on a node so index shifts are physical shifts
        axes = []
        origin = []
        for a in range(d):
            h = (hi[a] - lo[a]) / (g - 1)
            j0 = int(np.clip(np.round(-lo[a] / h), 0, g - 1))
            axes.append((np.arange(g) - j0) * h)
            origin.append(j0)
        cell = float(np.prod([ax[1] - ax[0] for ax in axes]))
        if d == 1:
            nodes = axes[0][:, None]
        else:
            xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
            nodes = np.column_stack([xx.ravel(), yy.ravel()])
        pmf = np.exp(self.model.jumps.logpdf(nodes)).reshape([g] * d) * cell
        for a in range(d):
            pmf = np.roll(pmf, -origin[a], axis=a)
        # continuous part of the compound law in Fourier domain:
        # exp(-rate) * (exp(rate * fft(r)) - 1) sums the whole series at once
        f = np.fft.fftn(pmf)
        kf = np.exp(-self.rate) * (np.exp(self.rate * f) - 1.0)
        dens = np.real(np.fft.ifftn(kf)) / cell
        for a in range(d):
            dens = np.roll(dens, origin[a], axis=a)
        logtab = np.log(np.clip(dens, 1e-300, None))
        itp = None
        if d == 2:
            from scipy.interpolate import RegularGridInterpolator
            itp = RegularGridInterpolator(axes, logtab, method="linear")
        self._table = (axes, logtab, itp)

    def _build_partial_sums(self, mc_draws: int, rng) -> None:
        if rng is None:
            raise ValueError("monte_carlo route needs an explicit rng")
        draws = self.model.jumps.sample(rng, size=mc_draws * (self.M - 1)) if self.M > 1 \
            else np.zeros((0, self.model.dim))
        draws = draws.reshape(self.M - 1, mc_draws, self.model.dim) if self.M > 1 else draws
        # psums[m] holds mc_draws realizations of Y_1 + ... + Y_m (m = 0..M-1)
        psums = np.zeros((self.M, mc_draws, self.model.dim))
        if self.M > 1:
            np.cumsum(draws, axis=0, out=psums[1:])
        self._psums = psums
        self._mc_draws = mc_draws

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def continuous_logpdf(self, x) -> np.ndarray:
        """Log of the continuous (Lebesgue) part at points x of shape (n, d)."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != self.model.dim:
            raise ValueError("point dimension does not match the model")
        if self.route == "mixture":
            terms = np.stack([lp + pw.logpdf(pts)
                              for lp, pw in zip(self._log_pois, self._powers)])
            return logsumexp(terms, axis=0)
        if self.route == "grid_fft":
            return self._interp_log(pts)
        return self._mc_logpdf(pts)

    def continuous_pdf(self, x) -> np.ndarray:
        return np.exp(self.continuous_logpdf(x))

    def density(self, x) -> tuple[bool, float]:
        """(is_atom, value): point mass at the exact zero vector, else density."""
        v = np.asarray(x, dtype=float)
        if v.shape != (self.model.dim,):
            raise ValueError("x must be a single d-vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("x must be finite")
        if np.all(v == 0.0):
            return True, self.atom_mass
        return False, float(np.exp(self.continuous_logpdf(v[None, :])[0]))

    def _interp_log(self, pts: np.ndarray) -> np.ndarray:
        axes, logtab, itp = self._table
        d = self.model.dim
        inside = np.ones(pts.shape[0], dtype=bool)
        for a in range(d):
            inside &= (pts[:, a] >= axes[a][0]) & (pts[:, a] <= axes[a][-1])
        out = np.empty(pts.shape[0])
        if np.any(inside):
            p = pts[inside]
            if d == 1:
                out[inside] = np.interp(p[:, 0], axes[0], logtab)
            else:
                out[inside] = itp(p)
        if np.any(~inside):
            # beyond the table the single-jump term lower-bounds the series
            out[~inside] = self._log_pois[0] + self.model.jumps.logpdf(pts[~inside])
        return np.maximum(out, _LOG_FLOOR)

    def _mc_logpdf(self, pts: np.ndarray) -> np.ndarray:
        n = pts.shape[0]
        out = np.full((self.M, n), -np.inf)
        logn = np.log(self._mc_draws)
        for m in range(self.M):
            shifted = pts[:, None, :] - self._psums[m][None, :, :]
            lp = self.model.jumps.logpdf(shifted.reshape(-1, self.model.dim))
            out[m] = logsumexp(lp.reshape(n, self._mc_draws), axis=1) - logn \
                + self._log_pois[m]
        return logsumexp(out, axis=0)

    def native_grid(self, points: int | None = None) -> Grid:
        """Grid on which the continuous part is naturally tabulated; for the
        grid_fft route this matches the internal table so evaluation there is
        interpolation-free."""
        d = self.model.dim
        if self.route == "grid_fft":
            axes = self._table[0]
            return Grid(d, tuple(float(ax[0]) for ax in axes),
                        tuple(float(ax[-1]) for ax in axes), axes[0].size)
        lo, hi = self._fft_box()
        pts = points or (4096 if d == 1 else 512)
        return Grid(d, tuple(lo), tuple(hi), pts)

    def density_grid(self, grid: Grid) -> tuple[np.ndarray, dict]:
        """Continuous part on grid nodes, plus evaluation metadata."""
        if grid.dim != self.model.dim:
            raise ValueError("grid dimension does not match the model")
        values = np.exp(self.continuous_logpdf(grid.nodes()))
        meta = {
            "M": self.M,
            "tail_mass": self.tail_mass,
            "route": self.route,
            "prune_loss": self.prune_loss,
            "atom_mass": self.atom_mass,
        }
        return values, meta


def log_likelihood(sample: IncrementSample, model: CppModel, **density_kwargs) -> float:
    """Log-likelihood of the increments under the (delta_0 + Lebesgue) convention.

    Zero increments contribute log of the atom mass (= -lambda*mesh each);
    nonzero increments contribute the log continuous density. Finite for any
    finite sample.
    """
    if sample.dim != model.dim:
        raise ValueError("sample dimension does not match the model")
    zeros = sample.zero_mask()
    rate = model.lambda_ * sample.mesh
    total = -rate * float(np.sum(zeros))
    if np.any(~zeros):
        dens = IncrementDensity(model, mesh=sample.mesh, **density_kwargs)
        total += float(np.sum(dens.continuous_logpdf(sample.z[~zeros])))
    return total


def path_log_likelihood_ratio(path: SamplePath, num: CppModel, den: CppModel) -> float:
    """Log of dR_num/dR_den along one observed path.

    Sum over jumps of log(lambda_num r_num / (lambda_den r_den)) minus
    (lambda_num - lambda_den) * horizon; exactly zero when num == den.
    """
    drift = -(num.lambda_ - den.lambda_) * path.horizon
    if path.n_jumps == 0:
        return drift
    lr = (np.log(num.lambda_) + num.jumps.logpdf(path.jump_values)
          - np.log(den.lambda_) - den.jumps.logpdf(path.jump_values))
    return float(np.sum(lr) + drift)
