"""Core model types: finite normal mixtures and compound-Poisson models.

The mixture class is closed under convolution, which is what makes the
increment-density series computable: the m-fold self-convolution of a finite
normal mixture is again a finite normal mixture, with component counts kept
in check by exact duplicate merging and weight pruning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)
_WEIGHT_FLOOR = 1e-15


def _as_matrix_stack(covs, k: int, dim: int) -> np.ndarray:
    a = np.asarray(covs, dtype=float)
    if a.ndim == 2:
        a = np.broadcast_to(a, (k, dim, dim)).copy()
    if a.shape != (k, dim, dim):
        raise ValueError(f"expected {k} covariance matrices of size {dim}x{dim}")
    return a


class NormalMixture:
    """Finite mixture of d-variate Gaussians, sum_i w_i N(mu_i, Sigma_i).

    Weights must be positive and sum to one; covariances symmetric positive
    definite. Components with weight below 1e-15 are dropped at construction
    (an all-dropped mixture is an error). A Cholesky factor per component is
    computed once here, since density evaluation dominates runtime downstream.

    Instances are immutable; all operations return new objects.
    """

    def __init__(self, weights, means, covariances, shared_sigma: bool = False):
        w = np.atleast_1d(np.asarray(weights, dtype=float)).copy()
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None] if w.size == mu.size else mu[None, :]
        if mu.ndim != 2 or mu.shape[0] != w.size:
            raise ValueError("means must be one d-vector per weight")
        k, dim = mu.shape
        if shared_sigma:
            c = np.asarray(covariances, dtype=float)
            if c.ndim == 3:
                if not np.allclose(c, c[0], rtol=0, atol=1e-12):
                    raise ValueError("shared_sigma=True but covariances differ")
                c = c[0]
            if c.shape != (dim, dim):
                raise ValueError("shared covariance must be d x d")
            cov = np.broadcast_to(c, (k, dim, dim))
        else:
            cov = _as_matrix_stack(covariances, k, dim)

        if np.any(w <= 0):
            raise ValueError("mixture weights must be strictly positive")
        total = w.sum()
        if not np.isfinite(total) or abs(total - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")
        if np.max(np.abs(cov - np.swapaxes(cov, -1, -2))) > 1e-12:
            raise ValueError("covariances must be symmetric within 1e-12")

        keep = w > _WEIGHT_FLOOR
        if not np.any(keep):
            raise ValueError("all mixture components below the weight floor")
        w, mu, cov = w[keep], mu[keep], cov[keep]
        w = w / w.sum()

        self.dim = int(dim)
        self.weights = w
        self.means = mu
        self.shared_sigma = bool(shared_sigma)
        if self.shared_sigma:
            sig = np.array(cov[0])
            self._chol_shared = _spd_cholesky(sig)
            self.covariances = np.broadcast_to(sig, (w.size, dim, dim))
            self._chols = np.broadcast_to(self._chol_shared, (w.size, dim, dim))
        else:
            self.covariances = np.ascontiguousarray(cov)
            self._chols = np.linalg.cholesky(self.covariances)  # raises if not PD
            self._chol_shared = None
        # log of (2 pi)^{-d/2} |Sigma|^{-1/2} per component
        diag = np.einsum("kii->ki", self._chols)
        self._log_norms = -0.5 * dim * _LOG_2PI - np.log(diag).sum(axis=1)
        self.weights.setflags(write=False)
        self.means.setflags(write=False)

    # ------------------------------------------------------------------
    # density
    # ------------------------------------------------------------------

    @property
    def n_components(self) -> int:
        return self.weights.size

    def logpdf(self, x) -> Union[float, np.ndarray]:
        """Log density at x (shape (d,) or (n, d)); never -inf for finite x."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        if pts.shape[-1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[-1]}, mixture has {self.dim}")
        out = _mixture_logpdf(pts, self.weights, self.means, self._chols,
                              self._log_norms, self._chol_shared)
        return float(out[0]) if single else out

    def pdf(self, x) -> Union[float, np.ndarray]:
        return np.exp(self.logpdf(x))

    def peak_bound(self) -> float:
        """Upper bound on sup_x pdf(x): sum_i w_i (2 pi)^{-d/2} |Sigma_i|^{-1/2}."""
        return float(np.sum(self.weights * np.exp(self._log_norms)))

    # ------------------------------------------------------------------
    # moments
    # ------------------------------------------------------------------

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def cov(self) -> np.ndarray:
        m = self.mean()
        second = np.einsum("k,kij->ij", self.weights, self.covariances)
        second += np.einsum("k,ki,kj->ij", self.weights, self.means, self.means)
        return second - np.outer(m, m)

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw from the mixture; returns (d,) for size=None, else (size, d)."""
        n = 1 if size is None else int(size)
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        if self.shared_sigma or self.n_components == 1:
            out = self.means[comp] + z @ self._chols[0].T
        else:
            for k in np.unique(comp):
                rows = comp == k
                out[rows] = self.means[k] + z[rows] @ self._chols[k].T
        return out[0] if size is None else out

    # ------------------------------------------------------------------
    # convolution algebra
    # ------------------------------------------------------------------

    def convolve(self, other: "NormalMixture") -> "NormalMixture":
        """Density of X + Y for independent X ~ self, Y ~ other.

        Components are all pairs (w_i v_j, mu_i + nu_j, Sigma_i + Lambda_j).
        """
        if self.dim != other.dim:
            raise ValueError("cannot convolve mixtures of different dimension")
        w = np.outer(self.weights, other.weights).ravel()
        mu = (self.means[:, None, :] + other.means[None, :, :]).reshape(-1, self.dim)
        if self.shared_sigma and other.shared_sigma:
            sig = self.covariances[0] + other.covariances[0]
            return NormalMixture(w, mu, sig, shared_sigma=True)
        cov = (self.covariances[:, None] + other.covariances[None, :]).reshape(
            -1, self.dim, self.dim)
        return NormalMixture(w, mu, cov)

    def self_convolve(self, k: int, max_components: int = 4096,
                      prune_tol: float = 1e-10, merge_tol: float = 1e-9,
                      ) -> tuple["NormalMixture", float]:
        """k-fold self-convolution (density of Y_1 + ... + Y_k).

        Exact pairwise convolution while the component count stays within
        ``max_components``; between steps, exact duplicates are merged
        (weights added; lattice-valued means collapse combinatorial growth)
        and then the smallest weights are greedily pruned. Returns the result
        together with the total pruned mass, which bounds the L1 error.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if k == 1:
            return self, 0.0
        out = self
        lost = 0.0
        for _ in range(k - 1):
            out = out.convolve(self)
            out, dropped = _merge_and_prune(out, max_components, prune_tol, merge_tol)
            lost += dropped
        return out, lost

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_json(self) -> dict:
        covs = [self.covariances[0].tolist()] if self.shared_sigma else \
            [c.tolist() for c in self.covariances]
        return {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": covs,
            "shared_sigma": self.shared_sigma,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormalMixture":
        shared = bool(obj.get("shared_sigma", False))
        covs = np.asarray(obj["covariances"], dtype=float)
        if shared and covs.shape[0] == 1:
            covs = covs[0]
        return cls(obj["weights"], obj["means"], covs, shared_sigma=shared)

    def __repr__(self) -> str:
        return (f"NormalMixture(dim={self.dim}, components={self.n_components}, "
                f"shared_sigma={self.shared_sigma})")


def gaussian(mean, cov) -> NormalMixture:
    """Single-component mixture N(mean, cov); accepts scalars in d=1."""
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    sig = np.asarray(cov, dtype=float)
    if sig.ndim == 0:
        sig = sig[None, None]
    return NormalMixture([1.0], mu[None, :], sig[None, :, :])


def _spd_cholesky(sig: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sig)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc


def _mixture_logpdf(pts, weights, means, chols, log_norms, chol_shared,
                    block: int = 512) -> np.ndarray:
    """Streaming log-sum-exp over components; memory O(n_points * block)."""
    n = pts.shape[0]
    k = weights.size
    logw = np.log(weights)
    run_max = np.full(n, -np.inf)
    run_sum = np.zeros(n)
    if chol_shared is not None:
        # shared factor: whiten points and means once, then pairwise sq dists
        from scipy.linalg import solve_triangular
        u = solve_triangular(chol_shared, pts.T, lower=True, check_finite=False).T
        v = solve_triangular(chol_shared, means.T, lower=True, check_finite=False).T
        u2 = np.einsum("ni,ni->n", u, u)
        for start in range(0, k, block):
            sl = slice(start, min(start + block, k))
            vb = v[sl]
            quad = u2[:, None] - 2.0 * u @ vb.T + np.einsum("ki,ki->k", vb, vb)[None, :]
            terms = logw[sl] + log_norms[sl] - 0.5 * quad
            run_max, run_sum = _lse_accumulate(run_max, run_sum, terms)
    else:
        from scipy.linalg import solve_triangular
        for start in range(0, k, block):
            sl = slice(start, min(start + block, k))
            terms = np.empty((n, sl.stop - sl.start))
            for j, kk in enumerate(range(sl.start, sl.stop)):
                z = solve_triangular(chols[kk], (pts - means[kk]).T, lower=True, check_finite=False)
                terms[:, j] = logw[kk] + log_norms[kk] - 0.5 * np.einsum("in,in->n", z, z)
            run_max, run_sum = _lse_accumulate(run_max, run_sum, terms)
    return run_max + np.log(run_sum)


def _lse_accumulate(run_max, run_sum, terms):
    blk_max = terms.max(axis=1)
    new_max = np.maximum(run_max, blk_max)
    scale = np.exp(run_max - new_max, where=np.isfinite(run_max), out=np.zeros_like(run_max))
    run_sum = run_sum * scale + np.exp(terms - new_max[:, None]).sum(axis=1)
    return new_max, run_sum


def _merge_and_prune(m: NormalMixture, max_components: int, prune_tol: float,
                     merge_tol: float) -> tuple[NormalMixture, float]:
    w, mu = m.weights, m.means
    # merge components identical up to merge_tol (weighted-average representative)
    keys = np.round(mu / merge_tol).astype(np.int64)
    if not m.shared_sigma:
        ck = np.round(m.covariances.reshape(mu.shape[0], -1) / merge_tol).astype(np.int64)
        keys = np.concatenate([keys, ck], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    if uniq.shape[0] < w.size:
        wm = np.bincount(inverse, weights=w)
        mum = np.zeros((uniq.shape[0], m.dim))
        for a in range(m.dim):
            mum[:, a] = np.bincount(inverse, weights=w * mu[:, a]) / wm
        if m.shared_sigma:
            covm = m.covariances[0]
        else:
            covm = np.zeros((uniq.shape[0], m.dim, m.dim))
            flat = m.covariances.reshape(w.size, -1)
            for a in range(flat.shape[1]):
                covm.reshape(uniq.shape[0], -1)[:, a] = \
                    np.bincount(inverse, weights=w * flat[:, a]) / wm
        w, mu, cov = wm, mum, covm
    else:
        cov = m.covariances[0] if m.shared_sigma else m.covariances

    # greedy prune: drop the largest tail of smallest weights with mass <= prune_tol,
    # then enforce the hard component cap
    order = np.argsort(w)
    cum = np.cumsum(w[order])
    n_drop = int(np.searchsorted(cum, prune_tol, side="right"))
    n_drop = max(n_drop, w.size - max_components)
    lost = 0.0
    if n_drop > 0:
        lost = float(cum[n_drop - 1])
        keep = np.sort(order[n_drop:])
        w, mu = w[keep], mu[keep]
        if not m.shared_sigma:
            cov = cov[keep]
    w = w / w.sum()
    return NormalMixture(w, mu, cov, shared_sigma=m.shared_sigma), lost


@dataclass(frozen=True)
class CppModel:
    """Compound Poisson model: jump intensity and jump-size density."""

    lambda_: float
    jumps: NormalMixture

    def __post_init__(self):
        if not (np.isfinite(self.lambda_) and self.lambda_ > 0):
            raise ValueError("lambda must be a positive real number")

    @property
    def dim(self) -> int:
        return self.jumps.dim

    def to_json(self) -> dict:
        return {"lambda": self.lambda_, "jumps": self.jumps.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "CppModel":
        return cls(float(obj["lambda"]), NormalMixture.from_json(obj["jumps"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)

    @classmethod
    def load(cls, path) -> "CppModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Grid:
    """Regular tensor grid on a box, for quadrature and plots (dim <= 2)."""

    dim: int
    lo: tuple
    hi: tuple
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("grid quadrature supports dim 1 or 2 only")
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != self.dim or len(hi) != self.dim:
            raise ValueError("lo/hi must have one bound per axis")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("grid bounds must satisfy lo < hi componentwise")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(self.lo[a], self.hi[a], self.points_per_axis)
                for a in range(self.dim)]

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (n_nodes, dim) array, C-ordered."""
        axes = self.axes()
        if self.dim == 1:
            return axes[0][:, None]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def spacing(self) -> np.ndarray:
        return np.array([(self.hi[a] - self.lo[a]) / (self.points_per_axis - 1)
                         for a in range(self.dim)])

    def integrate(self, values: np.ndarray) -> float:
        """Composite trapezoid integral of node values (shape matching nodes)."""
        axes = self.axes()
        if self.dim == 1:
            return float(np.trapezoid(values.ravel(), axes[0]))
        v = values.reshape(self.points_per_axis, self.points_per_axis)
        return float(np.trapezoid(np.trapezoid(v, axes[1], axis=1), axes[0]))


def grid_for(mixtures: Sequence[NormalMixture], points_per_axis: int = 4096,
             n_sd: float = 8.0) -> Grid:
    """Box covering every mixture's means plus ``n_sd`` standard deviations."""
    dim = mixtures[0].dim
    lo = np.full(dim, np.inf)
    hi = np.full(dim, -np.inf)
    for m in mixtures:
        sd = np.sqrt(np.einsum("kii->ki", m.covariances))
        lo = np.minimum(lo, (m.means - n_sd * sd).min(axis=0))
        hi = np.maximum(hi, (m.means + n_sd * sd).max(axis=0))
    return Grid(dim, tuple(lo), tuple(hi), points_per_axis)
