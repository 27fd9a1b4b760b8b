import json

import numpy as np
import pytest

from decompound import Grid, NormalMixture, gaussian, grid_for, rng_stream

from conftest import fft_convolution_power

SQRT_2PI = np.sqrt(2.0 * np.pi)


# ----------------------------------------------------------------------
# density evaluation
# ----------------------------------------------------------------------

def test_standard_normal_at_mode():
    m = gaussian(0.0, 1.0)
    assert m.pdf(np.array([0.0])) == pytest.approx(1.0 / SQRT_2PI, abs=1e-15)


def test_two_component_symmetric_at_zero():
    m = NormalMixture([0.5, 0.5], [[-1.0], [1.0]], np.eye(1), shared_sigma=True)
    # 0.5*phi(1) + 0.5*phi(-1) = phi(1), evaluated directly
    expect = np.exp(-0.5) / SQRT_2PI
    assert m.pdf(np.array([0.0])) == pytest.approx(expect, abs=1e-15)
    assert expect == pytest.approx(0.24197072451914337, abs=1e-15)


def test_far_tail_underflows_gracefully():
    m = NormalMixture([0.3, 0.7], [[-1.0], [1.0]], np.eye(1), shared_sigma=True)
    x = np.array([[40.0]])
    val = m.pdf(x)[0]
    assert 0.0 <= val < 1e-300
    lp = m.logpdf(x)[0]
    assert np.isfinite(lp)


def test_log_domain_never_nan_on_batch(rng):
    m = NormalMixture([0.2, 0.8], [[-3.0], [5.0]],
                      np.array([[[0.25]], [[4.0]]]))
    x = np.concatenate([rng.normal(0, 50, size=(200, 1)), [[1e4], [-1e4]]])
    lp = m.logpdf(x)
    assert np.all(np.isfinite(lp))


def test_dimension_mismatch_raises():
    m = gaussian([0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        m.logpdf(np.zeros(3))


# ----------------------------------------------------------------------
# construction invariants
# ----------------------------------------------------------------------

def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        NormalMixture([0.5, 0.4], [[0.0], [1.0]], np.eye(1), shared_sigma=True)


def test_nonpositive_weight_rejected():
    with pytest.raises(ValueError):
        NormalMixture([1.2, -0.2], [[0.0], [1.0]], np.eye(1), shared_sigma=True)


def test_asymmetric_covariance_rejected():
    with pytest.raises(ValueError):
        gaussian([0.0, 0.0], np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_indefinite_covariance_rejected():
    with pytest.raises(ValueError):
        gaussian([0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_tiny_weights_dropped_and_renormalized():
    m = NormalMixture([1.0 - 1e-16, 1e-16], [[0.0], [9.0]], np.eye(1),
                      shared_sigma=True)
    assert m.n_components == 1
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_all_components_dropped_is_an_error():
    with pytest.raises(ValueError):
        NormalMixture([1e-16, 1e-16], [[0.0], [1.0]], np.eye(1), shared_sigma=True)


# ----------------------------------------------------------------------
# convolution algebra
# ----------------------------------------------------------------------

def test_gaussian_convolution_identity():
    m = gaussian(0.0, 1.0)
    c = m.convolve(m)
    assert c.mean() == pytest.approx(0.0, abs=1e-15)
    assert c.cov()[0, 0] == pytest.approx(2.0, abs=1e-14)
    x = np.linspace(-5, 5, 101)[:, None]
    expect = np.exp(-x.ravel() ** 2 / 4) / np.sqrt(4 * np.pi)
    np.testing.assert_allclose(c.pdf(x), expect, atol=1e-14)


def test_two_component_self_convolution_by_hand():
    m = NormalMixture([0.5, 0.5], [[-1.0], [1.0]], np.eye(1), shared_sigma=True)
    c = m.convolve(m)
    assert c.n_components == 4  # |a| * |b| pairs before any merging
    # enumerate pairs by hand: weights 1/4,1/2,1/4 at -2,0,+2 with variance 2
    hand = NormalMixture([0.25, 0.5, 0.25], [[-2.0], [0.0], [2.0]],
                         2.0 * np.eye(1), shared_sigma=True)
    x = np.linspace(-8, 8, 401)[:, None]
    np.testing.assert_allclose(c.pdf(x), hand.pdf(x), atol=1e-14)


def test_convolution_commutes_on_grid():
    a = NormalMixture([0.3, 0.7], [[-0.5], [1.5]],
                      np.array([[[0.8]], [[1.7]]]))
    b = NormalMixture([0.6, 0.4], [[0.2], [-1.0]],
                      np.array([[[1.2]], [[0.5]]]))
    x = np.linspace(-10, 10, 801)[:, None]
    np.testing.assert_allclose(a.convolve(b).pdf(x), b.convolve(a).pdf(x),
                               atol=1e-12)


def test_convolve_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian(0.0, 1.0).convolve(gaussian([0.0, 0.0], np.eye(2)))


def test_convolution_weights_renormalized():
    a = NormalMixture([0.3, 0.7], [[-0.5], [1.5]], np.eye(1), shared_sigma=True)
    c = a.convolve(a)
    assert abs(c.weights.sum() - 1.0) <= 1e-12


def test_self_convolve_identity():
    m = NormalMixture([0.4, 0.6], [[0.0], [2.0]], np.eye(1), shared_sigma=True)
    out, lost = m.self_convolve(1)
    assert out is m and lost == 0.0


def test_self_convolve_gaussian_scaling():
    m = gaussian([0.5, -0.25], np.array([[1.0, 0.3], [0.3, 2.0]]))
    out, lost = m.self_convolve(5)
    assert lost == 0.0
    np.testing.assert_allclose(out.mean(), 5 * m.mean(), atol=1e-12)
    np.testing.assert_allclose(out.cov(), 5 * m.cov(), atol=1e-12)


def test_self_convolve_matches_fft_oracle():
    m = NormalMixture([0.35, 0.65], [[-0.8], [0.9]],
                      np.array([[[0.6]], [[1.1]]]))
    x = np.linspace(-20.0, 20.0, 4097)  # odd count puts 0 on the grid
    base = m.pdf(x[:, None])
    oracle = fft_convolution_power(base, x, 3)
    triple, lost = m.self_convolve(3, max_components=10_000)
    assert lost == 0.0
    assert np.max(np.abs(triple.pdf(x[:, None]) - oracle)) < 1e-6


def test_self_convolve_moment_scaling_after_pruning():
    m = NormalMixture([0.25, 0.25, 0.5], [[-1.0], [0.3], [1.4]],
                      0.7 * np.eye(1), shared_sigma=True)
    out, lost = m.self_convolve(6, max_components=64, prune_tol=1e-12)
    assert lost < 1e-9
    np.testing.assert_allclose(out.mean(), 6 * m.mean(), atol=1e-10)
    np.testing.assert_allclose(out.cov(), 6 * m.cov(), atol=1e-10)


def test_self_convolve_duplicate_merge_keeps_counts_linear():
    # lattice means collapse: the k-fold count is k+1, not 2^k
    m = NormalMixture([0.5, 0.5], [[0.0], [1.0]], np.eye(1), shared_sigma=True)
    out, _ = m.self_convolve(10, max_components=4096)
    assert out.n_components == 11


def test_self_convolve_hard_cap_reports_loss():
    rng = rng_stream(3, 0)
    means = rng.normal(size=(12, 1))
    m = NormalMixture(np.full(12, 1 / 12), means, np.eye(1), shared_sigma=True)
    out, lost = m.self_convolve(4, max_components=50, prune_tol=1e-10)
    assert out.n_components <= 50
    assert lost > 0


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------

def test_sample_mean_clt_tolerance():
    m = gaussian([0.0, 0.0], np.eye(2))
    rng = rng_stream(7, 0)
    x = m.sample(rng, size=100_000)
    assert np.all(np.abs(x.mean(axis=0)) < 3.0 / np.sqrt(100_000))


def test_sample_covariance_single_component():
    sigma = np.array([[2.0, 0.6], [0.6, 1.0]])
    m = gaussian([1.0, -1.0], sigma)
    rng = rng_stream(8, 0)
    x = m.sample(rng, size=100_000)
    emp = np.cov(x.T)
    assert np.all(np.abs(emp - sigma) < 0.05 * np.abs(sigma).max())


def test_sample_determinism():
    m = NormalMixture([0.5, 0.5], [[-1.0], [1.0]], np.eye(1), shared_sigma=True)
    a = m.sample(rng_stream(11, 4), size=50)
    b = m.sample(rng_stream(11, 4), size=50)
    np.testing.assert_array_equal(a, b)


# ----------------------------------------------------------------------
# mass conservation and grids
# ----------------------------------------------------------------------

@pytest.mark.parametrize("dim", [1, 2])
def test_mass_conservation_on_covering_grid(dim):
    rng = rng_stream(13, dim)
    k = 3
    means = rng.normal(scale=1.5, size=(k, dim))
    sig = np.eye(dim) * rng.uniform(0.5, 1.5)
    m = NormalMixture(rng.dirichlet(np.ones(k)), means, sig, shared_sigma=True)
    grid = grid_for([m], points_per_axis=4096 if dim == 1 else 512)
    vals = np.exp(m.logpdf(grid.nodes()))
    assert grid.integrate(vals) == pytest.approx(1.0, abs=1e-6)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1, (1.0,), (0.0,), 10)
    with pytest.raises(ValueError):
        Grid(1, (0.0,), (1.0,), 1)
    with pytest.raises(ValueError):
        Grid(3, (0.0,) * 3, (1.0,) * 3, 10)


def test_grid_trapezoid_exact_on_linear():
    g = Grid(1, (0.0,), (2.0,), 101)
    vals = g.nodes().ravel()
    assert g.integrate(vals) == pytest.approx(2.0, abs=1e-12)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def test_json_roundtrip_per_component():
    m = NormalMixture([0.3, 0.7], [[-0.5], [1.5]],
                      np.array([[[0.8]], [[1.7]]]))
    back = NormalMixture.from_json(json.loads(json.dumps(m.to_json())))
    x = np.linspace(-4, 4, 51)[:, None]
    np.testing.assert_allclose(back.pdf(x), m.pdf(x), rtol=0, atol=1e-15)
    assert back.shared_sigma is False


def test_json_roundtrip_shared_sigma():
    m = NormalMixture([0.2, 0.8], [[0.0, 1.0], [2.0, -1.0]],
                      np.array([[1.1, 0.2], [0.2, 0.9]]), shared_sigma=True)
    obj = m.to_json()
    assert obj["shared_sigma"] is True
    assert len(obj["covariances"]) == 1
    back = NormalMixture.from_json(obj)
    assert back.shared_sigma is True
    x = np.array([[0.3, -0.2], [1.0, 0.5]])
    np.testing.assert_allclose(back.pdf(x), m.pdf(x), atol=1e-15)
