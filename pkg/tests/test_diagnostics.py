import numpy as np
import pytest

from decompound import CppModel, gaussian, rng_stream, simulate_increments
from decompound.diagnostics import ess_autocorr, gelman_rubin, geweke_zscores, \
    mcmc_se
from decompound.posterior import ChainConfig, ChainState, init_chain, run_chain
from decompound.prior import DpmPrior, LambdaPrior, Priors


def micro_priors():
    return Priors(LambdaPrior(0.5, 2.0),
                  DpmPrior(base_mean=np.zeros(1), base_cov=4.0 * np.eye(1),
                           concentration=1.0, truncation_k=3))


def test_ess_iid_close_to_n():
    x = rng_stream(700, 0).normal(size=4000)
    ess = ess_autocorr(x)
    assert 0.7 * 4000 < ess <= 4000 * 1.2


def test_ess_detects_correlation():
    rng = rng_stream(701, 0)
    x = np.empty(4000)
    x[0] = 0.0
    for i in range(1, x.size):  # AR(1) with strong autocorrelation
        x[i] = 0.95 * x[i - 1] + rng.normal()
    assert ess_autocorr(x) < 400


def test_ess_constant_trace():
    assert ess_autocorr(np.ones(100)) == 100.0


def test_mcmc_se_scales_with_ess():
    rng = rng_stream(702, 0)
    x = rng.normal(size=4000)
    assert mcmc_se(x) == pytest.approx(x.std(ddof=1) / np.sqrt(ess_autocorr(x)))


def test_gelman_rubin_identical_vs_separated():
    rng = rng_stream(703, 0)
    same = rng.normal(size=(4, 500))
    assert gelman_rubin(same) < 1.05
    apart = same + np.array([0.0, 5.0, 0.0, 5.0])[:, None]
    assert gelman_rubin(apart) > 1.5
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((1, 10)))


def test_geweke_micro_model_passes():
    z = geweke_zscores(micro_priors(), n=3, cycles=4000, seed=11,
                       sweeps_per_cycle=2)
    assert len(z) == 10
    assert max(abs(v) for v in z.values()) < 4.0


def test_gelman_rubin_on_standard_problem_overdispersed_starts():
    truth = CppModel(1.0, gaussian(0.0, 1.0))
    sample = simulate_increments(truth, 200, 1.0, rng_stream(704, 0))
    priors = Priors(LambdaPrior(0.5, 2.0),
                    DpmPrior(base_mean=np.zeros(1), base_cov=4.0 * np.eye(1),
                             concentration=1.0, truncation_k=30))
    cfg = ChainConfig(iterations=4000, burn_in=1500, thin=1, seed=77)
    traces = []
    for stream, lam0 in ((1, 0.55), (2, 1.95)):
        rng = rng_stream(705, stream)
        state = init_chain(sample, priors, cfg, rng)
        state.lambda_ = lam0  # overdispersed starting intensities
        out = run_chain(sample, priors, cfg, rng=rng, init=state)
        traces.append(out.retained_lambdas())
    assert gelman_rubin(np.stack(traces)) < 1.1
