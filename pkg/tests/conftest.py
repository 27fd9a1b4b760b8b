import numpy as np
import pytest

from decompound import CppModel, gaussian, rng_stream


@pytest.fixture
def std_model():
    """The standard test problem: unit intensity, standard normal jumps."""
    return CppModel(1.0, gaussian(0.0, 1.0))


@pytest.fixture
def rng():
    return rng_stream(20240811, 0)


def fft_convolution_power(pdf_vals: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Independent k-fold convolution oracle on a uniform grid containing 0.

    Treats the sampled density as a pmf on the grid, composes it k times by
    circular convolution in Fourier space (the grid must be wide enough that
    wraparound mass is negligible), and converts back to a density. Offsets
    add under convolution, so with the origin rolled to index 0 the result
    just rolls back by the same amount.
    """
    h = x[1] - x[0]
    j0 = int(np.argmin(np.abs(x)))
    assert abs(x[j0]) < 1e-9 * max(1.0, abs(x).max()), "grid must contain 0"
    pmf = np.roll(pdf_vals * h, -j0)
    f = np.fft.fft(pmf)
    out = np.real(np.fft.ifft(f ** k)) / h
    return np.roll(out, j0)


def fft_compound_continuous(pdf_vals: np.ndarray, x: np.ndarray, rate: float,
                            truncation: int = 200) -> np.ndarray:
    """Poisson-weighted convolution series oracle (continuous part only),
    summed term by term from the k-fold FFT powers."""
    from scipy.stats import poisson

    h = x[1] - x[0]
    j0 = int(np.argmin(np.abs(x)))
    pmf = np.roll(pdf_vals * h, -j0)
    f = np.fft.fft(pmf)
    total = np.zeros_like(f)
    for m in range(1, truncation + 1):
        total += poisson.pmf(m, rate) * f ** m
    return np.roll(np.real(np.fft.ifft(total)) / h, j0)
