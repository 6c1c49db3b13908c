import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(L^2) one-sided DFT of a real 1-D signal; the FFT oracle."""
    L = len(x)
    bins = L // 2 + 1
    out = np.zeros(bins, dtype=np.complex128)
    for k in range(bins):
        for n in range(L):
            out[k] += x[n] * np.exp(-2j * np.pi * k * n / L)
    return out


def naive_idft(spec: np.ndarray, n: int) -> np.ndarray:
    """Inverse of naive_dft under the 1/n-on-inverse convention."""
    full = np.zeros(n, dtype=np.complex128)
    bins = n // 2 + 1
    full[:bins] = spec
    # the one-sided convention ignores imaginary parts at DC and (even) Nyquist
    full[0] = spec[0].real
    if n % 2 == 0:
        full[bins - 1] = spec[bins - 1].real
    for k in range(1, (n + 1) // 2):
        full[n - k] = np.conj(full[k])
    out = np.zeros(n, dtype=np.complex128)
    for m in range(n):
        for k in range(n):
            out[m] += full[k] * np.exp(2j * np.pi * k * m / n)
    return out.real / n
