import numpy as np
import pytest
from hypothesis import settings

from holobf.fields import ComplexField, OpticalParams

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def params():
    return OpticalParams(0.85, 1.12, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(rng, w=32, h=24, params=None):
    data = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    return ComplexField(data, params or OpticalParams())


def band_limited(rng, n, params, cutoff=0.25, pad_to=None):
    """Smooth random complex field whose spectrum is zero beyond ``cutoff`` x Nyquist."""
    from holobf.propagation import frequency_grid

    spec = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    fx, fy = frequency_grid(n, n, 1.0)
    spec[np.hypot(fx, fy) > 0.5 * cutoff] = 0
    data = np.fft.ifft2(spec)
    data = 1.0 + data / np.abs(data).max()
    return ComplexField(data, params)
