"""3D DFT contract and elementwise volume algebra.

Forward transforms are unscaled, inverse transforms carry 1/(Mx*My*Mz).
Spectra are kept in unshifted bin order.
"""

import logging

import numpy as np
import scipy.fft

from modip import settings
from modip.errors import NumericalError
from modip.models.volume import (
    ComplexSpectrum,
    ScalarVolume,
    ensure_same_grid,
)

logger = logging.getLogger("modip.fourier")

IMAG_RESIDUE_TOL = 1e-5
# imaginary roundoff allowed relative to the spectrum magnitude, in units of eps
ROUNDOFF_ULPS = 64


def fft3(v: ScalarVolume) -> ComplexSpectrum:
    v.ensure_finite("fft3 input")
    return ComplexSpectrum(v.grid, scipy.fft.fftn(v.values, workers=settings.THREADS))


def ifft3_real(s: ComplexSpectrum) -> ScalarVolume:
    """Inverse DFT of a spectrum that must belong to a real volume"""
    if not np.all(np.isfinite(s.values)):
        raise NumericalError("ifft3_real input contains non-finite values")
    out = scipy.fft.ifftn(s.values, workers=settings.THREADS)
    real, imag = out.real, out.imag
    eps = np.finfo(real.dtype).eps
    max_real = float(np.max(np.abs(real))) if real.size else 0.0
    max_imag = float(np.max(np.abs(imag))) if imag.size else 0.0
    floor = ROUNDOFF_ULPS * eps * float(np.max(np.abs(s.values)))
    if max_imag > IMAG_RESIDUE_TOL * max_real + floor:
        raise NumericalError(
            f"imaginary residue {max_imag:.3e} exceeds {IMAG_RESIDUE_TOL:g} of the "
            f"real part ({max_real:.3e}): the spectrum is not Hermitian"
        )
    return ScalarVolume(s.grid, np.ascontiguousarray(real))


def dot(a: ScalarVolume, b: ScalarVolume) -> float:
    ensure_same_grid("dot", a, b)
    return float(np.dot(a.values.ravel(), b.values.ravel()))


def norm(v: ScalarVolume) -> float:
    return float(np.linalg.norm(v.values.ravel()))


def axpy(alpha: float, x: ScalarVolume, y: ScalarVolume) -> ScalarVolume:
    """alpha * x + y"""
    ensure_same_grid("axpy", x, y)
    return y.with_values(y.values + alpha * x.values)


def scale(alpha: float, v: ScalarVolume) -> ScalarVolume:
    return v.with_values(alpha * v.values)


def multiply(a: ScalarVolume, b: ScalarVolume) -> ScalarVolume:
    ensure_same_grid("multiply", a, b)
    return a.with_values(a.values * b.values)
