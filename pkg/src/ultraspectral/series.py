"""Coefficient series in Chebyshev, ultraspherical and Fourier bases.

Values live on the second-kind Chebyshev grid ``x_k = cos(k*pi/(n-1))``
(so the value/coefficient maps form a DCT-I pair) or, for the Fourier
basis, on the equispaced grid ``x_j = -1 + 2j/n`` of the period-2 interval.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import fft as sfft

from .exceptions import ResolutionError


class Basis(enum.Enum):
    CHEBYSHEV = "chebyshev"
    ULTRASPHERICAL = "ultraspherical"
    FOURIER = "fourier"


@dataclass(frozen=True, eq=False)
class CoeffSeries:
    """An immutable coefficient vector tagged with its basis.

    ``lam`` is the ultraspherical parameter; it is 0 for Chebyshev T and
    ignored for Fourier. Fourier coefficients are ordered by wavenumber
    ``0, +1, -1, +2, -2, ...``.
    """

    coeffs: np.ndarray
    basis: Basis = Basis.CHEBYSHEV
    lam: int = 0

    def __post_init__(self):
        dtype = complex if self.basis is Basis.FOURIER else None
        c = np.array(self.coeffs, dtype=dtype, copy=True)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("a series needs at least one coefficient")
        if self.basis is Basis.ULTRASPHERICAL and self.lam < 1:
            raise ValueError("ultraspherical series need lam >= 1")
        if self.basis is Basis.CHEBYSHEV and self.lam != 0:
            raise ValueError("Chebyshev series carry lam = 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.size

    def __len__(self) -> int:
        return self.coeffs.size

    def __call__(self, x):
        return evaluate(self, x)

    def with_coeffs(self, coeffs) -> "CoeffSeries":
        return CoeffSeries(coeffs, self.basis, self.lam)

    def __repr__(self) -> str:
        tag = self.basis.value if self.basis is not Basis.ULTRASPHERICAL else f"C^({self.lam})"
        return f"CoeffSeries({tag}, n={self.n})"


def chebyshev(coeffs) -> CoeffSeries:
    return CoeffSeries(coeffs, Basis.CHEBYSHEV, 0)


def ultraspherical(coeffs, lam: int) -> CoeffSeries:
    if lam == 0:
        return chebyshev(coeffs)
    return CoeffSeries(coeffs, Basis.ULTRASPHERICAL, lam)


def fourier(coeffs) -> CoeffSeries:
    return CoeffSeries(coeffs, Basis.FOURIER, 0)


# ---------------------------------------------------------------------------
# grids and transforms
# ---------------------------------------------------------------------------

def cheb_points(n: int) -> np.ndarray:
    """Second-kind Chebyshev points, ordered from 1 down to -1."""
    if n < 2:
        raise ValueError("cheb_points needs n >= 2")
    # sin form is exactly antisymmetric and hits 0 for odd n
    k = np.arange(n)
    return np.sin(np.pi * (n - 1 - 2 * k) / (2 * (n - 1)))


def vals_to_coeffs(values) -> CoeffSeries:
    """Chebyshev coefficients of the interpolant through values at ``cheb_points``."""
    v = np.asarray(values)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("vals_to_coeffs needs a non-empty 1-D array")
    if v.size == 1:
        return chebyshev(v.copy())
    n = v.size
    c = sfft.dct(v, type=1) / (n - 1)
    c[0] /= 2
    c[-1] /= 2
    return chebyshev(c)


def coeffs_to_vals(s: CoeffSeries) -> np.ndarray:
    """Values of a Chebyshev series at ``cheb_points(s.n)``."""
    if s.basis is not Basis.CHEBYSHEV:
        raise ValueError("coeffs_to_vals expects a Chebyshev series")
    c = np.asarray(s.coeffs)
    if c.size == 1:
        return c.copy()
    sign = np.ones(c.size)
    sign[1::2] = -1.0
    return (sfft.dct(c, type=1) + c[0] + c[-1] * sign) / 2


def fourier_wavenumbers(n: int) -> np.ndarray:
    """Wavenumber of each Fourier coefficient slot: 0, 1, -1, 2, -2, ..."""
    idx = np.arange(n)
    return np.where(idx % 2 == 1, (idx + 1) // 2, -(idx // 2))


def fourier_points(n: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(n) / n


def _fft_slots(n: int) -> np.ndarray:
    return np.mod(fourier_wavenumbers(n), n)


def fourier_vals_to_coeffs(values) -> CoeffSeries:
    v = np.asarray(values, dtype=complex)
    n = v.size
    if n % 2 == 0:
        raise ValueError("Fourier series use an odd number of coefficients")
    k = fourier_wavenumbers(n)
    raw = np.fft.fft(v) / n
    return fourier(raw[_fft_slots(n)] * np.where(k % 2 == 0, 1.0, -1.0))


def fourier_coeffs_to_vals(s: CoeffSeries) -> np.ndarray:
    n = s.n
    k = fourier_wavenumbers(n)
    raw = np.zeros(n, dtype=complex)
    raw[_fft_slots(n)] = s.coeffs * np.where(k % 2 == 0, 1.0, -1.0)
    return np.fft.ifft(raw) * n


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _clenshaw(c: np.ndarray, x: np.ndarray, lam: int) -> np.ndarray:
    # three-term recurrence p_{k+1} = alpha_k p_k + beta_k p_{k-1}
    n = c.size
    if lam == 0:
        alpha = lambda k: 2.0 * x if k > 0 else x  # noqa: E731
        beta = lambda k: -1.0  # noqa: E731
        p1 = x
    else:
        alpha = lambda k: 2.0 * (k + lam) / (k + 1) * x  # noqa: E731
        beta = lambda k: -(k + 2.0 * lam - 1) / (k + 1)  # noqa: E731
        p1 = 2.0 * lam * x
    if n == 1:
        return c[0] + 0 * x
    b1 = np.zeros_like(x, dtype=np.result_type(c, x))
    b2 = np.zeros_like(b1)
    for k in range(n - 1, 0, -1):
        b1, b2 = c[k] + alpha(k) * b1 + beta(k + 1) * b2, b1
    return c[0] + p1 * b1 + beta(1) * b2


def evaluate(s: CoeffSeries, x):
    """Value of the truncated series at ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    if s.basis is Basis.FOURIER:
        k = fourier_wavenumbers(s.n)
        out = np.exp(1j * np.pi * np.multiply.outer(xa, k)) @ s.coeffs
    else:
        if np.any(np.abs(xa) > 1 + 1e-14):
            raise ValueError("polynomial series are evaluated on [-1, 1]")
        out = _clenshaw(np.asarray(s.coeffs), xa, s.lam)
    return out[()] if np.ndim(out) == 0 else out


def basis_values(n: int, x: float, lam: int = 0) -> np.ndarray:
    """Values ``[P_0(x), ..., P_{n-1}(x)]`` of the T (lam=0) or C^(lam) family."""
    if abs(x) > 1:
        raise ValueError("basis functions are evaluated on [-1, 1]")
    out = np.empty(n)
    out[0] = 1.0
    if n > 1:
        out[1] = x if lam == 0 else 2.0 * lam * x
    for k in range(1, n - 1):
        if lam == 0:
            out[k + 1] = 2.0 * x * out[k] - out[k - 1]
        else:
            out[k + 1] = (2.0 * (k + lam) * x * out[k] - (k + 2 * lam - 1) * out[k - 1]) / (k + 1)
    return out


# ---------------------------------------------------------------------------
# padding, chopping and plateau detection
# ---------------------------------------------------------------------------

def pad(s: CoeffSeries, m: int) -> CoeffSeries:
    if m < s.n:
        raise ValueError(f"cannot pad a length-{s.n} series to {m}")
    c = np.zeros(m, dtype=s.coeffs.dtype)
    c[: s.n] = s.coeffs
    return s.with_coeffs(c)


def chop(s: CoeffSeries, m: int) -> CoeffSeries:
    if m < 1 or m > s.n:
        raise ValueError(f"cannot chop a length-{s.n} series to {m}")
    return s.with_coeffs(s.coeffs[:m])


def fit_length(c: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad or truncate a raw coefficient array to length ``m``."""
    out = np.zeros(m, dtype=c.dtype)
    k = min(m, c.size)
    out[:k] = c[:k]
    return out


class PlateauResult(NamedTuple):
    """Outcome of plateau detection; ``j`` and ``j2`` are 1-based positions."""

    found: bool
    j: int = 0
    j2: int = 0


PLATEAU_MIN_LENGTH = 17
DEFAULT_TOL = 1e-14


def _round_half_away(x):
    return np.floor(np.asarray(x) + 0.5).astype(int)


def plateau(u, tol: float = DEFAULT_TOL, clamp: bool = True) -> PlateauResult:
    """Detect a plateau of roundoff-level coefficients.

    Scans the normalized upper envelope for the first ``j`` whose envelope
    value is zero or whose ratio to the envelope at ``j2 = round(1.25 j + 5)``
    exceeds ``3 (1 - log(e1) / log(tol))``. Vectors shorter than 17 never
    report a plateau.

    With ``clamp`` (the default) ``j2`` is clamped to ``n`` and every ``j``
    up to ``n`` is scanned. ``clamp=False`` stops the scan once ``j2`` would
    pass the end, which keeps a single zero trailing coefficient (an odd or
    even function sampled on the wrong parity) from posing as a plateau;
    the resolution loops use that mode.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    c = np.abs(np.asarray(u.coeffs if isinstance(u, CoeffSeries) else u))
    n = c.size
    if n < 2:
        raise ValueError("plateau needs at least two coefficients")
    if n < PLATEAU_MIN_LENGTH:
        return PlateauResult(False)
    env = np.maximum.accumulate(c[::-1])[::-1]
    if env[0] != 0:
        env = env / env[0]
    js = np.arange(2, n + 1)
    j2 = _round_half_away(1.25 * js + 5)
    if clamp:
        j2 = np.minimum(j2, n)
    else:
        js, j2 = js[j2 <= n], j2[j2 <= n]
    e1 = env[js - 1]
    e2 = env[j2 - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 3.0 * (1.0 - np.log(e1) / np.log(tol))
        hit = (e1 == 0) | (e2 / e1 > r)
    if not hit.any():
        return PlateauResult(False)
    i = int(np.argmax(hit))
    return PlateauResult(True, int(js[i]), int(j2[i]))


def resolve(f: Callable[[np.ndarray], np.ndarray], n_min: int = PLATEAU_MIN_LENGTH,
            n_max: int = 2 ** 16, tol: float = DEFAULT_TOL, keep: str = "j") -> CoeffSeries:
    """Chebyshev series of ``f`` on [-1, 1] by sampling on doubling grids.

    ``keep="j"`` chops to the start of the plateau (economical for
    coefficient functions); ``keep="j2"`` retains the plateau itself.
    """
    m = max(n_min, PLATEAU_MIN_LENGTH)
    while m <= n_max:
        s = vals_to_coeffs(np.asarray(f(cheb_points(m)), dtype=float) * np.ones(m))
        p = plateau(s, tol, clamp=False)
        if p.found:
            return chop(s, max(1, p.j if keep == "j" else p.j2))
        m = 2 * (m - 1) + 1
    raise ResolutionError(f"function not resolved with {n_max} points")
