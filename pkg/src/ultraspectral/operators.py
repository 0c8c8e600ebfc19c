"""Sparse ultraspherical operators: differentiation, conversion, multiplication.

All operators act on coefficient vectors. Chebyshev T coefficients are the
``lam = 0`` space; ``diff_op(lam)`` maps T to C^(lam), ``conv_op(lam)`` maps
C^(lam) to C^(lam+1) and ``mult_op(lam, a)`` multiplies inside C^(lam).
Every constructor takes the exact output shape so that products of
truncated factors equal truncations of the infinite products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .series import Basis, CoeffSeries, basis_values, chebyshev, resolve, ultraspherical


class BandedMatrix:
    """Rectangular matrix with explicit lower and upper bandwidths.

    The band is stored LAPACK style, ``ab[upper + i - j, j] = A[i, j]``; a
    CSR copy is kept for matrix-vector products.
    """

    __slots__ = ("shape", "lower", "upper", "ab", "_csr")

    def __init__(self, ab: np.ndarray, shape: tuple[int, int], lower: int, upper: int):
        rows, cols = shape
        if ab.shape != (lower + upper + 1, cols):
            raise ValueError("band storage does not match the bandwidths")
        self.shape = (int(rows), int(cols))
        self.lower = int(lower)
        self.upper = int(upper)
        self.ab = ab
        self.ab.setflags(write=False)
        self._csr = None

    @classmethod
    def from_sparse(cls, A, lower: int | None = None, upper: int | None = None) -> "BandedMatrix":
        coo = sp.csr_matrix(A).tocoo()
        keep = coo.data != 0
        r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
        lo = int(max(0, (r - c).max())) if r.size else 0
        up = int(max(0, (c - r).max())) if r.size else 0
        lower = lo if lower is None else max(lower, lo)
        upper = up if upper is None else max(upper, up)
        rows, cols = coo.shape
        ab = np.zeros((lower + upper + 1, cols), dtype=np.result_type(v, float))
        ab[upper + r - c, c] = v
        return cls(ab, (rows, cols), lower, upper)

    @classmethod
    def from_dense(cls, A) -> "BandedMatrix":
        return cls.from_sparse(sp.coo_matrix(np.asarray(A)))

    @property
    def dtype(self):
        return self.ab.dtype

    def tocsr(self) -> sp.csr_matrix:
        if self._csr is None:
            rows, cols = self.shape
            offs = np.arange(self.upper, -self.lower - 1, -1)
            data = self.ab
            # dia_matrix indexes data by column, matching the band layout
            self._csr = sp.csr_matrix(sp.dia_matrix((data, offs), shape=(rows, cols)))
            self._csr.eliminate_zeros()
        return self._csr

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()

    def __matmul__(self, other):
        if isinstance(other, BandedMatrix):
            return BandedMatrix.from_sparse(self.tocsr() @ other.tocsr())
        return self.tocsr() @ other

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        return BandedMatrix.from_sparse(self.tocsr() + other.tocsr())

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        return BandedMatrix.from_sparse(self.tocsr() - other.tocsr())

    def __mul__(self, scalar) -> "BandedMatrix":
        return BandedMatrix(self.ab * scalar, self.shape, self.lower, self.upper)

    __rmul__ = __mul__

    def rows(self, m: int) -> "BandedMatrix":
        """Leading ``m`` rows."""
        return BandedMatrix.from_sparse(self.tocsr()[:m], 0, 0)

    def __repr__(self) -> str:
        return f"BandedMatrix({self.shape[0]}x{self.shape[1]}, lower={self.lower}, upper={self.upper})"


def _check_shape(rows: int, cols: int):
    if rows < 1 or cols < 1:
        raise ValueError("operator shapes must be positive")


# ---------------------------------------------------------------------------
# differentiation, conversion, multiplication
# ---------------------------------------------------------------------------

def diff_prefactor(lam: int) -> float:
    return 2.0 ** (lam - 1) * math.factorial(lam - 1)


def diff_op(lam: int, n: int, rows: int | None = None) -> BandedMatrix:
    """Differentiation T -> C^(lam), shape ``(n - lam) x n`` by default."""
    if lam < 1:
        raise ValueError("diff_op needs lam >= 1")
    if lam >= n:
        raise ValueError(f"diff_op({lam}, {n}): order must be below n")
    rows = n - lam if rows is None else rows
    _check_shape(rows, n)
    i = np.arange(min(rows, n - lam))
    A = sp.coo_matrix((diff_prefactor(lam) * (i + lam), (i, i + lam)), shape=(rows, n))
    return BandedMatrix.from_sparse(A, 0, lam)


def conv_op(lam: int, n: int, rows: int | None = None) -> BandedMatrix:
    """Conversion C^(lam) -> C^(lam+1) (T -> C^(1) for lam = 0), ``rows x n``."""
    if lam < 0:
        raise ValueError("conv_op needs lam >= 0")
    rows = n if rows is None else rows
    _check_shape(rows, n)
    k = np.arange(min(rows, n), dtype=float)
    k2 = np.arange(min(rows, n - 2), dtype=float) if n > 2 else np.zeros(0)
    if lam == 0:
        diag = np.full(k.size, 0.5)
        diag[0] = 1.0
        off = np.full(k2.size, -0.5)
    else:
        diag = lam / (lam + k)
        off = -lam / (lam + k2 + 2)
    i0 = np.arange(k.size)
    i2 = np.arange(k2.size)
    A = sp.coo_matrix((np.r_[diag, off], (np.r_[i0, i2], np.r_[i0, i2 + 2])), shape=(rows, n))
    return BandedMatrix.from_sparse(A, 0, 2)


def conv_chain(lo: int, hi: int, n: int, rows: int) -> sp.csr_matrix:
    """Exactly truncated product ``S_{hi-1} ... S_lo`` with ``rows`` output rows.

    The input has ``n`` coefficients in C^(lo). Returns identity rows when
    ``hi == lo``.
    """
    if hi < lo:
        raise ValueError("conversion chain must go up in lam")
    if hi == lo:
        return sp.eye(rows, n, format="csr")
    out = None
    cols = n
    for lam in range(lo, hi):
        r = rows + 2 * (hi - 1 - lam)
        S = conv_op(lam, cols, r).tocsr()
        out = S if out is None else S @ out
        cols = r
    return out.tocsr()


def _pochhammer_ratios(lam: int):
    # the factors of c_s for integer lam, each a short product of small terms
    def a(m):
        out = np.ones_like(m, dtype=float)
        for i in range(1, lam):
            out *= (m + i) / i
        return out

    def b(p):
        out = np.ones_like(p, dtype=float)
        for i in range(lam, 2 * lam):
            out *= (p + i) / i
        return out

    def c(q):
        out = np.ones_like(q, dtype=float)
        for i in range(1, 2 * lam):
            out *= i / (q + i)
        return out

    return a, b, c


def linearization_coeff(lam: int, j, k, s):
    """Coefficient of C_{j+k-2s} in the product C_j C_k (integer lam >= 1)."""
    j, k, s = (np.asarray(v, dtype=float) for v in (j, k, s))
    a, b, c = _pochhammer_ratios(lam)
    return ((j + k + lam - 2 * s) / (j + k + lam - s)
            * a(s) * a(j - s) * a(k - s) * b(j + k - s) * c(j + k - 2 * s))


def mult_op(lam: int, a: CoeffSeries | Sequence[float], n: int, rows: int | None = None) -> BandedMatrix:
    """Multiplication by ``a`` inside C^(lam), shape ``rows x n``.

    ``a`` holds the C^(lam) coefficients of the multiplier (T coefficients
    for ``lam = 0``).
    """
    coeffs = np.asarray(a.coeffs if isinstance(a, CoeffSeries) else a, dtype=float)
    if coeffs.size == 0:
        raise ValueError("mult_op needs a non-empty multiplier")
    if isinstance(a, CoeffSeries) and a.lam != lam:
        raise ValueError(f"multiplier is in C^({a.lam}), expected C^({lam})")
    rows = n if rows is None else rows
    _check_shape(rows, n)
    m = coeffs.size - 1
    k = np.arange(n)
    r_all, c_all, v_all = [], [], []
    if lam == 0:
        for i in np.nonzero(coeffs)[0]:
            half = 0.5 * coeffs[i]
            r_all += [k + i, np.abs(k - i)]
            c_all += [k, k]
            v_all += [np.full(n, half), np.full(n, half)]
    elif np.any(coeffs):
        # all (i, s, k) triples with s <= min(i, k), flattened
        nz = np.nonzero(coeffs)[0]
        ip = np.repeat(nz, nz + 1)
        sp_ = np.concatenate([np.arange(i + 1) for i in nz])
        keep = sp_ < n
        ip, sp_ = ip[keep], sp_[keep]
        counts = n - sp_
        grp = np.repeat(np.arange(ip.size), counts)
        start = np.cumsum(counts) - counts
        kk = np.arange(grp.size) - start[grp] + sp_[grp]
        ii, ss = ip[grp], sp_[grp]
        r_all.append(kk + ii - 2 * ss)
        c_all.append(kk)
        # C_0 C_k = C_k exactly; the product formula would round it
        v_all.append(coeffs[ii] * np.where(ii == 0, 1.0, linearization_coeff(lam, kk, ii, ss)))
    if not r_all:
        return BandedMatrix(np.zeros((1, n)), (rows, n), 0, 0)
    r = np.concatenate(r_all)
    c = np.concatenate(c_all)
    v = np.concatenate(v_all)
    keep = r < rows
    A = sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=(rows, n))
    return BandedMatrix.from_sparse(A, min(m, rows - 1), min(m, n - 1))


def to_ultraspherical(s: CoeffSeries, lam: int) -> CoeffSeries:
    """Re-express a series in C^(lam) by repeated conversion (no truncation loss)."""
    if s.basis is Basis.FOURIER:
        raise ValueError("Fourier series have no ultraspherical form")
    if lam < s.lam:
        raise ValueError("conversion only goes up in lam")
    c = np.asarray(s.coeffs, dtype=float)
    for mu in range(s.lam, lam):
        c = conv_op(mu, c.size) @ c
    return ultraspherical(c, lam)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

Coefficient = Union[None, float, int, CoeffSeries, Callable[[np.ndarray], np.ndarray]]


def _as_chebyshev(a: Coefficient) -> CoeffSeries | None:
    if a is None:
        return None
    if isinstance(a, CoeffSeries):
        return a
    if callable(a):
        return resolve(a)
    if np.isscalar(a):
        return None if a == 0 else chebyshev([float(a)])
    return chebyshev(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class OperatorSpec:
    """Linear operator ``sum_lam a^lam(x) d^lam/dx^lam`` of order N.

    ``coeffs[lam]`` is stored in the C^(lam) basis, or None for a zero term.
    Use :meth:`from_coefficients` to build one from numbers, callables,
    Chebyshev coefficient lists or series.
    """

    coeffs: tuple
    name: str = field(default="")

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("an operator needs at least one coefficient")
        top = self.coeffs[-1]
        if top is None or not np.any(np.asarray(top.coeffs) != 0):
            raise ValueError("leading coefficient must not vanish identically")
        for lam, a in enumerate(self.coeffs):
            if a is not None and (a.basis is Basis.FOURIER or a.lam != lam):
                raise ValueError(f"coefficient {lam} must be stored in C^({lam})")

    @classmethod
    def from_coefficients(cls, coeffs: Sequence[Coefficient], name: str = "") -> "OperatorSpec":
        out = []
        for lam, a in enumerate(coeffs):
            s = _as_chebyshev(a)
            out.append(None if s is None else to_ultraspherical(s, lam))
        return cls(tuple(out), name)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_constant(self) -> bool:
        return all(a is None or np.all(np.asarray(a.coeffs)[1:] == 0) for a in self.coeffs)


def assemble_L(spec: OperatorSpec, n: int, rows: int | None = None) -> BandedMatrix:
    """Exactly truncated operator mapping T coefficients to C^(N) coefficients.

    The default shape is ``(n - N) x n``; ``rows = n`` gives the square
    version whose leading ``n - N`` rows coincide with the default.
    """
    N = spec.order
    if n <= N:
        raise ValueError(f"assemble_L needs n > order ({n} <= {N})")
    R = n - N if rows is None else rows
    # exact truncation makes every size a leading block of a larger one
    big = spec.__dict__.get("_square")
    if big is not None and max(R, n) <= big.shape[0]:
        return BandedMatrix.from_sparse(big[:R, :n])
    size = max(R, n)
    if big is not None:
        size = max(size, 2 * big.shape[0])
    object.__setattr__(spec, "_square", _assemble(spec, size, size))
    return BandedMatrix.from_sparse(spec.__dict__["_square"][:R, :n])


def _assemble(spec: OperatorSpec, n: int, R: int) -> sp.csr_matrix:
    N = spec.order
    total = sp.csr_matrix((R, n))
    for lam, a in enumerate(spec.coeffs):
        if a is None:
            continue
        mid = R + 2 * (N - lam)
        if lam == 0:
            D = sp.eye(n, format="csr")
        else:
            D = diff_op(lam, n).tocsr()
        cols = D.shape[0]
        M = mult_op(lam, a, cols, mid).tocsr()
        term = conv_chain(lam, N, mid, R) @ M @ D
        total = total + term
    return total.tocsr()


def conversion_matrix(N: int, n: int, rows: int | None = None) -> BandedMatrix:
    """Exactly truncated ``S_{N-1} ... S_0`` acting on T coefficients."""
    R = n - N if rows is None else rows
    return BandedMatrix.from_sparse(conv_chain(0, N, n, R), 0, 2 * N)


# ---------------------------------------------------------------------------
# boundary functionals
# ---------------------------------------------------------------------------

def boundary_row(kind: str, n: int, x0: float | None = None, order: int = 0) -> np.ndarray:
    """Row of the functional applied to T_0 ... T_{n-1}.

    ``kind`` is one of ``dirichlet_left``, ``dirichlet_right``,
    ``neumann_left``, ``neumann_right`` or ``custom`` (the ``order``-th
    derivative evaluated at ``x0``).
    """
    k = np.arange(n, dtype=float)
    sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    if kind == "dirichlet_right":
        return np.ones(n)
    if kind == "dirichlet_left":
        return sign
    if kind == "neumann_right":
        return k ** 2
    if kind == "neumann_left":
        return -sign * k ** 2
    if kind != "custom":
        raise ValueError(f"unknown boundary kind {kind!r}")
    if x0 is None or abs(x0) > 1:
        raise ValueError("custom boundary rows need a point x0 in [-1, 1]")
    if order < 0:
        raise ValueError("derivative order must be nonnegative")
    if order == 0:
        return basis_values(n, x0, 0)
    row = np.zeros(n)
    if n > order:
        row[order:] = diff_prefactor(order) * k[order:] * basis_values(n - order, x0, order)
    return row


boundary_rows = boundary_row


@dataclass(frozen=True)
class BoundaryCondition:
    """One boundary row ``kind`` (see :func:`boundary_row`) with value ``value``."""

    kind: str
    value: float = 0.0
    x0: float | None = None
    order: int = 0
    weights: tuple = ()

    def row(self, n: int) -> np.ndarray:
        if self.kind == "robin":
            # weights (a, b) at x0: a u + b u'
            a, b = self.weights
            return (a * boundary_row("custom", n, self.x0, 0)
                    + b * boundary_row("custom", n, self.x0, 1))
        return boundary_row(self.kind, n, self.x0, self.order)


@dataclass(frozen=True)
class BoundaryFunctional:
    """A block of boundary rows with right-hand side values."""

    conditions: tuple

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))

    @property
    def count(self) -> int:
        return len(self.conditions)

    def matrix(self, n: int) -> np.ndarray:
        if not self.conditions:
            return np.zeros((0, n))
        return np.vstack([c.row(n) for c in self.conditions])

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.conditions], dtype=float)

    @classmethod
    def of(cls, *specs) -> "BoundaryFunctional":
        """Shorthand: ``of(("dirichlet_left", 0), ("dirichlet_right", 0))``."""
        conds = []
        for s in specs:
            if isinstance(s, BoundaryCondition):
                conds.append(s)
            elif isinstance(s, str):
                conds.append(BoundaryCondition(s))
            else:
                conds.append(BoundaryCondition(*s))
        return cls(tuple(conds))


# ---------------------------------------------------------------------------
# periodic problems
# ---------------------------------------------------------------------------

def fourier_diff_op(lam: int, n: int, scale: float = 1.0) -> BandedMatrix:
    """Diagonal Fourier differentiation ``diag((i k scale)^lam)``.

    With ``scale = 1`` the entries are ``0, i^lam, (-i)^lam, (2i)^lam, ...``;
    periodic problems on [-1, 1] pass ``scale = pi``.
    """
    from .series import fourier_wavenumbers

    if lam < 1:
        raise ValueError("fourier_diff_op needs lam >= 1")
    if n % 2 == 0:
        raise ValueError("Fourier operators use odd n")
    d = (1j * scale * fourier_wavenumbers(n)) ** lam
    return BandedMatrix(d.reshape(1, n).astype(complex), (n, n), 0, 0)
