"""O(n) direct solvers for banded and almost-banded systems.

``AlmostBandedSystem`` is a block of dense rows on top of a banded body, the
shape of a bordered spectral discretization. ``qr_factor`` computes a Givens
QR that carries the dense rows as a low-rank block, ``qr_solve`` reuses it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np
import scipy.sparse as sp

from . import _kernels as kern
from .exceptions import SingularMatrixError
from .operators import BandedMatrix

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class AlmostBandedSystem:
    """Square matrix ``[dense_top; band]`` with ``dense_top`` of shape ``Nb x n``."""

    dense_top: np.ndarray
    band: BandedMatrix

    def __post_init__(self):
        top = np.atleast_2d(np.asarray(self.dense_top))
        if top.size == 0:
            top = np.zeros((0, self.band.shape[1]), dtype=self.band.dtype)
        object.__setattr__(self, "dense_top", top)
        nb, n = top.shape
        if self.band.shape != (n - nb, n):
            raise ValueError(f"band of shape {self.band.shape} does not complete a {n}x{n} system")

    @property
    def n(self) -> int:
        return self.dense_top.shape[1]

    @property
    def nb(self) -> int:
        return self.dense_top.shape[0]

    @property
    def dtype(self):
        return np.result_type(self.dense_top, self.band.dtype)

    def toarray(self) -> np.ndarray:
        return np.vstack([self.dense_top, self.band.toarray()]).astype(self.dtype)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.dense_top @ x, self.band @ x])

    def norm_inf(self) -> float:
        top = np.abs(self.dense_top).sum(axis=1).max() if self.nb else 0.0
        body = abs(self.band.tocsr()).sum(axis=1).max() if self.band.shape[0] else 0.0
        return float(max(top, body))


class QRFactorization:
    """Givens QR of an almost-banded system; immutable once built.

    ``fill_bw`` is the upper bandwidth of the explicit part of R.
    """

    def __init__(self, W, C, B, G1, G2, L, U, norm):
        self.W, self.C, self.B, self.G1, self.G2 = W, C, B, G1, G2
        self.L, self.U = L, U
        self.norm = norm
        for a in (W, C, B, G1, G2):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def dtype(self):
        return self.W.dtype

    @property
    def fill_bw(self) -> int:
        return self.L + self.U

    def solve(self, rhs) -> np.ndarray:
        return qr_solve(self, rhs)


def _band_layout(system: AlmostBandedSystem):
    nb = system.nb
    body = sp.coo_matrix(system.band.tocsr())
    g = body.row + nb
    off = body.col - g
    L = max(int(-off.min()) if off.size else 0, nb, 0)
    U = max(int(off.max()) if off.size else 0, 0)
    return body, g, L, U


def qr_factor(system: AlmostBandedSystem, dtype=None) -> QRFactorization:
    """Factorize; raises SingularMatrixError on a negligible pivot."""
    nb, n = system.nb, system.n
    dtype = np.result_type(system.dtype, float) if dtype is None else dtype
    body, g, L, U = _band_layout(system)
    width = 2 * L + U + 1
    W = np.zeros((n, width), dtype=dtype)
    W[g, body.col - g + L] = body.data
    B = np.ascontiguousarray(system.dense_top, dtype=dtype)
    for d in range(nb):
        lo, hi = max(0, d - L), min(n, d + L + U + 1)
        W[d, lo - d + L: hi - d + L] = B[d, lo:hi]
    C = np.zeros((n, nb), dtype=dtype)
    C[np.arange(nb), np.arange(nb)] = 1.0
    G1 = np.ones((n, max(L, 1)), dtype=dtype)
    G2 = np.zeros((n, max(L, 1)), dtype=dtype)
    kern.qr_factor_kernel(W, C, B, G1, G2, L, U)
    norm = system.norm_inf()
    piv = np.abs(W[:, L])
    if not np.all(np.isfinite(W)) or piv.min() <= n * EPS * norm:
        k = int(np.argmin(piv))
        raise SingularMatrixError(f"pivot {k} is {piv[k]:.3e} (scale {norm:.3e})")
    return QRFactorization(W, C, B, G1, G2, L, U, norm)


def qr_solve(f: QRFactorization, rhs) -> np.ndarray:
    b = np.asarray(rhs)
    if b.shape != (f.n,):
        raise ValueError(f"rhs of shape {b.shape} for a {f.n}x{f.n} factorization")
    dtype = np.result_type(f.dtype, b)
    if dtype != f.dtype:
        raise ValueError("complex right-hand side needs a complex factorization")
    out = np.empty(f.n, dtype=dtype)
    kern.qr_solve_kernel(f.W, f.C, f.B, f.G1, f.G2, f.L, f.U, b.astype(dtype, copy=False), out)
    return out


class QRStack:
    """Several factorizations of one sparsity layout, solved in a single call.

    Stacks with more than ``PARALLEL_WORK`` stored band entries solve the
    systems on parallel threads; thread start-up costs more than small solves.
    """

    PARALLEL_WORK = 200_000

    def __init__(self, factors: list[QRFactorization]):
        if not factors:
            raise ValueError("empty factorization stack")
        f0 = factors[0]
        if any(f.W.shape != f0.W.shape or f.L != f0.L or f.U != f0.U for f in factors):
            raise ValueError("stacked factorizations must share their layout")
        if any(not np.array_equal(f.B, f0.B) for f in factors):
            raise ValueError("stacked factorizations must share their dense rows")
        self.factors = list(factors)
        self.W = np.stack([f.W for f in factors])
        self.C = np.stack([f.C for f in factors])
        self.G1 = np.stack([f.G1 for f in factors])
        self.G2 = np.stack([f.G2 for f in factors])
        self.B = f0.B
        self.L, self.U = f0.L, f0.U

    def __len__(self) -> int:
        return len(self.factors)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs, dtype=self.W.dtype)
        out = np.empty_like(rhs)
        kernel = (kern.qr_solve_many_parallel_kernel if self.W.size > self.PARALLEL_WORK
                  else kern.qr_solve_many_kernel)
        kernel(self.W, self.C, self.B, self.G1, self.G2, self.L, self.U, rhs, out)
        return out


def banded_triangular_solve(U: BandedMatrix, rhs) -> np.ndarray:
    """Back substitution for a square upper-triangular banded matrix."""
    n = U.shape[0]
    if U.shape != (n, n) or U.lower != 0 and np.any(U.ab[U.upper + 1:] != 0):
        raise ValueError("banded_triangular_solve needs a square upper-triangular matrix")
    ab = U.ab[: U.upper + 1]
    diag = ab[U.upper]
    if np.any(diag == 0):
        raise SingularMatrixError("zero on the diagonal of a triangular system")
    b = np.asarray(rhs)
    dtype = np.result_type(ab, b)
    out = np.empty(n, dtype=dtype)
    kern.upper_banded_solve_kernel(np.ascontiguousarray(ab, dtype=dtype), U.upper,
                                   b.astype(dtype, copy=False), out)
    return out


class TriangularSolver:
    """Pre-packed upper-triangular banded matrix for repeated solves."""

    def __init__(self, U: BandedMatrix):
        n = U.shape[0]
        if U.shape != (n, n) or np.any(U.ab[U.upper + 1:] != 0):
            raise ValueError("TriangularSolver needs a square upper-triangular matrix")
        if np.any(U.ab[U.upper] == 0):
            raise SingularMatrixError("zero on the diagonal of a triangular system")
        self.u = U.upper
        self.ab = np.ascontiguousarray(U.ab[: U.upper + 1])

    def solve(self, rhs) -> np.ndarray:
        b = np.asarray(rhs)
        if b.dtype != self.ab.dtype:
            dtype = np.result_type(self.ab, b)
            ab = self.ab.astype(dtype)
            b = b.astype(dtype)
        else:
            ab = self.ab
        out = np.empty(b.shape[0], dtype=b.dtype)
        kern.upper_banded_solve_kernel(ab, self.u, b, out)
        return out


def shifted_system(L: BandedMatrix, S: BandedMatrix, h: float, z: complex,
                   top: np.ndarray | None = None) -> AlmostBandedSystem:
    """``(h L - z S)`` with optional dense rows bordered on top.

    With ``top`` of ``Nb`` rows the band keeps the leading ``n - Nb`` rows of
    ``h L - z S``.
    """
    A = (h * L.tocsr() - z * S.tocsr()).astype(complex)
    n = A.shape[1]
    if top is None:
        top = np.zeros((0, n), dtype=complex)
    nb = top.shape[0]
    return AlmostBandedSystem(np.asarray(top, dtype=complex), BandedMatrix.from_sparse(A[: n - nb]))


def shifted_banded_solve(L: BandedMatrix, S: BandedMatrix, h: float, z: complex, rhs,
                         top: np.ndarray | None = None) -> np.ndarray:
    """Solve ``(h L - z S) x = rhs`` (bordered by ``top`` if given)."""
    try:
        f = qr_factor(shifted_system(L, S, h, z, top), dtype=complex)
    except SingularMatrixError as exc:
        from .exceptions import PoleCollisionError
        raise PoleCollisionError(f"shift z={z} is (numerically) an eigenvalue: {exc}") from exc
    return qr_solve(f, np.asarray(rhs, dtype=complex))


class FactorCache:
    """Thread-safe memo of factorizations keyed by the caller.

    ``factorizations`` counts how many times a builder actually ran. With
    ``enabled = False`` every request rebuilds.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.factorizations = 0
        self._store: dict = {}
        self._lock = threading.Lock()
        self._key_locks: dict = {}

    def get(self, key: Hashable, build: Callable[[], object]):
        if not self.enabled:
            with self._lock:
                self.factorizations += 1
            return build()
        with self._lock:
            if key in self._store:
                return self._store[key]
            klock = self._key_locks.setdefault(key, threading.Lock())
        with klock:
            with self._lock:
                if key in self._store:
                    return self._store[key]
            value = build()
            with self._lock:
                self._store[key] = value
                self.factorizations += 1
        return value

    def clear(self):
        with self._lock:
            self._store.clear()
            self._key_locks.clear()

    def __contains__(self, key) -> bool:
        return key in self._store

    def __len__(self) -> int:
        return len(self._store)


def conv_inv(lam: int, n: int) -> Callable[[np.ndarray], np.ndarray]:
    """``v -> S_lam^{-1} v`` on length-``n`` vectors by banded back substitution."""
    from .operators import conv_op

    solver = TriangularSolver(conv_op(lam, n, rows=n))
    return solver.solve


def factor_cache(cache: FactorCache, key: Hashable, build: Callable[[], object]):
    """Memoized factorization for ``key`` (see :class:`FactorCache`)."""
    return cache.get(key, build)
