"""Exponential integrators with phi-function actions by sums of poles.

For ``u' = K u + N(t, u)`` the phi functions of ``G = h K`` act through
rational approximations ``phi_j(z) ~ sum_l w_l[j] / (z - z_l)``, so each
action is a weighted sum of shifted solves ``(G - z_l)^{-1}``. With the
boundary rows ``B`` bordered on top, ``K`` is the operator of the Approach 1
semidiscretization and every shifted solve is one almost-banded system

    [B; (c h L - z S)[:n-N]] x = [-B xi / z; S[:n-N] xi].

Real inputs only need the poles in the upper half plane (twice the real
part of their sum).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from . import _kernels as kern
from .banded import QRStack, qr_factor, shifted_system
from .exceptions import ConfigError, InvalidStateError, PoleCollisionError, SingularMatrixError
from .operators import conv_chain
from .series import PLATEAU_MIN_LENGTH, cheb_points
from .stepping import Discretization, ProblemSpec

TAYLOR_RADIUS = 1.0
TAYLOR_TERMS = 30


# ---------------------------------------------------------------------------
# scalar phi and zeta functions
# ---------------------------------------------------------------------------

def phi_scalar(j: int, z):
    """``phi_j(z)``; real input gives a real result."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    real = not isinstance(z, complex) and np.isrealobj(z)
    z = complex(z)
    if abs(z) < TAYLOR_RADIUS:
        # the recurrence cancels like eps / |z|^j here
        k = np.arange(TAYLOR_TERMS)
        terms = z ** k / np.array([math.factorial(j + i) for i in k], dtype=float)
        val = complex(terms[::-1].sum())
    else:
        val = complex(np.exp(z)) if j == 0 else complex(np.expm1(z)) / z
        for i in range(1, j):
            val = (val - 1.0 / math.factorial(i)) / z
    return val.real if real else val


@lru_cache(maxsize=None)
def zeta_phi_matrix(p: int) -> np.ndarray:
    """``C`` with ``zeta_j = sum_m C[j, m] phi_{m+1}`` for ``j < p``.

    From ``z zeta_j + 1 = sum_{i<j} zeta_i / (j - i)`` and
    ``phi_{m+1} / z = phi_{m+2} + 1 / ((m+1)! z)``.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    C = [[Fraction(0)] * p for _ in range(p)]
    C[0][0] = Fraction(1)
    for j in range(1, p):
        d = [sum(C[i][m] / (j - i) for i in range(j)) for m in range(p)]
        if sum(dm / math.factorial(m + 1) for m, dm in enumerate(d)) != 1:
            raise ArithmeticError("zeta recurrence is not entire")
        for m in range(p - 1):
            C[j][m + 1] = d[m]
    return np.array([[float(v) for v in row] for row in C])


def zeta_weights(p: int, z) -> list:
    """``[zeta_0(z), ..., zeta_{p-1}(z)]``, finite at ``z = 0``."""
    C = zeta_phi_matrix(p)
    phis = [phi_scalar(m + 1, z) for m in range(p)]
    return [sum(C[j, m] * phis[m] for m in range(p)) for j in range(p)]


# ---------------------------------------------------------------------------
# pole sets
# ---------------------------------------------------------------------------

class PoleKind(enum.Enum):
    TALBOT = "talbot"
    CF = "cf"


@dataclass(frozen=True)
class PoleSet:
    """``phi_j(z) ~ sum_l weights[l, j] / (z - poles[l])`` for ``j <= j_max``."""

    poles: np.ndarray
    weights: np.ndarray
    kind: PoleKind

    def __post_init__(self):
        z = np.asarray(self.poles, dtype=complex)
        w = np.asarray(self.weights, dtype=complex)
        if w.ndim != 2 or w.shape[0] != z.size:
            raise ValueError("weights need one row per pole")
        order = np.lexsort((z.real, z.imag))
        z, w = z[order], w[order]
        if not np.allclose(np.sort_complex(z), np.sort_complex(np.conj(z)), rtol=1e-12, atol=0):
            raise ValueError("poles must come in conjugate pairs")
        z.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "poles", z)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kind", PoleKind(self.kind))

    @property
    def q(self) -> int:
        return self.poles.size

    @property
    def j_max(self) -> int:
        return self.weights.shape[1] - 1

    def weight(self, j: int) -> np.ndarray:
        if not 0 <= j <= self.j_max:
            raise ConfigError(f"{self.kind.value} pole set has weights up to j = {self.j_max}")
        return self.weights[:, j]

    def evaluate(self, j: int, z):
        z = np.asarray(z, dtype=complex)
        return (self.weight(j) / (z[..., None] - self.poles)).sum(axis=-1)

    def reduced(self):
        """Upper-half-plane poles with their symmetrization factors."""
        keep = self.poles.imag >= 0
        fac = np.where(self.poles.imag[keep] > 0, 2.0, 1.0)
        return np.flatnonzero(keep), fac


@dataclass(frozen=True)
class TalbotParams:
    """Cotangent contour ``scale q (a t cot(b t) - c + i d t)``."""

    a: float = 0.5017
    b: float = 0.6407
    c: float = 0.6122
    d: float = 0.2645
    scale: float = 1.0


def talbot_poles(q: int = 32, j_max: int = 3, params: TalbotParams = TalbotParams()) -> PoleSet:
    """Trapezoid rule on the Talbot contour, nodes ``pi (2l - q - 1) / (q - 1)``.

    The nodes include both ends ``+-pi``, so the weights are the trapezoid
    ones: ``i / (q - 1)`` times the integrand, halved at the ends.
    """
    if q < 16 or q % 2:
        raise ValueError("Talbot pole sets need an even q >= 16")
    l = np.arange(1, q + 1)
    th = np.pi * (2 * l - q - 1) / (q - 1)
    a, b, c, d, s = params.a, params.b, params.c, params.d, params.scale * q
    z = s * (a * th / np.tan(b * th) - c + 1j * d * th)
    dz = s * (a / np.tan(b * th) - a * b * th / np.sin(b * th) ** 2 + 1j * d)
    ends = np.ones(q)
    ends[[0, -1]] = 0.5
    base = 1j / (q - 1) * np.exp(z) * dz * ends
    W = np.stack([base / z ** j for j in range(j_max + 1)], axis=1)
    return PoleSet(z, W, PoleKind.TALBOT)


def load_pole_table(path) -> PoleSet:
    """Read a ``q j_max kind`` table (one line per pole)."""
    try:
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read pole table {path}: {exc}") from exc
    try:
        q, j_max, kind = int(lines[0][0]), int(lines[0][1]), lines[0][2]
        rows = np.array([[float(v) for v in ln] for ln in lines[1:]])
        if rows.shape != (q, 2 * (j_max + 2)):
            raise ValueError(f"expected {q} rows of {2 * (j_max + 2)} numbers")
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed pole table {path}: {exc}") from exc
    z = rows[:, 0] + 1j * rows[:, 1]
    W = rows[:, 2::2] + 1j * rows[:, 3::2]
    return PoleSet(z, W, PoleKind(kind))


@lru_cache(maxsize=None)
def cf_poles(q: int = 14, j_max: int = 3) -> PoleSet:
    """Shipped common-pole CF set for ``phi_0 .. phi_j_max`` on (-inf, 0]."""
    res = resources.files("ultraspectral") / "data" / f"cf{q}.txt"
    if not res.is_file():
        raise ConfigError(f"no CF table for q = {q}")
    with resources.as_file(res) as path:
        ps = load_pole_table(path)
    if ps.kind is not PoleKind.CF:
        raise ConfigError("table is not a CF pole set")
    if j_max > ps.j_max:
        raise ConfigError(f"CF table holds weights up to j = {ps.j_max}")
    return PoleSet(ps.poles, ps.weights[:, : j_max + 1], PoleKind.CF)


# ---------------------------------------------------------------------------
# phi operators
# ---------------------------------------------------------------------------

class PhiOperator:
    """phi-function actions of ``G = h K`` for one discretization.

    ``poles`` is one pole set shared by all ``phi_j`` or a sequence indexed
    by ``j``; all entries must be of one kind. Factorizations are built per
    (stage fraction ``c``, pole set) on first use and never change.
    """

    def __init__(self, disc: Discretization, h: float, poles: PoleSet | Sequence[PoleSet]):
        self.disc = disc
        self.h = float(h)
        self.n = disc.n
        self._sets = _check_sets(poles)
        self.real = not disc.periodic
        self._factors: dict = {}
        self._poly = None
        self._S_top = None

    @classmethod
    def for_problem(cls, problem: ProblemSpec, n: int, h: float, poles=None):
        return cls(Discretization(problem, n), h, cf_poles() if poles is None else poles)

    @classmethod
    def from_dense(cls, A, h: float, poles=None, nonlinear: Optional[Callable] = None):
        """Operator for ``u' = A u + nonlinear(t, u)`` with a dense matrix ``A``."""
        return DensePhiOperator(A, h, cf_poles() if poles is None else poles, nonlinear)

    # -- pole set per j ------------------------------------------------------
    def poles_for(self, j: int) -> PoleSet:
        if isinstance(self._sets, PoleSet):
            return self._sets
        if j >= len(self._sets):
            raise ConfigError(f"no pole set for phi_{j}")
        return self._sets[j]

    @property
    def kind(self) -> PoleKind:
        return (self._sets if isinstance(self._sets, PoleSet) else self._sets[0]).kind

    # -- lifting -------------------------------------------------------------
    def lift(self, xi: np.ndarray) -> np.ndarray:
        """Right-hand side image ``[B xi; S[:n-N] xi]`` of a state vector."""
        d = self.disc
        if d.periodic:
            return np.asarray(xi, dtype=complex)
        if self._S_top is None:
            self._S_top = d.S_csr[: d.top]
        return np.concatenate([d.B @ xi, self._S_top @ xi])

    def lift_state(self, u: np.ndarray) -> np.ndarray:
        """Lift of a solution state: the boundary rows carry the boundary data.

        For a state that satisfies the boundary rows this equals ``lift(u)``.
        For incompatible data (a first step from an initial condition that
        violates them) the shifted solves impose the boundary rows, which
        avoids the global ringing of a coefficient-level correction.
        """
        d = self.disc
        if d.periodic:
            return self.lift(u)
        if self._S_top is None:
            self._S_top = d.S_csr[: d.top]
        return np.concatenate([d.problem.boundary.values, self._S_top @ u])

    def forcing(self, t: float, u: np.ndarray) -> np.ndarray | None:
        """Lifted nonlinear term ``[0; S[:n-N] N(t, u)]``, or None."""
        d = self.disc
        if d.problem.nonlinear is not None and d.problem.nonlinear_degree is not None \
                and not d.periodic:
            return self._forcing_poly(t, u)
        nl = d.nonlinear(t, u, None if d.periodic else d.top)
        if nl is None:
            return None
        if d.periodic:
            return nl
        return np.concatenate([np.zeros(d.nb), nl])

    def _forcing_poly(self, t, u):
        # polynomial nonlinearity: one exact grid, transforms without wrappers
        d = self.disc
        if self._poly is None:
            m = max(d.problem.nonlinear_degree * (d.n - 1) + 1, PLATEAU_MIN_LENGTH, d.n + d.N)
            m = sfft.next_fast_len(m - 1, real=True) + 1
            sign = np.ones(m)
            sign[1::2] = -1.0
            self._poly = (m, cheb_points(m), sign, conv_chain(0, d.N, m, d.top))
        m, x, sign, conv = self._poly
        c = np.zeros(m)
        c[: u.size] = u
        vals = (sfft.dct(c, type=1) + c[0] + c[-1] * sign) / 2
        g = sfft.dct(np.asarray(d.problem.nonlinear(t, x, vals), dtype=float) * np.ones(m), type=1)
        g /= m - 1
        g[0] /= 2
        g[-1] /= 2
        out = np.zeros(d.n)
        out[d.nb:] = conv @ g
        return out

    def finish(self, u: np.ndarray) -> np.ndarray:
        return self.disc.bc_correct(u)

    @property
    def factorizations(self) -> int:
        """Number of shifted systems factored so far."""
        return sum(b.W.shape[0] for b in self._factors.values())

    # -- solves --------------------------------------------------------------
    def _stack(self, c: float, ps: PoleSet):
        key = (c, id(ps))
        st = self._factors.get(key)
        if st is None:
            st = self._factors[key] = self._build(c, ps)
        return st

    def _build(self, c: float, ps: PoleSet):
        d = self.disc
        idx, fac = ps.reduced() if self.real else (np.arange(ps.q), np.ones(ps.q))
        z = ps.poles[idx]
        if d.periodic:
            diag = c * self.h * d.L.ab[0]
            den = diag[None, :] - z[:, None]
            if np.any(np.abs(den) <= 1e-14 * (1 + np.abs(diag).max())):
                raise PoleCollisionError("a pole coincides with an eigenvalue")
            return _PoleBlock(ps.weights[idx], fac, z, den, d.nb)
        factors = []
        for zl in z:
            try:
                factors.append(qr_factor(shifted_system(d.L, d.S, c * self.h, zl, d.B), dtype=complex))
            except SingularMatrixError as exc:
                raise PoleCollisionError(f"shift {zl:.6g} hits the spectrum: {exc}") from exc
        return _PoleBlock(ps.weights[idx], fac, z, QRStack(factors), d.nb)

    def combine(self, c: float, terms) -> np.ndarray:
        """``sum phi_j(c G) xi_j`` for lifted ``terms = [(j, lift(xi_j)), ...]``."""
        if isinstance(self._sets, PoleSet):
            return self._stack(c, self._sets).apply(terms, self.real)
        groups: dict = {}
        for j, v in terms:
            if v is None:
                continue
            ps = self.poles_for(j)
            groups.setdefault(id(ps), (ps, []))[1].append((j, v))
        out = np.zeros(self.n, dtype=float if self.real else complex)
        for ps, group in groups.values():
            out += self._stack(c, ps).apply(group, self.real)
        return out


class _PoleBlock:
    """Reduced poles of one set at one stage fraction with their solver.

    ``solver`` is a :class:`QRStack` or, for diagonal operators, the array
    of shifted diagonals.
    """

    def __init__(self, W, fac, z, solver, nb):
        self.W = np.ascontiguousarray(W)
        self.fac = fac
        self.top_scale = (-1.0 / z)[:, None]
        self.solver = solver
        self.nb = nb
        self._top = np.ascontiguousarray(self.top_scale[:, 0])

    def _apply_fused(self, terms):
        js, vs = [], []
        for j, v in terms:
            if v is None:
                continue
            if j >= self.W.shape[1]:
                raise ConfigError(f"pole set has weights up to j = {self.W.shape[1] - 1}")
            js.append(j)
            vs.append(v)
        st = self.solver
        out = np.empty(vs[0].size)
        kern.pole_sum_kernel(st.W, st.C, st.B, st.G1, st.G2, st.L, st.U,
                             np.ascontiguousarray(self.W[:, js]), np.array(vs, dtype=float),
                             self._top, self.fac, self.nb, out)
        return out

    def apply(self, terms, real: bool) -> np.ndarray:
        if real and isinstance(self.solver, QRStack):
            return self._apply_fused(terms)
        R = None
        for j, v in terms:
            if v is None:
                continue
            if j >= self.W.shape[1]:
                raise ConfigError(f"pole set has weights up to j = {self.W.shape[1] - 1}")
            t = self.W[:, j, None] * v
            R = t if R is None else R + t
        if isinstance(self.solver, np.ndarray):
            X = R / self.solver
        else:
            R[:, : self.nb] *= self.top_scale
            X = self.solver.solve(R)
        if real:
            return self.fac @ X.real
        return X.sum(axis=0)


class DensePhiOperator(PhiOperator):
    """phi actions of ``G = h A`` for a small dense ``A`` (reference and tests)."""

    def __init__(self, A, h, poles, nonlinear=None):
        A = np.atleast_2d(np.asarray(A))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        self.A = A
        self.h = float(h)
        self.n = A.shape[0]
        self._sets = _check_sets(poles)
        self.real = np.isrealobj(A)
        self.nonlinear = nonlinear
        self._factors = {}
        self.disc = None

    def lift(self, xi):
        return np.asarray(xi, dtype=float if self.real else complex) * np.ones(self.n)

    def lift_state(self, u):
        return self.lift(u)

    def forcing(self, t, u):
        if self.nonlinear is None:
            return None
        return np.asarray(self.nonlinear(t, u), dtype=float if self.real else complex) * np.ones(self.n)

    def finish(self, u):
        return u

    def _build(self, c, ps):
        idx, fac = ps.reduced() if self.real else (np.arange(ps.q), np.ones(ps.q))
        z = ps.poles[idx]
        G = c * self.h * self.A
        I = np.eye(self.n)
        inv = []
        for zl in z:
            M = G - zl * I
            if np.linalg.cond(M) > 1e14:
                raise PoleCollisionError(f"shift {zl:.6g} hits the spectrum")
            inv.append(np.linalg.inv(M))
        return _DenseBlock(ps.weights[idx], fac, z, np.stack(inv), 0)


class _DenseBlock(_PoleBlock):
    def _apply_fused(self, terms):
        raise NotImplementedError

    def apply(self, terms, real):
        R = sum(self.W[:, j, None] * v for j, v in terms if v is not None)
        X = np.einsum("pij,pj->pi", self.solver, R)
        return self.fac @ X.real if real else X.sum(axis=0)


def _check_sets(poles):
    if isinstance(poles, PoleSet):
        return poles
    sets = tuple(poles)
    if not sets or not all(isinstance(p, PoleSet) for p in sets):
        raise ConfigError("poles must be a PoleSet or a sequence of them")
    if len({p.kind for p in sets}) > 1:
        raise ConfigError("one PhiOperator cannot mix pole-set kinds")
    return sets


def phi_apply(op: PhiOperator, j: int, xi: np.ndarray, c: float = 1.0) -> np.ndarray:
    """``phi_j(c G) xi``."""
    xi = np.asarray(xi)
    if xi.shape != (op.n,):
        raise ValueError(f"vector of length {xi.size} for an operator of size {op.n}")
    return op.combine(c, [(j, op.lift(xi))])


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def etd_krogstad_step(op: PhiOperator, u: np.ndarray, t: float) -> np.ndarray:
    """One step of Krogstad's fourth-order exponential Runge-Kutta method."""
    h = op.h
    Lu = op.lift_state(u)
    F1 = op.forcing(t, u)
    if F1 is None:
        return op.finish(op.combine(1.0, [(0, Lu)]))
    U2 = op.combine(0.5, [(0, Lu), (1, 0.5 * h * F1)])
    F2 = op.forcing(t + 0.5 * h, U2)
    U3 = op.combine(0.5, [(0, Lu), (1, 0.5 * h * F1), (2, h * (F2 - F1))])
    F3 = op.forcing(t + 0.5 * h, U3)
    U4 = op.combine(1.0, [(0, Lu), (1, h * F1), (2, 2 * h * (F3 - F1))])
    F4 = op.forcing(t + h, U4)
    out = op.combine(1.0, [(0, Lu), (1, h * F1),
                           (2, h * (-3 * F1 + 2 * F2 + 2 * F3 - F4)),
                           (3, 4 * h * (F1 - F2 - F3 + F4))])
    return op.finish(out)


def backward_differences(forcings: Sequence[np.ndarray], p: int) -> list:
    """``[nabla^0 v^k, ..., nabla^{p-1} v^k]`` from ``[v^k, v^{k-1}, ...]``."""
    if len(forcings) < p:
        raise InvalidStateError(f"{p} nonlinear evaluations needed, {len(forcings)} given")
    out = []
    for j in range(p):
        out.append(sum((-1) ** i * math.comb(j, i) * forcings[i] for i in range(j + 1)))
    return out


def exp_multistep_step(op: PhiOperator, u: np.ndarray, forcings: Sequence[np.ndarray],
                       p: int) -> np.ndarray:
    """Exponential Adams step ``phi_0(G) u + h sum zeta_j(G) nabla^j v``.

    ``forcings`` are lifted nonlinear terms, newest first; ``zeta_j`` is
    expanded in ``phi_1 .. phi_p`` so all terms share one pole sum.
    """
    terms = [(0, op.lift_state(u))]
    if forcings and forcings[0] is not None:
        nab = backward_differences(forcings, p)
        C = zeta_phi_matrix(p)
        for m in range(p):
            v = op.h * sum(C[j, m] * nab[j] for j in range(p) if C[j, m] != 0)
            if not np.isscalar(v):
                terms.append((m + 1, v))
    return op.finish(op.combine(1.0, terms))


class ExpMultistep:
    """Exponential Adams stepper of order ``p``, started with Krogstad steps."""

    def __init__(self, op: PhiOperator, p: int):
        if p < 1:
            raise ValueError("p must be at least 1")
        self.op = op
        self.p = p
        self.forcings: deque = deque(maxlen=p)

    def step(self, u: np.ndarray, t: float) -> np.ndarray:
        self.forcings.appendleft(self.op.forcing(t, u))
        if self.forcings[0] is None:
            return exp_multistep_step(self.op, u, [None], self.p)
        if len(self.forcings) < self.p:
            return etd_krogstad_step(self.op, u, t)
        return exp_multistep_step(self.op, u, list(self.forcings), self.p)


def etd_run(op: PhiOperator, u0: np.ndarray, t0: float, steps: int, method: str = "krogstad",
            p: int = 2, callback=None) -> np.ndarray:
    """Advance ``steps`` exponential steps; ``method`` is krogstad or multistep."""
    # data that violates the boundary rows is not projected: the first step's
    # shifted solves impose them (see PhiOperator.lift_state)
    u = np.asarray(u0, dtype=float if op.real else complex).copy()
    t = float(t0)
    ms = ExpMultistep(op, p) if method == "multistep" else None
    if ms is None and method != "krogstad":
        raise ValueError(f"unknown exponential method {method!r}")
    for k in range(steps):
        u = etd_krogstad_step(op, u, t) if ms is None else ms.step(u, t)
        t = t0 + (k + 1) * op.h
        if callback is not None:
            callback(k + 1, t, u)
    return u
