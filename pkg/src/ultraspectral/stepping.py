"""Fully discrete systems and time steppers.

Approach 1 stacks the boundary rows on top of the leading ``n - N`` rows of
the converted equation and solves one almost-banded system per step.
Approach 2 solves the square system first and then re-determines the last
``N`` coefficients from the boundary rows (:func:`bc_correct`).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .banded import (AlmostBandedSystem, FactorCache, QRFactorization, TriangularSolver,
                     qr_factor, qr_solve)
from .exceptions import (BoundaryCorrectionError, InvalidStateError, SingularMatrixError,
                         StepperError)
from .operators import (BandedMatrix, BoundaryFunctional, OperatorSpec, assemble_L, conv_chain,
                        conversion_matrix, fourier_diff_op, mult_op)
from .schemes import RK3, LmmScheme, RkScheme
from .series import (CoeffSeries, PLATEAU_MIN_LENGTH, cheb_points, chebyshev, coeffs_to_vals,
                     fit_length, fourier, fourier_coeffs_to_vals, fourier_points,
                     fourier_vals_to_coeffs, plateau, resolve, vals_to_coeffs)
from .exceptions import ResolutionError

# pointwise nonlinearity f(t, x, u) -> values
Nonlinearity = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

N_MAX = 2 ** 16


@dataclass
class ProblemSpec:
    """``u_t = L u + N(t, u)`` with boundary rows ``B u = c``.

    ``nonlinear`` is pointwise, ``f(t, x, u)`` on arrays. ``initial`` is a
    coefficient series or a callable of ``x`` that is resolved on demand.
    Periodic problems use the Fourier basis and need constant coefficients.
    ``nonlinear_degree`` declares ``f`` a polynomial of that degree in ``u``;
    its coefficients are then computed exactly on one grid.
    """

    linear: OperatorSpec
    boundary: BoundaryFunctional = field(default_factory=lambda: BoundaryFunctional(()))
    initial: CoeffSeries | Callable | None = None
    nonlinear: Optional[Nonlinearity] = None
    periodic: bool = False
    name: str = ""
    nonlinear_degree: Optional[int] = None

    def __post_init__(self):
        if self.periodic:
            if self.boundary.count:
                raise ValueError("periodic problems take no boundary rows")
            if not self.linear.is_constant:
                raise ValueError("periodic problems need constant coefficients")
        elif self.boundary.count != self.linear.order:
            raise ValueError(f"{self.boundary.count} boundary rows for an order-{self.linear.order} operator")

    @property
    def order(self) -> int:
        return self.linear.order

    def initial_coeffs(self, n: int) -> np.ndarray:
        """Initial condition as a length-``n`` coefficient array."""
        u0 = self.initial
        if u0 is None:
            raise InvalidStateError("problem has no initial condition")
        if self.periodic:
            if callable(u0) and not isinstance(u0, CoeffSeries):
                return fourier_vals_to_coeffs(u0(fourier_points(n)) * np.ones(n)).coeffs
            return fit_length(np.asarray(u0.coeffs, dtype=complex), n)
        if callable(u0) and not isinstance(u0, CoeffSeries):
            u0 = resolve(u0, keep="j2")
            self.initial = u0
        return fit_length(np.asarray(u0.coeffs, dtype=float), n)


# ---------------------------------------------------------------------------
# nonlinear terms
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _conversion(N: int, m: int, rows: int) -> sp.csr_matrix:
    return conv_chain(0, N, m, rows)


def sample_nonlinear(f: Nonlinearity, t: float, u: np.ndarray, n_max: int = N_MAX,
                     tol: float = 1e-14, degree: int | None = None) -> np.ndarray:
    """Chebyshev coefficients of ``f(t, x, u(x))`` resolved on doubling grids.

    With ``degree`` the grid holds the product exactly and no search is done
    (``f`` must then be polynomial in ``u`` with ``x``-independent coefficients
    or be resolved by the same grid).
    """
    if degree is not None:
        m = max(degree * (u.size - 1) + 1, PLATEAU_MIN_LENGTH)
        vals = coeffs_to_vals(chebyshev(fit_length(u, m)))
        return vals_to_coeffs(np.asarray(f(t, cheb_points(m), vals), dtype=float) * np.ones(m)).coeffs
    m = max(u.size, PLATEAU_MIN_LENGTH)
    while m <= n_max:
        vals = coeffs_to_vals(chebyshev(fit_length(u, m)))
        g = vals_to_coeffs(np.asarray(f(t, cheb_points(m), vals), dtype=float) * np.ones(m)).coeffs
        p = plateau(g, tol, clamp=False)
        if p.found:
            return g[: p.j2]
        m = 2 * (m - 1) + 1
    raise ResolutionError(f"nonlinear term not resolved with {n_max} points")


def sample_nonlinear_periodic(f: Nonlinearity, t: float, u: np.ndarray) -> np.ndarray:
    # products of degree-n trigonometric terms are exact on 2n+1 points per factor pair;
    # sample on a grid three times as fine and keep the first n slots
    n = u.size
    m = 3 * n
    wide = np.zeros(m, dtype=complex)
    wide[:n] = u
    vals = fourier_coeffs_to_vals(fourier(wide))
    g = fourier_vals_to_coeffs(np.asarray(f(t, fourier_points(m), vals), dtype=complex) * np.ones(m))
    return g.coeffs[:n]


def eval_nonlinear(f: Optional[Nonlinearity], t: float, u, order: int, rows: int | None = None,
                   n_max: int = N_MAX, degree: int | None = None) -> CoeffSeries:
    """C^(order) coefficients of the nonlinear term, ``rows`` of them.

    The Chebyshev coefficients are converted through an exactly truncated
    conversion chain, so the result equals the leading rows of the infinite
    converted series.
    """
    c = np.asarray(u.coeffs if isinstance(u, CoeffSeries) else u, dtype=float)
    rows = c.size if rows is None else rows
    if f is None:
        return CoeffSeries(np.zeros(rows), *_basis(order))
    g = sample_nonlinear(f, t, c, n_max, degree=degree)
    m = max(g.size, rows + 2 * order)
    out = _conversion(order, m, rows) @ fit_length(g, m)
    return CoeffSeries(out, *_basis(order))


def _basis(order: int):
    from .series import Basis

    return (Basis.CHEBYSHEV, 0) if order == 0 else (Basis.ULTRASPHERICAL, order)


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

class Discretization:
    """All size-``n`` matrices of one problem.

    ``S`` and ``L`` are square (``n`` rows); Approach 1 uses their leading
    ``n - N`` rows, which equal the exactly truncated rectangular versions.
    """

    def __init__(self, problem: ProblemSpec, n: int):
        N = problem.order
        if n <= N + 1:
            raise ValueError(f"n = {n} is too small for an order-{N} problem")
        self.problem = problem
        self.n = n
        self.N = N
        self.periodic = problem.periodic
        if problem.periodic:
            if n % 2 == 0:
                raise ValueError("periodic problems use odd n")
            d = np.zeros(n, dtype=complex)
            for lam, a in enumerate(problem.linear.coeffs):
                if a is None:
                    continue
                coef = complex(a.coeffs[0])
                d += coef * (1.0 if lam == 0 else fourier_diff_op(lam, n, np.pi).ab[0])
            self.L = BandedMatrix(d.reshape(1, n), (n, n), 0, 0)
            self.S = BandedMatrix(np.ones((1, n), dtype=complex), (n, n), 0, 0)
            self.B = np.zeros((0, n))
            self.c = np.zeros(0)
            self.dtype = complex
        else:
            self.L = assemble_L(problem.linear, n, rows=n)
            self.S = conversion_matrix(N, n, rows=n)
            self.B = problem.boundary.matrix(n)
            self.c = problem.boundary.values
            self.dtype = float
        self.nb = self.B.shape[0]
        self.top = n - self.nb
        self.L_csr = self.L.tocsr()
        self.S_csr = self.S.tocsr()
        self._tri = None
        self._bc = None

    # -- pieces -----------------------------------------------------------
    @property
    def S_solver(self) -> TriangularSolver:
        if self._tri is None:
            self._tri = TriangularSolver(self.S)
        return self._tri

    def nonlinear(self, t: float, u: np.ndarray, rows: int | None = None) -> np.ndarray | None:
        f = self.problem.nonlinear
        if f is None:
            return None
        if self.periodic:
            return sample_nonlinear_periodic(f, t, u)
        rows = self.n if rows is None else rows
        return eval_nonlinear(f, t, u, self.N, rows, degree=self.problem.nonlinear_degree).coeffs

    def F(self, t: float, u: np.ndarray) -> np.ndarray:
        """Converted right-hand side ``L u + N(t, u)`` (``n`` rows)."""
        out = self.L_csr @ u
        nl = self.nonlinear(t, u)
        if nl is not None:
            out = out + nl
        return out

    def nonlinear_jacobian(self, t: float, u: np.ndarray) -> sp.csr_matrix:
        """Converted multiplication by ``df/du`` at ``u`` (finite differences)."""
        f = self.problem.nonlinear
        n, N = self.n, self.N
        x = cheb_points(max(2 * n, PLATEAU_MIN_LENGTH))
        vals = coeffs_to_vals(chebyshev(fit_length(u, x.size)))
        delta = 1e-7 * max(1.0, np.abs(vals).max())
        fu = (np.asarray(f(t, x, vals + delta)) - np.asarray(f(t, x, vals - delta))) / (2 * delta)
        a = vals_to_coeffs(fu * np.ones(x.size)).coeffs
        p = plateau(a, 1e-13, clamp=False)
        if p.found:
            a = a[: p.j]
        M = mult_op(0, a, n, n + 2 * N).tocsr()
        return (conv_chain(0, N, n + 2 * N, n) @ M).tocsr()

    # -- boundary ------------------------------------------------------------
    def bc_correct(self, u: np.ndarray) -> np.ndarray:
        if self.nb == 0:
            return u
        if self._bc is None:
            self._bc = _bc_factor(self.B)
        return _bc_apply(self._bc, self.B, self.c, u)

    # -- system builders -----------------------------------------------------
    def system_a1(self, beta_h: float, jac: sp.csr_matrix | None = None) -> AlmostBandedSystem:
        """``[B; (S - beta_h (L + jac))[:n-N]]``."""
        A = self.S_csr if beta_h == 0 else self.S_csr - beta_h * self.L_csr
        if jac is not None:
            A = A - beta_h * jac
        return AlmostBandedSystem(self.B.astype(self.dtype), BandedMatrix.from_sparse(A[: self.top]))

    def system_a2(self, beta_h: float, jac: sp.csr_matrix | None = None) -> AlmostBandedSystem:
        A = self.S_csr - beta_h * self.L_csr
        if jac is not None:
            A = A - beta_h * jac
        return AlmostBandedSystem(np.zeros((0, self.n), dtype=self.dtype), BandedMatrix.from_sparse(A))


def _bc_factor(B: np.ndarray):
    N, n = B.shape
    tail = B[:, n - N:]
    if np.linalg.cond(tail) > 1e14:
        raise BoundaryCorrectionError("trailing block of the boundary rows is singular")
    return np.linalg.inv(tail)


def _bc_apply(tail_inv, B, c, u):
    N, n = B.shape
    out = u.copy()
    out[n - N:] = tail_inv @ (c - B[:, : n - N] @ u[: n - N])
    return out


def bc_correct(u, B: BoundaryFunctional | np.ndarray, c=None) -> np.ndarray:
    """Replace the last ``N`` coefficients of ``u`` so that ``B u = c``."""
    u = np.asarray(u)
    if isinstance(B, BoundaryFunctional):
        c = B.values if c is None else c
        B = B.matrix(u.size)
    c = np.zeros(B.shape[0]) if c is None else np.asarray(c)
    N, n = B.shape
    tail = B[:, n - N:]
    try:
        x = np.linalg.solve(tail, c - B[:, : n - N] @ u[: n - N])
    except np.linalg.LinAlgError as exc:
        raise BoundaryCorrectionError(str(exc)) from exc
    if np.linalg.cond(tail) > 1e14:
        raise BoundaryCorrectionError("trailing block of the boundary rows is singular")
    out = u.copy()
    out[n - N:] = x
    return out


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class HistoryEntry:
    t: float
    u: np.ndarray
    Su: np.ndarray | None = None
    Fu: np.ndarray | None = None


class StepState:
    """Ring of the last ``r`` solutions with cached products."""

    def __init__(self, t0: float, u0: np.ndarray, r: int = 1):
        self.history: deque[HistoryEntry] = deque(maxlen=max(r, 1))
        self.history.append(HistoryEntry(float(t0), np.asarray(u0).copy()))
        self.steps = 0

    @property
    def n(self) -> int:
        return self.history[-1].u.size

    @property
    def t(self) -> float:
        return self.history[-1].t

    @property
    def u(self) -> np.ndarray:
        return self.history[-1].u

    def push(self, t: float, u: np.ndarray):
        self.history.append(HistoryEntry(float(t), u))
        self.steps += 1

    def resize_window(self, r: int):
        if self.history.maxlen != r:
            self.history = deque(self.history, maxlen=r)

    def align(self, n: int):
        """Zero-pad (never truncate) every history vector to length ``n``."""
        for e in self.history:
            if e.u.size > n:
                raise ValueError("align only pads")
            if e.u.size < n:
                e.u = fit_length(e.u, n)
                e.Su = e.Fu = None

    def chop_last(self, m: int):
        e = self.history[-1]
        if m < e.u.size:
            e.u = e.u[:m].copy()
            e.Su = e.Fu = None


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

class Stepper:
    """Advance a problem with a multistep or chained Runge-Kutta scheme.

    ``approach`` selects the bordered solve (1) or solve-then-correct (2).
    ``cache`` memoizes factorizations by size; pass a shared
    :class:`FactorCache` to count them. ``startup`` is ``"rk3"`` (substepped
    RK3 bootstrap) or a callable ``exact(t) -> coefficients``.
    """

    def __init__(self, problem: ProblemSpec, scheme, h: float, approach: int = 1,
                 cache: FactorCache | None = None, startup="rk3",
                 newton_tol: float = 1e-12, newton_maxit: int = 25):
        if h <= 0:
            raise ValueError("step size must be positive")
        if approach not in (1, 2):
            raise ValueError("approach is 1 or 2")
        self.problem = problem
        self.scheme = scheme
        self.h = float(h)
        self.approach = approach
        self.cache = FactorCache() if cache is None else cache
        self.startup = startup
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self._disc: dict[int, Discretization] = {}
        self._startup_stepper = None
        self.newton_iterations = 0

    @property
    def r(self) -> int:
        return self.scheme.r

    def disc(self, n: int) -> Discretization:
        d = self._disc.get(n)
        if d is None:
            d = self._disc[n] = Discretization(self.problem, n)
        return d

    def initial_state(self, n: int | None = None, t0: float = 0.0) -> StepState:
        """State holding the initial condition at size ``n``.

        ``n = None`` keeps the resolved length of a closed-form initial
        condition (at least 17), the natural start of an adaptive run.
        """
        if n is None:
            if self.problem.periodic:
                raise ValueError("periodic problems need an explicit n")
            self.problem.initial_coeffs(PLATEAU_MIN_LENGTH)
            n = max(self.problem.initial.n, PLATEAU_MIN_LENGTH)
        return StepState(t0, self.problem.initial_coeffs(n), self.r)

    # -- helpers -------------------------------------------------------------
    def _factor(self, d: Discretization, kind: str, beta_h: float) -> QRFactorization:
        key = (id(self.problem), d.n, self.approach, kind, beta_h)

        def build():
            sys = d.system_a1(beta_h) if self.approach == 1 else d.system_a2(beta_h)
            try:
                return qr_factor(sys)
            except SingularMatrixError as exc:
                raise StepperError(f"singular step system at n={d.n}: {exc}") from exc

        return self.cache.get(key, build)

    def _fill(self, d: Discretization, e: HistoryEntry):
        if e.Su is None:
            e.Su = d.S_csr @ e.u
        if e.Fu is None:
            e.Fu = d.F(e.t, e.u)

    def _solve_a1(self, d, f, top_rhs, body_rhs):
        return qr_solve(f, np.concatenate([top_rhs, body_rhs[: d.top]]))

    # -- public --------------------------------------------------------------
    def step(self, state: StepState) -> np.ndarray:
        """Advance ``state`` by one step and return the new coefficients."""
        n = state.n
        if any(e.u.size != n for e in state.history):
            raise InvalidStateError("history vectors differ in length; align first")
        if isinstance(self.scheme, RkScheme):
            u = self._rk_step(state)
        else:
            if len(state.history) < self.r:
                self.startup_step(state)
                return state.u
            u = self._lmm_step(state)
        state.push(state.t + self.h, u)
        return u

    def compute(self, state: StepState) -> np.ndarray:
        """New coefficients from ``state`` without recording them."""
        if isinstance(self.scheme, RkScheme):
            return self._rk_step(state)
        if len(state.history) < self.r:
            raise InvalidStateError(f"{self.scheme.name} needs {self.r} history entries")
        return self._lmm_step(state)

    def _lmm_step(self, state: StepState) -> np.ndarray:
        sch: LmmScheme = self.scheme
        d = self.disc(state.n)
        h = self.h
        hist = list(state.history)[-self.r:]
        rhs = np.zeros(d.n, dtype=d.dtype)
        for j, e in enumerate(hist):
            self._fill(d, e)
            if sch.beta[j]:
                rhs += (h * sch.beta[j]) * e.Fu
            if sch.alpha[j]:
                rhs -= sch.alpha[j] * e.Su
        t_new = hist[-1].t + h
        bh = h * sch.beta[-1]
        if bh != 0 and self.problem.nonlinear is not None:
            return self._newton(d, t_new, bh, rhs, hist[-1].u)
        f = self._factor(d, "lmm", bh) if (self.approach == 1 or bh != 0) else None
        if self.approach == 1:
            return self._solve_a1(d, f, d.c, rhs)
        u = d.S_solver.solve(rhs) if bh == 0 else qr_solve(f, rhs)
        return d.bc_correct(u)

    def _newton(self, d: Discretization, t: float, bh: float, rhs: np.ndarray, guess: np.ndarray):
        # solve (S - bh L) u - bh N(t, u) = rhs (+ boundary rows) by Newton
        u = guess.copy()
        jac = None
        f = None
        prev = np.inf
        for it in range(self.newton_maxit):
            nl = d.nonlinear(t, u)
            res = d.S_csr @ u - bh * (d.L_csr @ u + nl) - rhs
            if self.approach == 1:
                res = np.concatenate([d.B @ u - d.c, res[: d.top]])
            if f is None or it % 4 == 0:
                jac = d.nonlinear_jacobian(t, u)
                sys = d.system_a1(bh, jac) if self.approach == 1 else d.system_a2(bh, jac)
                f = qr_factor(sys)
            du = qr_solve(f, -res)
            u = u + du
            self.newton_iterations += 1
            size = np.abs(du).max()
            if size <= self.newton_tol * max(1.0, np.abs(u).max()):
                return d.bc_correct(u) if self.approach == 2 else u
            if size > 1e3 * prev and it > 2:
                break
            prev = size
        raise StepperError(f"Newton did not converge in {self.newton_maxit} iterations at t={t:.6g}")

    def _rk_step(self, state: StepState) -> np.ndarray:
        sch: RkScheme = self.scheme
        e = state.history[-1]
        d = self.disc(state.n)
        h = self.h
        f = self._factor(d, "rk", 0.0) if self.approach == 1 else None
        zeros = np.zeros(d.nb)
        y = None
        acc = np.zeros(d.n, dtype=d.dtype)
        for j in range(sch.s):
            if j == 0:
                self._fill(d, e)
                Fv = e.Fu
            else:
                Fv = d.F(e.t + sch.theta[j] * h, e.u + sch.mu[j] * y)
            if self.approach == 1:
                y = self._solve_a1(d, f, zeros, h * Fv)
            else:
                y = d.S_solver.solve(h * Fv)
            acc += sch.gamma[j] * y
        u = e.u + acc
        return d.bc_correct(u) if self.approach == 2 else u

    # -- startup -------------------------------------------------------------
    def startup_step(self, state: StepState):
        """Add one history entry by the startup procedure (one step of ``h``)."""
        t_next = state.t + self.h
        if callable(self.startup):
            u = np.asarray(self.startup(t_next), dtype=float)
            u = fit_length(u, state.n)
        else:
            u = self._rk_substeps(state)
        state.history.append(HistoryEntry(t_next, u))
        state.steps += 1

    def bootstrap(self, state: StepState):
        """Fill the multistep history up to ``r`` entries."""
        while len(state.history) < self.r:
            self.startup_step(state)

    def _rk_substeps(self, state: StepState) -> np.ndarray:
        d = self.disc(state.n)
        rho = spectral_radius_estimate(d)
        m = max(1, math.ceil(2.0 * self.h * rho / 1.5))
        sub = Stepper(self.problem, RK3, self.h / m, self.approach, FactorCache())
        st = StepState(state.t, state.u, 1)
        for _ in range(m):
            sub.step(st)
        return st.u


def spectral_radius_estimate(d: Discretization, iters: int = 40, seed: int = 0) -> float:
    """Rough magnitude of the largest eigenvalue of ``S^{-1} L`` (power iteration)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d.n).astype(d.dtype)
    est = 0.0
    for _ in range(iters):
        w = d.S_solver.solve(d.L_csr @ v)
        nw = np.linalg.norm(w)
        if nw == 0 or not np.isfinite(nw):
            break
        est = max(est, nw / np.linalg.norm(v))
        v = w / nw
    return est


def _one_step(problem, scheme, state, h, approach, cache):
    if cache is None:
        # factorizations live with the problem so a new operator never sees stale ones
        cache = problem.__dict__.setdefault("_step_cache", FactorCache())
    return Stepper(problem, scheme, h, approach, cache).compute(state)


def step_a1_lmm(problem: ProblemSpec, scheme: LmmScheme, state: StepState, h: float,
                cache: FactorCache | None = None) -> np.ndarray:
    """One bordered multistep step from a full history (not recorded)."""
    return _one_step(problem, scheme, state, h, 1, cache)


def step_a1_rk(problem: ProblemSpec, scheme: RkScheme, state: StepState, h: float,
               cache: FactorCache | None = None) -> np.ndarray:
    """One bordered Runge-Kutta step (not recorded)."""
    return _one_step(problem, scheme, state, h, 1, cache)


def step_a2_lmm(problem: ProblemSpec, scheme: LmmScheme, state: StepState, h: float,
                cache: FactorCache | None = None) -> np.ndarray:
    """One solve-then-correct multistep step (not recorded)."""
    return _one_step(problem, scheme, state, h, 2, cache)


def step_a2_rk(problem: ProblemSpec, scheme: RkScheme, state: StepState, h: float,
               cache: FactorCache | None = None) -> np.ndarray:
    """One solve-then-correct Runge-Kutta step (not recorded)."""
    return _one_step(problem, scheme, state, h, 2, cache)


def run(stepper: Stepper, state: StepState, steps: int, callback=None) -> StepState:
    """Take ``steps`` steps (startup steps included in the count)."""
    for _ in range(steps):
        stepper.step(state)
        if callback is not None:
            callback(state)
    return state


def solve_bvp(spec: OperatorSpec, boundary: BoundaryFunctional, g, n: int) -> CoeffSeries:
    """Solve ``L u = g`` with ``B u = c`` at size ``n`` (bordered QR)."""
    N = spec.order
    if isinstance(g, CoeffSeries):
        gc = np.asarray(g.coeffs, dtype=float)
    elif callable(g):
        gc = np.asarray(resolve(g).coeffs)
    else:
        gc = np.atleast_1d(np.asarray(g, dtype=float))
    m = max(gc.size, n)
    rhs = conv_chain(0, N, m, n - N) @ fit_length(gc, m)
    L = assemble_L(spec, n)
    sys = AlmostBandedSystem(boundary.matrix(n), L)
    try:
        f = qr_factor(sys)
    except SingularMatrixError as exc:
        raise StepperError(f"singular boundary value problem: {exc}") from exc
    return chebyshev(qr_solve(f, np.concatenate([boundary.values, rhs])))
