"""Stability and rounding analysis of the discretizations.

The analysis matrices are dense ``n x n`` versions of the Approach 2
semidiscretization: the converted equation is inverted and the last ``N``
rows of the identity are replaced by the boundary rows, so that the
eigenvalues govern the step size of schemes with bounded stability regions.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import linregress

from .banded import FactorCache
from .exceptions import UltraspectralError
from .operators import (BoundaryFunctional, OperatorSpec, assemble_L, conversion_matrix, diff_op)
from .series import cheb_points, chebyshev, coeffs_to_vals, fit_length
from .stepping import ProblemSpec, Stepper, StepState

DENSE_CAP = 2048
GROWTH_FLAG = 1e3


class NumericalFailure(UltraspectralError):
    """A dense eigensolve did not converge."""


class AnalysisKind(enum.Enum):
    TRANSPORT_Q = "transport"
    HEAT_G = "heat"
    GENERAL = "general"


@dataclass(frozen=True)
class AnalysisMatrix:
    kind: AnalysisKind
    n: int
    data: np.ndarray
    order: int


# standard Dirichlet-type boundary rows for a pure N-th derivative
_DEFAULT_ROWS = {
    1: ("dirichlet_right",),
    2: ("dirichlet_right", "dirichlet_left"),
    3: ("dirichlet_right", "dirichlet_left", "neumann_right"),
    4: ("dirichlet_right", "dirichlet_left", "neumann_right", "neumann_left"),
}


def default_boundary(N: int) -> BoundaryFunctional:
    if N not in _DEFAULT_ROWS:
        raise ValueError("default boundary rows exist for N = 1..4")
    return BoundaryFunctional.of(*_DEFAULT_ROWS[N])


def bordered_matrix(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``H^{-1} (S_{N-1}..S_0)^{-1} L`` with ``H`` the identity bordered by ``B``."""
    N, n = B.shape
    S = conversion_matrix(N, n, rows=n).toarray()
    A = solve_triangular(S, L)
    H = np.eye(n)
    H[n - N:] = B
    return np.linalg.solve(H, A)


def build_analysis_matrix(kind: str | AnalysisKind, n: int, N: int | None = None,
                          spec: OperatorSpec | None = None,
                          boundary: BoundaryFunctional | None = None) -> AnalysisMatrix:
    """Dense analysis matrix of size ``n``.

    ``transport`` is the first-derivative matrix with the right Dirichlet row,
    ``heat`` the second derivative with both Dirichlet rows, ``general`` an
    ``N``-th derivative (or ``spec``) with ``boundary`` (default rows for N).
    """
    kind = AnalysisKind(kind)
    if n < 4:
        raise ValueError("analysis matrices need n >= 4")
    if n > DENSE_CAP:
        raise ValueError(f"dense analysis is capped at n = {DENSE_CAP}")
    if kind is AnalysisKind.TRANSPORT_Q:
        N, L, bc = 1, diff_op(1, n, rows=n).toarray(), default_boundary(1)
    elif kind is AnalysisKind.HEAT_G:
        N, L, bc = 2, diff_op(2, n, rows=n).toarray(), default_boundary(2)
    else:
        if spec is not None:
            N = spec.order
            L = assemble_L(spec, n, rows=n).toarray()
        else:
            if N is None:
                raise ValueError("general analysis needs N or an operator spec")
            L = diff_op(N, n, rows=n).toarray()
        bc = default_boundary(N) if boundary is None else boundary
    return AnalysisMatrix(kind, n, bordered_matrix(L, bc.matrix(n)), N)


def spectral_radius(A) -> float:
    M = A.data if isinstance(A, AnalysisMatrix) else np.asarray(A)
    if M.shape[0] > DENSE_CAP:
        raise ValueError(f"dense eigensolves are capped at n = {DENSE_CAP}")
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    return float(np.abs(ev).max())


def transport_bound(n: int) -> float:
    return (n - 1) ** 2 * math.sqrt(1 / 3 + 2 / (3 * (n - 1) ** 2))


def heat_bound(n: int) -> float:
    return 2 / 3 * n * (n - 2) * (n - 1) ** 2


@dataclass(frozen=True)
class SpectrumRow:
    kind: str
    n: int
    rho: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.rho / self.bound


def spectrum_row(kind: str, n: int) -> SpectrumRow:
    A = build_analysis_matrix(kind, n)
    bound = transport_bound(n) if A.kind is AnalysisKind.TRANSPORT_Q else heat_bound(n)
    return SpectrumRow(A.kind.value, n, spectral_radius(A), bound)


def check_thm_rho(N: int, n_list: Iterable[int]) -> list[tuple[int, float, float]]:
    """``(n, rho, rho n^{-2N})`` for the bordered N-th derivative."""
    if N not in _DEFAULT_ROWS:
        raise ValueError("N must lie in 1..4")
    out = []
    for n in n_list:
        rho = spectral_radius(build_analysis_matrix("general", n, N=N))
        out.append((n, rho, rho / float(n) ** (2 * N)))
    return out


def conversion_inverse_norm(lam: int, n: int) -> float:
    """Infinity norm of the inverse of the ``n x n`` conversion ``S_lam``."""
    from .operators import conv_op

    S = conv_op(lam, n, rows=n).toarray()
    return float(np.abs(solve_triangular(S, np.eye(n))).sum(axis=1).max())


# ---------------------------------------------------------------------------
# empirical stability thresholds
# ---------------------------------------------------------------------------

def default_approach(scheme) -> int:
    # the stability analysis is of Approach 2; implicit schemes need Approach 1
    # because the square Approach 2 system is unstable for large h
    return 2 if scheme.explicit else 1


def grows(problem: ProblemSpec, scheme, n: int, h: float, steps: int, approach: int | None = None,
          growth: float = GROWTH_FLAG) -> bool:
    """Whether ``||u||`` exceeds ``growth ||u0||`` within ``steps`` steps."""
    approach = default_approach(scheme) if approach is None else approach
    st = Stepper(problem, scheme, h, approach, FactorCache())
    state = st.initial_state(n)
    norm0 = np.abs(state.u).max()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            u = st.step(state)
            m = np.abs(u).max()
            if not np.isfinite(m) or m > growth * norm0:
                return True
    return False


@dataclass
class ThresholdResult:
    h_stable: float | None
    h_unstable: float | None
    table: list = field(default_factory=list)   # (h, unstable)

    @property
    def critical(self) -> float | None:
        if self.h_stable is None or self.h_unstable is None:
            return self.h_unstable or None
        return 0.5 * (self.h_stable + self.h_unstable)


def stability_threshold_scan(problem: ProblemSpec, scheme, n: int, h_grid: Sequence[float],
                             steps: int = 5000, t_max: float | None = None,
                             approach: int | None = None,
                             bisect: int = 6) -> ThresholdResult:
    """Scan ``h_grid`` and bisect between the last stable and first unstable step.

    Each trial runs ``steps`` steps (or up to ``t_max`` when given).
    """
    def trial(h):
        k = steps if t_max is None else max(1, math.ceil(t_max / h))
        return grows(problem, scheme, n, h, k, approach)

    res = ThresholdResult(None, None)
    for h in sorted(h_grid):
        bad = trial(h)
        res.table.append((h, bad))
        if bad:
            res.h_unstable = h
            break
        res.h_stable = h
    if res.h_stable is not None and res.h_unstable is not None:
        lo, hi = res.h_stable, res.h_unstable
        for _ in range(bisect):
            mid = 0.5 * (lo + hi)
            bad = trial(mid)
            res.table.append((mid, bad))
            if bad:
                hi = mid
            else:
                lo = mid
        res.h_stable, res.h_unstable = lo, hi
    return res


# ---------------------------------------------------------------------------
# rounding-error growth
# ---------------------------------------------------------------------------

@dataclass
class RoundingResult:
    scheme: str
    steps: np.ndarray
    errors: np.ndarray      # max-norm coefficient errors
    slope: float
    intercept: float
    r2: float
    scale: float            # max |u(x)| over the run
    coeff_scale: float      # max |u_k| over the run

    @property
    def relative_max(self) -> float:
        """Largest error in units of ``eps * scale``."""
        if self.scale == 0:
            return 0.0
        return float(self.errors.max() / (np.finfo(float).eps * self.scale))


def rounding_growth_experiment(problem: ProblemSpec, scheme, n: int, h: float, K: int,
                               exact: Callable[[float], np.ndarray], approach: int = 2,
                               every: int = 1) -> RoundingResult:
    """Coefficient error against ``exact(t)`` over ``K`` steps with a linear fit.

    ``scale`` is the sup norm of the computed solution, sampled on the
    Chebyshev grid. Multistep schemes start from exact history so that only
    rounding remains when ``n`` and ``h`` resolve the solution.
    """
    ex = lambda t: fit_length(np.asarray(exact(t), dtype=float), n)
    st = Stepper(problem, scheme, h, approach, FactorCache(), startup=ex)
    state = StepState(0.0, ex(0.0), st.r)
    sup = lambda c: float(np.abs(coeffs_to_vals(chebyshev(c))).max())
    ks, errs = [], []
    scale, cscale = sup(state.u), float(np.abs(state.u).max())
    for k in range(1, K + 1):
        u = st.step(state)
        if k % every == 0:
            ks.append(k)
            errs.append(np.abs(u - ex(state.t)).max())
            cscale = max(cscale, float(np.abs(u).max()))
            if k % (64 * every) == 0 or k == K:
                scale = max(scale, sup(u))
    ks, errs = np.array(ks), np.array(errs)
    if np.all(errs == 0):
        return RoundingResult(scheme.name, ks, errs, 0.0, 0.0, 1.0, scale, cscale)
    fit = linregress(ks, errs)
    return RoundingResult(scheme.name, ks, errs, float(fit.slope), float(fit.intercept),
                          float(fit.rvalue ** 2), scale, cscale)


# ---------------------------------------------------------------------------
# collocation cross-check
# ---------------------------------------------------------------------------

def collocation_oracle(N: int, n: int) -> np.ndarray:
    """``N``-th power of the Chebyshev collocation matrix on ``cheb_points(n)``."""
    if N not in (1, 2):
        raise ValueError("collocation oracle supports N = 1, 2")
    x = cheb_points(n)
    c = np.ones(n)
    c[[0, -1]] = 2.0
    c *= (-1.0) ** np.arange(n)
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1 / c) / (X + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    return np.linalg.matrix_power(D, N)


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

def median_time(fn: Callable[[], object], reps: int = 20, inner: int = 1) -> float:
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def scaling_table(make: Callable[[int], Callable[[], object]], n_list: Sequence[int],
                  reps: int = 20, inner: int = 1) -> list[tuple[int, float, float]]:
    """``(n, seconds, ratio to previous n)``; ``make(n)`` returns the timed call."""
    rows = []
    prev = None
    for n in n_list:
        t = median_time(make(n), reps, inner)
        rows.append((n, t, float("nan") if prev is None else t / prev))
        prev = t
    return rows


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
