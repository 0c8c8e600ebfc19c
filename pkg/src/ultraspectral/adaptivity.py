"""Adaptive spatial resolution: step, look for a plateau, double or chop."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ResolutionError
from .schemes import RkScheme
from .series import PLATEAU_MIN_LENGTH, fit_length, plateau
from .stepping import HistoryEntry, Stepper, StepState, spectral_radius_estimate


@dataclass(frozen=True)
class AdaptConfig:
    tol: float = 1e-14
    n_min: int = PLATEAU_MIN_LENGTH
    n_max: int = 2 ** 16
    keep_plateau: bool = True

    def __post_init__(self):
        if self.n_min < PLATEAU_MIN_LENGTH:
            raise ValueError("n_min must be at least 17")
        if self.n_max > 2 ** 16 or self.n_max < self.n_min:
            raise ValueError("n_max must lie in [n_min, 2**16]")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")


def history_align(history, n_target: int):
    """Zero-pad every vector of ``history`` (arrays or entries) to ``n_target``."""
    out = []
    for e in history:
        if isinstance(e, HistoryEntry):
            if e.u.size > n_target:
                raise ValueError("history_align never truncates")
            out.append(HistoryEntry(e.t, fit_length(e.u, n_target)) if e.u.size < n_target else e)
        else:
            a = np.asarray(e)
            if a.size > n_target:
                raise ValueError("history_align never truncates")
            out.append(fit_length(a, n_target))
    return out


@dataclass
class AdaptLog:
    lengths: list = field(default_factory=list)      # kept length after each step
    storage: list = field(default_factory=list)      # length without the plateau
    doublings: int = 0
    sizes: set = field(default_factory=set)          # sizes at which systems were solved


def adapt_step(stepper: Stepper, state: StepState, cfg: AdaptConfig = AdaptConfig(),
               log: AdaptLog | None = None):
    """One adaptive step; returns ``(u, n)`` with ``u`` already pushed to ``state``."""
    log = AdaptLog() if log is None else log
    if not isinstance(stepper.scheme, RkScheme) and len(state.history) < stepper.r:
        stepper.startup_step(state)
        return state.u, state.n
    # stored vectors keep their chopped lengths; the step works on padded copies
    n = max(e.u.size for e in state.history)
    work = StepState(state.t, state.u, len(state.history))
    work.history.clear()
    while True:
        work.history.extend(history_align(state.history, n))
        log.sizes.add(n)
        u = stepper.compute(work)
        p = plateau(u, cfg.tol, clamp=False)
        if p.found:
            break
        if 2 * n > cfg.n_max:
            raise ResolutionError(f"no plateau up to n_max = {cfg.n_max}")
        n = 2 * n
        log.doublings += 1
        work.history.clear()
        _check_stability(stepper, n)
    keep = p.j2 if cfg.keep_plateau else p.j
    keep = max(keep, cfg.n_min, stepper.problem.order + 2)
    u = fit_length(u, keep)
    state.push(state.t + stepper.h, u)
    log.lengths.append(u.size)
    log.storage.append(max(p.j, 1))
    return u, u.size


def _check_stability(stepper: Stepper, n: int):
    if not stepper.scheme.explicit:
        return
    rho = spectral_radius_estimate(stepper.disc(n))
    # explicit schemes considered here are stable for h * rho below about 1
    if stepper.h * rho > 2.0:
        warnings.warn(f"step {stepper.h:.3g} is likely unstable at n = {n} "
                      f"(spectral radius about {rho:.3g})", RuntimeWarning, stacklevel=3)


def adaptive_run(stepper: Stepper, state: StepState, steps: int,
                 cfg: AdaptConfig = AdaptConfig()) -> AdaptLog:
    log = AdaptLog()
    for _ in range(steps):
        adapt_step(stepper, state, cfg, log)
    return log
