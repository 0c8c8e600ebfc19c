"""Coefficient tables of the time-stepping schemes."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as F

import numpy as np


@dataclass(frozen=True)
class LmmScheme:
    """Linear multistep method ``sum alpha_j v^{k+j} = h sum beta_j f^{k+j}``."""

    name: str
    alpha: tuple
    beta: tuple
    order: int

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.size != b.size or a.size < 2:
            raise ValueError("alpha and beta need r + 1 entries each")
        if a[-1] != 1:
            raise ValueError("alpha_r must be 1")
        if abs(a.sum()) > 1e-14:
            raise ValueError("alpha must sum to zero (consistency)")
        object.__setattr__(self, "alpha", tuple(float(v) for v in a))
        object.__setattr__(self, "beta", tuple(float(v) for v in b))

    @property
    def r(self) -> int:
        return len(self.alpha) - 1

    @property
    def explicit(self) -> bool:
        return self.beta[-1] == 0


@dataclass(frozen=True)
class RkScheme:
    """Explicit Runge-Kutta method in chained form.

    Stage ``j`` computes ``y_j = h f(t + theta_j h, u + mu_j y_{j-1})`` and
    the update is ``u + sum gamma_j y_j``.
    """

    name: str
    theta: tuple
    mu: tuple
    gamma: tuple
    order: int

    def __post_init__(self):
        if not (len(self.theta) == len(self.mu) == len(self.gamma) >= 1):
            raise ValueError("theta, mu and gamma need s entries each")
        if self.theta[0] != 0 or self.mu[0] != 0:
            raise ValueError("the first stage has theta = mu = 0")
        if abs(sum(self.gamma) - 1) > 1e-14:
            raise ValueError("gamma must sum to one")
        for name in ("theta", "mu", "gamma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def s(self) -> int:
        return len(self.gamma)

    @property
    def r(self) -> int:
        return 1

    explicit = True


def _f(*vals):
    return tuple(float(F(v)) for v in vals)


FORWARD_EULER = LmmScheme("euler", _f(-1, 1), _f(1, 0), 1)
BACKWARD_EULER = LmmScheme("backward-euler", _f(-1, 1), _f(0, 1), 1)
TRAPEZOID = LmmScheme("am2", _f(-1, 1), _f("1/2", "1/2"), 2)
AB2 = LmmScheme("ab2", _f(0, -1, 1), _f("-1/2", "3/2", 0), 2)
AB3 = LmmScheme("ab3", _f(0, 0, -1, 1), _f("5/12", "-16/12", "23/12", 0), 3)
AB4 = LmmScheme("ab4", _f(0, 0, 0, -1, 1), _f("-9/24", "37/24", "-59/24", "55/24", 0), 4)
BDF2 = LmmScheme("bdf2", _f("1/3", "-4/3", 1), _f(0, 0, "2/3"), 2)
BDF3 = LmmScheme("bdf3", _f("-2/11", "9/11", "-18/11", 1), _f(0, 0, 0, "6/11"), 3)
BDF4 = LmmScheme("bdf4", _f("3/25", "-16/25", "36/25", "-48/25", 1), _f(0, 0, 0, 0, "12/25"), 4)

RK1 = RkScheme("rk1", (0.0,), (0.0,), (1.0,), 1)
# Heun's third-order method: each stage only sees the previous one
RK3 = RkScheme("rk3", _f(0, "1/3", "2/3"), _f(0, "1/3", "2/3"), _f("1/4", 0, "3/4"), 3)
RK4 = RkScheme("rk4", _f(0, "1/2", "1/2", 1), _f(0, "1/2", "1/2", 1), _f("1/6", "1/3", "1/3", "1/6"), 4)

SCHEMES = {s.name: s for s in (FORWARD_EULER, BACKWARD_EULER, TRAPEZOID, AB2, AB3, AB4,
                               BDF2, BDF3, BDF4, RK1, RK3, RK4)}
SCHEMES["trapezoid"] = TRAPEZOID
SCHEMES["forward-euler"] = FORWARD_EULER


def get_scheme(name: str):
    try:
        return SCHEMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None
