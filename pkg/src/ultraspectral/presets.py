"""Named problems covering the standard experiments, and JSON problem parsing.

A preset bundles a problem with default run settings. Inline problems are
described by plain JSON data: operator coefficients are numbers, ascending
monomial coefficient lists, ``{"chebyshev": [...]}`` or a named closed form;
initial conditions are named closed forms or Chebyshev coefficient lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .exceptions import ConfigError
from .operators import BoundaryCondition, BoundaryFunctional, OperatorSpec
from .series import chebyshev
from .stepping import ProblemSpec


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def variable_speed(x):
    """Propagation speed ``3/5 + 3 sin((x - 1)^2)^2``."""
    return 0.6 + 3.0 * np.sin((x - 1) ** 2) ** 2


def _gaussian(a=200.0, x0=0.0):
    return lambda x: np.exp(-a * (x - x0) ** 2)


def _sine(k=2.0, phase=0.0):
    return lambda x: np.sin(k * np.pi * x + phase)


def _front(width=40.0 / np.sqrt(6.0), low=0.0, high=0.5):
    # tanh front running from `high` at x = -1 to `low` at x = 1
    return lambda x: low + (high - low) * (1 - np.tanh(width * x)) / 2


def _exp_sin(k=1.0):
    return lambda x: np.exp(np.sin(k * np.pi * x))


CLOSED_FORMS: dict[str, Callable] = {
    "gaussian": _gaussian,
    "sine": _sine,
    "front": _front,
    "exp-sin": _exp_sin,
}

NAMED_COEFFICIENTS: dict[str, Callable] = {
    "variable-speed": variable_speed,
}


def _fisher(t, x, u):
    return u - u * u


# name -> (f, polynomial degree in u)
NONLINEARITIES: dict[str, tuple] = {
    "fisher": (_fisher, 2),
}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def parse_coefficient(a):
    """Operator coefficient from JSON data."""
    if a is None or isinstance(a, (int, float)) and not isinstance(a, bool):
        return a
    if isinstance(a, list):
        _require(all(isinstance(v, (int, float)) for v in a), "monomial coefficients must be numbers")
        return npcheb.poly2cheb(np.asarray(a, dtype=float)).tolist() if a else 0
    if isinstance(a, str):
        _require(a in NAMED_COEFFICIENTS, f"unknown coefficient {a!r}")
        return NAMED_COEFFICIENTS[a]
    if isinstance(a, dict) and "chebyshev" in a:
        return [float(v) for v in a["chebyshev"]]
    raise ConfigError(f"cannot read operator coefficient {a!r}")


def parse_initial(spec):
    """Initial condition from JSON data (closed form or Chebyshev list)."""
    if isinstance(spec, str):
        spec = {"name": spec}
    if isinstance(spec, list):
        return chebyshev(np.asarray(spec, dtype=float))
    _require(isinstance(spec, dict), f"cannot read initial condition {spec!r}")
    if "chebyshev" in spec:
        return chebyshev(np.asarray(spec["chebyshev"], dtype=float))
    name = spec.get("name")
    _require(name in CLOSED_FORMS, f"unknown closed form {name!r}")
    params = {k: v for k, v in spec.items() if k != "name"}
    try:
        return CLOSED_FORMS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from exc


def parse_boundary(items) -> BoundaryFunctional:
    conds = []
    for it in items or []:
        if isinstance(it, str):
            it = {"kind": it}
        _require(isinstance(it, dict) and "kind" in it, f"cannot read boundary row {it!r}")
        kw = dict(it)
        if "weights" in kw:
            kw["weights"] = tuple(kw["weights"])
        try:
            conds.append(BoundaryCondition(**kw))
        except TypeError as exc:
            raise ConfigError(f"bad boundary row {it!r}: {exc}") from exc
    return BoundaryFunctional(tuple(conds))


def parse_problem(spec: dict) -> ProblemSpec:
    """Inline problem: ``operator``, ``boundary``, ``initial``, ``nonlinear``, ``periodic``."""
    _require(isinstance(spec, dict), "inline problem must be an object")
    _require("operator" in spec, "inline problem needs 'operator'")
    coeffs = [parse_coefficient(a) for a in spec["operator"]]
    nl, deg = None, None
    if spec.get("nonlinear"):
        _require(spec["nonlinear"] in NONLINEARITIES, f"unknown nonlinearity {spec['nonlinear']!r}")
        nl, deg = NONLINEARITIES[spec["nonlinear"]]
    bc = parse_boundary(spec.get("boundary"))
    try:
        bc.matrix(8)
        return ProblemSpec(OperatorSpec.from_coefficients(coeffs), bc,
                           parse_initial(spec["initial"]) if "initial" in spec else None,
                           nonlinear=nl, periodic=bool(spec.get("periodic", False)),
                           name=spec.get("name", "inline"), nonlinear_degree=deg)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid problem: {exc}") from exc


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

@dataclass
class Preset:
    """A problem with default run settings (any of them can be overridden)."""

    problem: Callable[[], ProblemSpec]
    stepper: str
    h: float
    t_final: float
    n: Optional[int] = None
    adaptive: bool = False
    approach: int = 1
    exact: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    notes: str = ""
    extra: dict = field(default_factory=dict)


def transport_problem() -> ProblemSpec:
    return ProblemSpec(OperatorSpec.from_coefficients([0, 1]),
                       BoundaryFunctional.of("dirichlet_right"), _gaussian(200.0), name="transport")


def heat_problem() -> ProblemSpec:
    return ProblemSpec(OperatorSpec.from_coefficients([0, 0, 1]),
                       BoundaryFunctional.of("dirichlet_left", "dirichlet_right"), _sine(2.0),
                       name="heat")


def variable_transport_problem() -> ProblemSpec:
    return ProblemSpec(OperatorSpec.from_coefficients([0, variable_speed]),
                       BoundaryFunctional.of("dirichlet_right"), _gaussian(400.0, 0.75),
                       name="variable-transport")


def fisher_problem() -> ProblemSpec:
    return ProblemSpec(OperatorSpec.from_coefficients([0, 0, 0.001]),
                       BoundaryFunctional.of("dirichlet_left", "dirichlet_right"), _front(),
                       nonlinear=_fisher, name="fisher", nonlinear_degree=2)


def periodic_transport_problem() -> ProblemSpec:
    return ProblemSpec(OperatorSpec.from_coefficients([0, 1]), initial=_exp_sin(1.0),
                       periodic=True, name="periodic-transport")


PRESETS: dict[str, Preset] = {
    "transport": Preset(transport_problem, "rk4", 2e-5, 0.5, n=300, approach=2,
                        exact=lambda t, x: np.exp(-200.0 * (x + t) ** 2),
                        notes="u_t = u_x, u(1) = 0, pulse exp(-200 x^2) moving left"),
    "heat": Preset(heat_problem, "krogstad", 0.01, 0.1, n=32,
                   exact=lambda t, x: np.exp(-4 * np.pi ** 2 * t) * np.sin(2 * np.pi * x),
                   notes="u_t = u_xx, Dirichlet 0, sin(2 pi x)"),
    "variable-transport": Preset(variable_transport_problem, "bdf2", 1e-3, 1.0, adaptive=True,
                                 notes="u_t = c(x) u_x with adaptive resolution"),
    "fisher": Preset(fisher_problem, "krogstad", 1 / 128 ** 2, 10.0, n=128,
                     notes="u_t = 0.001 u_xx + u - u^2, Dirichlet 0"),
    "periodic-transport": Preset(periodic_transport_problem, "rk4", 1e-3, 2.0, n=65,
                                 exact=lambda t, x: np.exp(np.sin(np.pi * (x + t))),
                                 notes="u_t = u_x on the periodic interval, one full period"),
}


def get_preset(name: str) -> Preset:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]
