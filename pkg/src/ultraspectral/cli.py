"""Command-line front end.

``ultraspectral solve <config.json>`` runs one problem and writes a snapshot
CSV (``t,x,u`` on 257 equispaced points), the final coefficients (JSON) and
a manifest. ``ultraspectral analyze <spectrum|threshold|rounding|bench>``
drives the analysis harness and writes CSV reports with a manifest.

Exit codes: 0 success, 2 configuration or usage error, 3 solver failure.
Set ``ULTRASPECTRAL_THREADS`` to cap the number of compiled-kernel threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, UltraspectralError
from .series import chebyshev, evaluate, fourier

GRID_POINTS = 257
THREADS_ENV = "ULTRASPECTRAL_THREADS"
ETD_STEPPERS = ("krogstad", "etd-multistep")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """One solver run. ``problem`` is a preset name or an inline problem object."""

    problem: object
    stepper: Optional[str] = None
    order: Optional[int] = None
    approach: Optional[int] = None
    n: Optional[int] = None
    adaptive: Optional[bool] = None
    adapt_tol: float = 1e-14
    n_max: int = 2 ** 16
    h: Optional[float] = None
    t_final: Optional[float] = None
    poles: str = "cf"
    talbot_q: int = 32
    snapshots: int = 1
    output_dir: str = "."
    prefix: str = "run"
    seed: int = 0

    FIELDS = ("problem", "stepper", "order", "approach", "n", "adaptive", "adapt_tol", "n_max",
              "h", "t_final", "poles", "talbot_q", "snapshots", "output_dir", "prefix", "seed")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(cls.FIELDS)
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "problem" not in data:
            raise ConfigError("configuration needs 'problem'")
        return cls(**data)

    def echo(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass
class Resolved:
    """A configuration with preset defaults filled in and checked."""

    problem: object
    stepper: str
    order: Optional[int]
    approach: int
    n: Optional[int]
    adaptive: bool
    h: float
    t_final: float
    steps: int
    exact: object = None


def resolve_config(cfg: RunConfig) -> Resolved:
    from .presets import get_preset, parse_problem

    if isinstance(cfg.problem, str):
        pre = get_preset(cfg.problem)
        problem, exact = pre.problem(), pre.exact
        defaults = dict(stepper=pre.stepper, h=pre.h, t_final=pre.t_final, n=pre.n,
                        adaptive=pre.adaptive, approach=pre.approach)
    else:
        problem, exact = parse_problem(cfg.problem), None
        defaults = dict(stepper=None, h=None, t_final=None, n=None, adaptive=False, approach=1)
    if cfg.n is not None and cfg.adaptive:
        raise ConfigError("choose either a fixed n or adaptive mode, not both")
    if cfg.n is not None:
        n, adaptive = cfg.n, False
    elif cfg.adaptive is not None:
        n, adaptive = (None, True) if cfg.adaptive else (defaults["n"], False)
    else:
        n, adaptive = defaults["n"], defaults["adaptive"]
    if not adaptive and n is None:
        raise ConfigError("fixed-n mode needs 'n'")
    stepper = cfg.stepper or defaults["stepper"]
    h = cfg.h if cfg.h is not None else defaults["h"]
    t_final = cfg.t_final if cfg.t_final is not None else defaults["t_final"]
    approach = cfg.approach if cfg.approach is not None else defaults["approach"]
    if stepper is None:
        raise ConfigError("configuration needs 'stepper'")
    if h is None or not h > 0:
        raise ConfigError("h must be positive")
    if t_final is None or not t_final > 0:
        raise ConfigError("t_final must be positive")
    if approach not in (1, 2):
        raise ConfigError("approach is 1 or 2")
    if n is not None and (not isinstance(n, int) or n < 4):
        raise ConfigError("n must be an integer >= 4")
    if cfg.snapshots < 1:
        raise ConfigError("snapshots must be at least 1")
    stepper = stepper.lower()
    if stepper in ETD_STEPPERS:
        if adaptive:
            raise ConfigError("exponential steppers run at fixed n")
        if cfg.poles not in ("cf", "talbot"):
            raise ConfigError("poles is 'cf' or 'talbot'")
    else:
        _scheme(stepper, cfg.order)
    if problem.periodic and adaptive:
        raise ConfigError("periodic problems run at fixed n")
    steps = max(1, math.ceil(t_final / h - 1e-9))
    return Resolved(problem, stepper, cfg.order, approach, n, adaptive, float(h), float(t_final),
                    steps, exact)


def _scheme(name: str, order: Optional[int]):
    from .schemes import get_scheme

    key = name if order is None or name[-1].isdigit() else f"{name}{order}"
    try:
        return get_scheme(key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    times: list
    snapshots: list           # coefficient arrays
    periodic: bool
    steps: int
    factorizations: int
    wall_time: float
    n_final: int
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def _snapshot_steps(steps: int, count: int) -> set:
    return {round(k * steps / count) for k in range(count + 1)}


def solve(rc: Resolved, snapshots: int = 1, poles: str = "cf", talbot_q: int = 32,
          adapt_tol: float = 1e-14, n_max: int = 2 ** 16) -> RunResult:
    """Run a resolved configuration and collect snapshot coefficients."""
    from .adaptivity import AdaptConfig, AdaptLog, adapt_step
    from .banded import FactorCache
    from .stepping import Stepper

    marks = _snapshot_steps(rc.steps, snapshots)
    times, snaps = [], []
    t0 = time.perf_counter()
    extra = {}
    if rc.stepper in ETD_STEPPERS:
        from .expint import ExpMultistep, PhiOperator, cf_poles, etd_krogstad_step, talbot_poles

        ps = cf_poles() if poles == "cf" else talbot_poles(talbot_q)
        op = PhiOperator.for_problem(rc.problem, rc.n, rc.h, ps)
        u = np.asarray(rc.problem.initial_coeffs(rc.n), dtype=float if op.real else complex)
        ms = ExpMultistep(op, rc.order or 2) if rc.stepper == "etd-multistep" else None
        t = 0.0
        times.append(t)
        snaps.append(u.copy())
        for k in range(1, rc.steps + 1):
            u = etd_krogstad_step(op, u, t) if ms is None else ms.step(u, t)
            t = k * rc.h
            if k in marks:
                times.append(t)
                snaps.append(u.copy())
        nfac, n_final = op.factorizations, rc.n
    else:
        cache = FactorCache()
        st = Stepper(rc.problem, _scheme(rc.stepper, rc.order), rc.h, rc.approach, cache)
        state = st.initial_state(rc.n)
        times.append(state.t)
        snaps.append(state.u.copy())
        if rc.adaptive:
            acfg = AdaptConfig(tol=adapt_tol, n_max=n_max)
            log = AdaptLog()
        for k in range(1, rc.steps + 1):
            if rc.adaptive:
                adapt_step(st, state, acfg, log)
            else:
                st.step(state)
            if k in marks:
                times.append(state.t)
                snaps.append(state.u.copy())
        nfac, n_final = cache.factorizations, state.n
        if rc.adaptive:
            extra = {"lengths": [int(v) for v in log.lengths], "distinct_sizes": len(log.sizes),
                     "doublings": log.doublings}
    wall = time.perf_counter() - t0
    return RunResult(times, snaps, rc.problem.periodic, rc.steps, nfac, wall, n_final, extra)


def output_grid() -> np.ndarray:
    return np.linspace(-1.0, 1.0, GRID_POINTS)


def grid_values(u: np.ndarray, periodic: bool) -> np.ndarray:
    """Values on the output grid (real part for periodic series)."""
    s = fourier(u) if periodic else chebyshev(u)
    v = evaluate(s, output_grid())
    return np.real(v) if periodic else v


def _coeff_json(u: np.ndarray):
    if np.iscomplexobj(u):
        return [[float(c.real), float(c.imag)] for c in u]
    return [float(c) for c in u]


def write_outputs(cfg: RunConfig, rc: Resolved, res: RunResult) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: str(out / f"{cfg.prefix}{suffix}") for k, suffix in
             (("snapshots", "_snapshots.csv"), ("coefficients", "_coefficients.json"),
              ("manifest", "_manifest.json"))}
    x = output_grid()
    with open(paths["snapshots"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for t, u in zip(res.times, res.snapshots):
            for xi, vi in zip(x, grid_values(u, res.periodic)):
                w.writerow([repr(float(t)), repr(float(xi)), repr(float(vi))])
    with open(paths["coefficients"], "w") as fh:
        json.dump(_coeff_json(res.final), fh)
    manifest = {
        "config": cfg.echo(),
        "resolved": {"stepper": rc.stepper, "approach": rc.approach, "n": rc.n,
                     "adaptive": rc.adaptive, "h": rc.h, "t_final": rc.t_final},
        "steps": res.steps,
        "t_reached": res.times[-1],
        "n_final": res.n_final,
        "factorizations": res.factorizations,
        "wall_time": res.wall_time,
        "outputs": paths,
    }
    manifest.update(res.extra)
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def run(cfg: RunConfig) -> dict:
    """Resolve, solve and write the artifacts; returns the manifest."""
    rc = resolve_config(cfg)
    res = solve(rc, cfg.snapshots, cfg.poles, cfg.talbot_q, cfg.adapt_tol, cfg.n_max)
    return write_outputs(cfg, rc, res)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _write_report(args, name: str, header, rows, manifest: dict) -> dict:
    from .analysis import write_csv

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_csv(csv_path, header, rows)
    manifest = dict(manifest, csv=str(csv_path))
    with open(out / f"{name}_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def analyze_spectrum(args) -> dict:
    from .analysis import spectrum_row

    rows = [spectrum_row(args.kind, n) for n in _int_list(args.n)]
    return _write_report(args, "spectrum", ["kind", "n", "rho", "bound", "ratio"],
                         [(r.kind, r.n, r.rho, r.bound, r.ratio) for r in rows],
                         {"subcommand": "spectrum", "kind": args.kind})


def _analysis_problem(kind: str):
    from .presets import heat_problem, transport_problem

    if kind == "transport":
        return transport_problem()
    if kind == "heat":
        return heat_problem()
    raise ConfigError(f"unknown problem {kind!r}; choose transport or heat")


def analyze_threshold(args) -> dict:
    from .analysis import stability_threshold_scan

    problem = _analysis_problem(args.problem)
    n = args.n
    unit = 1.0 / (n - 1) ** 2 if args.problem == "transport" else 1.0 / n ** 4
    grid = [v * unit for v in _float_list(args.h_grid)]
    res = stability_threshold_scan(problem, _scheme(args.stepper, None), n, grid, steps=args.steps,
                                   t_max=args.t_max, approach=args.approach, bisect=args.bisect)
    rows = [(h, h / unit, int(bad)) for h, bad in res.table]
    crit = res.critical
    return _write_report(args, "threshold", ["h", "h_scaled", "unstable"], rows,
                         {"subcommand": "threshold", "problem": args.problem,
                          "stepper": args.stepper, "n": n, "unit": unit,
                          "h_stable": res.h_stable, "h_unstable": res.h_unstable,
                          "critical_scaled": None if crit is None else crit / unit})


def analyze_rounding(args) -> dict:
    from .analysis import rounding_growth_experiment
    from .presets import transport_problem
    from .series import cheb_points, vals_to_coeffs

    n = args.n
    x = cheb_points(n)
    exact = lambda t: vals_to_coeffs(np.exp(-200.0 * (x + t) ** 2)).coeffs
    res = rounding_growth_experiment(transport_problem(), _scheme(args.stepper, None), n, args.h,
                                     args.K, exact, approach=args.approach)
    rows = [(res.scheme, int(k), float(e)) for k, e in zip(res.steps, res.errors)]
    return _write_report(args, "rounding", ["stepper", "k", "error"], rows,
                         {"subcommand": "rounding", "stepper": res.scheme, "n": n, "h": args.h,
                          "K": args.K, "slope": res.slope, "intercept": res.intercept,
                          "r2": res.r2, "scale": res.scale, "max_error_eps": res.relative_max})


def bench_call(op: str, n: int):
    """Zero-argument callable timing one operation at size ``n``."""
    from .banded import FactorCache
    from .presets import heat_problem, transport_problem
    from .schemes import FORWARD_EULER, RK3
    from .stepping import Stepper

    if op in ("step1", "step2"):
        st = Stepper(transport_problem(), FORWARD_EULER, 0.1 / n ** 2, int(op[-1]), FactorCache())
        state = st.initial_state(n)
        return lambda: st.compute(state)
    if op == "rk3":
        st = Stepper(heat_problem(), RK3, 1.0 / n ** 4, 2, FactorCache())
        state = st.initial_state(n)
        return lambda: st.compute(state)
    if op == "phi":
        from .expint import PhiOperator, phi_apply

        phi = PhiOperator.for_problem(heat_problem(), n, 0.1)
        xi = heat_problem().initial_coeffs(n)
        phi_apply(phi, 1, xi)
        return lambda: phi_apply(phi, 1, xi)
    raise ConfigError(f"unknown bench op {op!r}; choose step1, step2, rk3 or phi")


def analyze_bench(args) -> dict:
    from .analysis import scaling_table

    rows = scaling_table(lambda n: bench_call(args.op, n), _int_list(args.n), args.reps, args.inner)
    return _write_report(args, "bench", ["op", "n", "seconds", "ratio"],
                         [(args.op, n, t, r) for n, t, r in rows],
                         {"subcommand": "bench", "op": args.op, "reps": args.reps})


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ultraspectral", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", help="run a JSON configuration")
    s.add_argument("config")
    s.add_argument("--output-dir", default=None)
    a = sub.add_parser("analyze", help="analysis reports")
    asub = a.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(q):
        q.add_argument("--out-dir", default=".")

    sp = asub.add_parser("spectrum")
    sp.add_argument("--kind", choices=["transport", "heat"], default="transport")
    sp.add_argument("--n", default="8,16,32,64")
    common(sp)
    th = asub.add_parser("threshold")
    th.add_argument("--problem", choices=["transport", "heat"], default="transport")
    th.add_argument("--stepper", default="euler")
    th.add_argument("--n", type=int, default=80)
    th.add_argument("--h-grid", default="3.3,3.4,3.5,3.6",
                    help="step sizes in units of 1/(n-1)^2 (transport) or 1/n^4 (heat)")
    th.add_argument("--steps", type=int, default=5000)
    th.add_argument("--t-max", type=float, default=None)
    th.add_argument("--approach", type=int, default=None)
    th.add_argument("--bisect", type=int, default=6)
    common(th)
    ro = asub.add_parser("rounding")
    ro.add_argument("--stepper", default="ab4")
    ro.add_argument("--n", type=int, default=600)
    ro.add_argument("--h", type=float, default=1.2e-6)
    ro.add_argument("--K", type=int, default=10000)
    ro.add_argument("--approach", type=int, default=2)
    common(ro)
    be = asub.add_parser("bench")
    be.add_argument("--op", default="step2")
    be.add_argument("--n", default="256,512,1024,2048")
    be.add_argument("--reps", type=int, default=20)
    be.add_argument("--inner", type=int, default=10)
    common(be)
    return p


def cap_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return
    try:
        k = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    import numba

    numba.set_num_threads(max(1, min(k, numba.config.NUMBA_NUM_THREADS)))


ANALYSES = {"spectrum": analyze_spectrum, "threshold": analyze_threshold,
            "rounding": analyze_rounding, "bench": analyze_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cap_threads()
        if args.command == "solve":
            cfg = load_config(args.config)
            if args.output_dir is not None:
                cfg.output_dir = args.output_dir
            manifest = run(cfg)
            print(f"{manifest['steps']} steps, n = {manifest['n_final']}, "
                  f"outputs in {cfg.output_dir}")
        else:
            manifest = ANALYSES[args.subcommand](args)
            print(f"wrote {manifest['csv']}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UltraspectralError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
