"""Command-line front end.

    parahost analyze    analytic summary for one parameter set
    parahost sweep      R and sigma_plus over a 1- or 2-parameter grid
    parahost simulate   event log (one replicate) or ensemble statistics
    parahost scaling    meeting-time scaling in 1, 2 or 3 dimensions
    parahost multistage lethality-ladder chain: k*, rho, absorption law

Values come from flags, then a ``--config`` file of ``key=value`` lines
(keys are flag names without dashes), then built-in defaults.  Exit codes:
0 success, 2 invalid flags or parameters, 3 numerical failure at run time.
"""

from __future__ import annotations

import argparse
import itertools
import math
import sys
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from parahost import io
from parahost.core import (
    REFERENCE_PARAMS,
    TwoTypeParams,
    build_generator,
    classify_sigma,
    mean_matrix,
    sensitivities,
    spectrum,
)
from parahost.errors import (
    AllExtinct,
    DegenerateMutation,
    MaxTimeExceeded,
    NeverSubcritical,
    ParahostError,
)
from parahost.multistage import (
    DEFAULT_LADDER,
    LadderParams,
    absorption_pgf_derivative,
    absorption_pmf,
    build_chain,
    expected_absorption,
    find_kstar,
    level_sigma,
    rho_sequence,
    simulate_chain,
    three_type_drift,
)
from parahost.scaling import ScalingConfig, run_scaling
from parahost.simulator import DEFAULT_CAP, ensemble, simulate

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

SWEEPABLE = {
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "beta1": "beta1",
    "beta2": "beta2",
    "mu1": "mu1",
    "mu2": "mu2",
    "lambda": "lam",
}


class UsageError(Exception):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# (flag, type, help); every flag is also a config-file key
FLAGS = [
    ("alpha1", float, "type-1 death rate (default 0.5)"),
    ("alpha2", float, "type-2 death rate (default 1.5)"),
    ("beta1", float, "type-1 transmission probability (default 0.3)"),
    ("beta2", float, "type-2 transmission probability (default 0.6)"),
    ("mu1", float, "type-1 mutation probability (default 0.2)"),
    ("mu2", float, "type-2 mutation probability (default 0.2)"),
    ("lambda", float, "encounter rate (default 2; multistage 6)"),
    ("alpha0", float, "multistage: base lethality (default 0.5)"),
    ("r", float, "multistage: lethality multiplier > 1 (default 2)"),
    ("beta", float, "multistage: common transmission probability (default 0.5)"),
    ("mu", float, "multistage: common mutation probability (default 0.2)"),
    ("sweep", str, "sweep axis name:min:max:steps or name=v1,v2,... (repeat for 2D)"),
    ("unrestricted", _bool, "sweep: report R in subcritical cells too (default false)"),
    ("replicates", int, "simulate: number of replicates (default 1000; 1 = event log)"),
    ("horizon", float, "simulate: final time (default 10); scaling: path time limit (default 1e4)"),
    ("seed", int, "base seed, 0 <= seed < 2^64 (default 0)"),
    ("out", str, "output file (default stdout)"),
    ("format", str, "csv or json (default csv)"),
    ("init", str, "simulate: initial state z1,z2 (default 1,0)"),
    ("grid", str, "simulate: time grid start:stop:num or t1,t2,... (default 0:horizon:11)"),
    ("cap", int, f"simulate: population cap (default {DEFAULT_CAP})"),
    ("workers", int, "threads for replicates/paths; output does not depend on it (default 1)"),
    ("dim", int, "scaling: dimension 1, 2 or 3 (default 1)"),
    ("eps", str, "scaling: comma-separated contraction factors (default 1,0.7,0.5,0.35,0.25)"),
    ("delta", float, "scaling: encounter radius, 2D/3D (default 0.05)"),
    ("dt", float, "scaling: time step; floor step in 3D (default 1e-4; 3D 1e-6)"),
    ("paths", int, "scaling: paths per eps (default 1000)"),
    ("x0", float, "scaling 1D: first host in [0,1] (default 0.2)"),
    ("y0", float, "scaling 1D: second host in [0,1] (default 0.8)"),
    ("z0", float, "scaling 2D: initial cosine of the separation (default 0)"),
    ("bridge", _bool, "scaling: Brownian-bridge crossing correction (default 1D off, 2D on)"),
    ("runs", int, "multistage: Monte Carlo runs of the chain (default 0 = none)"),
    ("n-max", int, "multistage: pmf terms (default: until tail mass < 1e-10)"),
    ("k-cap", int, "multistage: highest level searched for k* (default 1000)"),
    ("table", str, "multistage CSV table: levels, pmf or expected (default pmf)"),
]
_FLAG_TYPES = {name.replace("-", "_"): typ for name, typ, _ in FLAGS}
_CHOICES = {"format": ("csv", "json"), "table": ("levels", "pmf", "expected")}

SUBCOMMANDS = ("analyze", "sweep", "simulate", "scaling", "multistage")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    for name, typ, help_ in FLAGS:
        kw = dict(type=typ, default=None, help=help_)
        if name == "sweep":
            kw["action"] = "append"
        if name in _CHOICES:
            kw["choices"] = _CHOICES[name]
        if typ is _bool:
            kw["metavar"] = "{true,false}"
        common.add_argument(f"--{name}", dest=name.replace("-", "_"), **kw)
    common.add_argument("--config", default=None, help="flat key=value file; flags override it")
    parser = argparse.ArgumentParser(prog="parahost", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"{name} (see --help)")
    return parser


def read_config(path: str) -> dict:
    """Parse a flat key=value file ('#' starts a comment; sweep may repeat)."""
    out: dict = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FLAG_TYPES:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            v = _FLAG_TYPES[key](value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
        if key in _CHOICES and v not in _CHOICES[key]:
            raise UsageError(f"{path}:{n}: {key} must be one of {', '.join(_CHOICES[key])}")
        if key == "sweep":
            out.setdefault("sweep", []).append(v)
        else:
            out[key] = v
    return out


class Settings:
    """Resolved values: flag, else config file, else the given default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = args
        self._config = config

    def get(self, key: str, default=None):
        v = getattr(self._args, key, None)
        if v is None:
            v = self._config.get(key)
        return default if v is None else v


def two_type_params(s: Settings) -> TwoTypeParams:
    base = dict(REFERENCE_PARAMS, lam=2.0)
    d = {k: s.get(k, base[k]) for k in ("alpha1", "alpha2", "beta1", "beta2", "mu1", "mu2")}
    d["lam"] = s.get("lambda", base["lam"])
    return TwoTypeParams(**d)


def ladder_params(s: Settings) -> LadderParams:
    b = DEFAULT_LADDER
    return LadderParams(
        alpha0=s.get("alpha0", b.alpha0),
        r=s.get("r", b.r),
        beta=s.get("beta", b.beta),
        mu=s.get("mu", b.mu),
        lam=s.get("lambda", b.lam),
    )


def _seed(s: Settings) -> int:
    seed = s.get("seed", 0)
    if not 0 <= seed < 2**64:
        raise UsageError("seed must satisfy 0 <= seed < 2^64")
    return seed


def _positive(name: str, v, allow_zero=False):
    if v < 0 or (v == 0 and not allow_zero):
        raise UsageError(f"{name} must be {'>= 0' if allow_zero else '> 0'}")
    return v


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"malformed {what}: {text!r}") from None


def parse_axis(spec: str) -> tuple[str, np.ndarray]:
    """'name:min:max:steps' (linspace) or 'name=v1,v2,...'."""
    if "=" in spec:
        name, rest = spec.split("=", 1)
        values = np.array(_floats(rest, "sweep values"))
    else:
        parts = spec.split(":")
        if len(parts) != 4:
            raise UsageError(f"malformed sweep axis {spec!r}; use name:min:max:steps or name=v1,v2,...")
        name = parts[0]
        try:
            lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise UsageError(f"malformed sweep axis {spec!r}") from None
        if steps < 2:
            raise UsageError("sweep steps must be >= 2")
        if not hi > lo:
            raise UsageError("sweep max must exceed min")
        values = np.linspace(lo, hi, steps)
    name = name.strip()
    if name not in SWEEPABLE:
        raise UsageError(f"cannot sweep {name!r}; choose from {', '.join(SWEEPABLE)}")
    if values.size < 2:
        raise UsageError("a sweep axis needs at least 2 values")
    return name, values


@dataclass(frozen=True)
class SweepRow:
    values: tuple[float, ...]
    sigma_plus: float
    R: Optional[float]
    supercritical: bool


def run_sweep(base: TwoTypeParams, axes, restrict: bool = True) -> list[SweepRow]:
    """Evaluate sigma_plus and R on the product grid (first axis outermost).

    With ``restrict`` R is left undefined outside the supercritical region.
    R is always undefined where delta2 == 0.
    """
    names = [n for n, _ in axes]
    if len(set(names)) != len(names):
        raise UsageError("sweep axes must name different parameters")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for combo in itertools.product(*(v for _, v in axes)):
            p = base.replace(**{SWEEPABLE[n]: float(x) for n, x in zip(names, combo)})
            gen = build_generator(p)
            sp = spectrum(gen)
            sup = classify_sigma(sp.sigma_plus).value == "supercritical"
            R = None
            if sp.eigenvectors_available and (sup or not restrict):
                R = -sp.u_minus
            rows.append(SweepRow(tuple(float(x) for x in combo), sp.sigma_plus, R, sup))
    return rows


def analyze_report(p: TwoTypeParams) -> dict:
    gen = build_generator(p)
    sp = spectrum(gen)
    R = u_plus = u_minus = left = sens = None
    note = None
    if sp.eigenvectors_available:
        u_plus, u_minus = sp.u_plus, sp.u_minus
        R = -u_minus
        left = sp.left.tolist()
        try:
            s = sensitivities(p)
            sens = {"d_lambda": s.d_lambda, "d_alpha1": s.d_alpha1, "d_alpha2": s.d_alpha2}
        except ZeroDivisionError:
            note = "Delta == 0: sensitivities are singular"
    else:
        note = "degenerate mutation (delta2 == 0): R and eigenvectors undefined"
    return {
        "params": {**{k: v for k, v in p.as_dict().items() if k != "lam"}, "lambda": p.lam},
        "generator": {"gamma1": gen.gamma1, "gamma2": gen.gamma2, "delta1": gen.delta1, "delta2": gen.delta2},
        "sigma_plus": sp.sigma_plus,
        "sigma_minus": sp.sigma_minus,
        "Delta": sp.Delta,
        "criticality": classify_sigma(sp.sigma_plus).value,
        "R": R,
        "u_plus": u_plus,
        "u_minus": u_minus,
        "left_eigenvector": left,
        "sensitivities": sens,
        "degenerate_mutation": not sp.eigenvectors_available,
        "note": note,
    }


ANALYZE_COLUMNS = (
    "alpha1", "alpha2", "beta1", "beta2", "mu1", "mu2", "lambda",
    "gamma1", "gamma2", "delta1", "delta2", "sigma_plus", "sigma_minus", "Delta",
    "criticality", "R", "u_plus", "u_minus", "d_lambda", "d_alpha1", "d_alpha2",
    "degenerate_mutation",
)


def cmd_analyze(s: Settings) -> str:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = analyze_report(two_type_params(s))
    if s.get("format", "csv") == "json":
        return io.json_text(rep)
    flat = {**rep["params"], **rep["generator"], **{k: rep[k] for k in (
        "sigma_plus", "sigma_minus", "Delta", "criticality", "R", "u_plus", "u_minus",
        "degenerate_mutation")}}
    flat.update(rep["sensitivities"] or {"d_lambda": None, "d_alpha1": None, "d_alpha2": None})
    return io.csv_text(ANALYZE_COLUMNS, [[flat[c] for c in ANALYZE_COLUMNS]])


def cmd_sweep(s: Settings) -> str:
    specs = s.get("sweep") or []
    if not 1 <= len(specs) <= 2:
        raise UsageError("sweep needs one or two --sweep axes")
    axes = [parse_axis(x) for x in specs]
    restrict = not s.get("unrestricted", False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = two_type_params(s)
    rows = run_sweep(base, axes, restrict)
    names = [n for n, _ in axes]
    if s.get("format", "csv") == "json":
        return io.json_text({
            "params": analyze_report(base)["params"],
            "axes": [{"name": n, "values": v} for n, v in axes],
            "restricted": restrict,
            "rows": [
                {**dict(zip(names, r.values)), "sigma_plus": r.sigma_plus, "R": r.R,
                 "supercritical": r.supercritical}
                for r in rows
            ],
        })
    header = [*names, "sigma_plus", "R", "supercritical"]
    return io.csv_text(header, [[*r.values, r.sigma_plus, r.R, r.supercritical] for r in rows])


def _init(s: Settings) -> tuple[int, int]:
    text = s.get("init", "1,0")
    try:
        z = [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed --init {text!r}; use z1,z2") from None
    if len(z) != 2:
        raise UsageError("--init takes two counts z1,z2")
    return z[0], z[1]


def _grid(s: Settings, horizon: float) -> np.ndarray:
    text = s.get("grid")
    if text is None:
        return np.linspace(0.0, horizon, 11)
    if ":" in text:
        parts = text.split(":")
        try:
            lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise UsageError(f"malformed --grid {text!r}") from None
        if len(parts) != 3 or num < 1:
            raise UsageError(f"malformed --grid {text!r}")
        return np.linspace(lo, hi, num)
    return np.array(_floats(text, "--grid"))


TRAJECTORY_COLUMNS = ("time", "z1", "z2", "event")
ENSEMBLE_COLUMNS = (
    "time", "mean_z1", "mean_z2", "se_z1", "se_z2", "analytic_z1", "analytic_z2",
    "ratio", "n_ratio", "extinct_frac", "n",
)


def cmd_simulate(s: Settings) -> str:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = two_type_params(s)
    init = _init(s)
    seed = _seed(s)
    reps = _positive("replicates", s.get("replicates", 1000))
    horizon = _positive("horizon", s.get("horizon", 10.0))
    cap = s.get("cap", DEFAULT_CAP)
    fmt = s.get("format", "csv")
    head = {"params": analyze_report(p)["params"], "init": list(init), "seed": seed, "cap": cap}
    if reps == 1:
        tr = simulate(p, init, horizon, cap=cap, seed=seed)
        rows = [[0.0, init[0], init[1], "start"]]
        rows += [[t, z[0], z[1], k.label] for t, z, k in tr.events()]
        end = tr.final_state
        rows.append([tr.stop_time, end.z1, end.z2, tr.status])
        if fmt == "json":
            return io.json_text({**head, "horizon": horizon, "status": tr.status,
                                 "stop_time": tr.stop_time,
                                 "events": [dict(zip(TRAJECTORY_COLUMNS, r)) for r in rows]})
        return io.csv_text(TRAJECTORY_COLUMNS, rows)
    grid = _grid(s, horizon)
    st = ensemble(p, init, grid, reps, seed, cap=cap, workers=s.get("workers", 1))
    analytic = np.asarray(init, dtype=float) @ mean_matrix(p, grid)
    rows = [
        [t, m[0], m[1], e[0], e[1], a[0], a[1], q, nq, x, n]
        for t, m, e, a, q, nq, x, n in zip(st.time, st.mean, st.se, analytic, st.ratio,
                                           st.n_ratio, st.extinct_frac, st.n)
    ]
    if fmt == "json":
        return io.json_text({**head, "replicates": reps,
                             "rows": [dict(zip(ENSEMBLE_COLUMNS, r)) for r in rows]})
    return io.csv_text(ENSEMBLE_COLUMNS, rows)


SCALING_COLUMNS = ("eps", "mean_time", "se", "n_paths", "n_timeout", "analytic_time")


def scaling_config(s: Settings) -> ScalingConfig:
    eps = tuple(_floats(s.get("eps", "1,0.7,0.5,0.35,0.25"), "--eps"))
    return ScalingConfig(
        dimension=s.get("dim", 1),
        epsilons=eps,
        delta=s.get("delta", 0.05),
        x0=s.get("x0", 0.2),
        y0=s.get("y0", 0.8),
        z0=s.get("z0", 0.0),
        dt=s.get("dt"),
        paths=s.get("paths", 1000),
        seed=_seed(s),
        horizon=s.get("horizon", 1e4),
        bridge=s.get("bridge"),
        workers=s.get("workers", 1),
    )


def cmd_scaling(s: Settings) -> tuple[str, Optional[str]]:
    """Returns (file text, stdout summary or None)."""
    cfg = scaling_config(s)
    res = run_scaling(cfg)
    rows = [[r.eps, r.estimate.mean, r.estimate.se, r.estimate.n, r.estimate.n_timeout, r.analytic]
            for r in res.rows]
    fit = res.fit
    summary = {
        "dimension": cfg.dimension,
        "config": {"epsilons": list(cfg.epsilons), "delta": cfg.delta, "x0": cfg.x0, "y0": cfg.y0,
                   "z0": cfg.z0, "dt": cfg.dt, "paths": cfg.paths, "seed": cfg.seed,
                   "horizon": cfg.horizon, "bridge": cfg.bridge},
        "rows": [dict(zip(SCALING_COLUMNS, r)) for r in rows],
        "fit": None if fit is None else {
            "exponent": fit.slope, "se": fit.se, "ci_low": fit.ci_low, "ci_high": fit.ci_high,
            "level": fit.level},
        "reference_exponent": res.reference_exponent,
        "timeout_bias": any(r.estimate.biased for r in res.rows),
    }
    if s.get("format", "csv") == "json":
        return io.json_text(summary), None
    return io.csv_text(SCALING_COLUMNS, rows), io.json_text(summary)


def multistage_report(lp: LadderParams, k_cap: int, n_max: Optional[int], runs: int, seed: int) -> dict:
    kstar = find_kstar(lp, k_cap)
    params = {"alpha0": lp.alpha0, "r": lp.r, "beta": lp.beta, "mu": lp.mu, "lambda": lp.lam}
    coupled = lp.mu * lp.beta * lp.lam > 0
    rho = rho_sequence(lp, kstar) if coupled else [None] * (kstar + 1)
    drift = three_type_drift(lp, kstar) if coupled else [None] * (kstar + 1)
    levels = [{"k": k, "sigma_plus": level_sigma(lp, k), "rho": rho[k], "mean_step_3type": drift[k]}
              for k in range(kstar + 1)]
    rep = {"params": params, "kstar": kstar, "levels": levels, "expected_absorption": [],
           "mean_absorption": None, "pgf_derivative_at_1": None, "pmf": [], "simulation": None}
    if kstar == 0:
        return rep
    chain = build_chain(lp, k_cap)
    f = absorption_pmf(chain, n_max)
    e = expected_absorption(chain)
    sim = simulate_chain(chain, runs, seed) if runs > 0 else None
    emp = sim.pmf(len(f)) if sim else [None] * len(f)
    rep.update(
        expected_absorption=[{"start_level": j, "expected_steps": e[j]} for j in range(kstar)],
        mean_absorption=e[0],
        pgf_derivative_at_1=absorption_pgf_derivative(chain, 1.0),
        pmf=[{"n": n + 1, "f": f[n], "cdf": c, "empirical": emp[n]}
             for n, c in zip(range(len(f)), np.cumsum(f))],
        simulation=None if sim is None else {"runs": runs, "seed": seed, "mean": sim.mean, "se": sim.se},
    )
    return rep


MULTISTAGE_TABLES = {
    "levels": ("k", "sigma_plus", "rho", "mean_step_3type"),
    "pmf": ("n", "f", "cdf", "empirical"),
    "expected": ("start_level", "expected_steps"),
}


def cmd_multistage(s: Settings) -> tuple[str, Optional[str]]:
    lp = ladder_params(s)
    n_max = s.get("n_max")
    if n_max is not None:
        _positive("n-max", n_max)
    runs = _positive("runs", s.get("runs", 0), allow_zero=True)
    rep = multistage_report(lp, s.get("k_cap", 1000), n_max, runs, _seed(s))
    msg = "no epidemic (k*=0)\n" if rep["kstar"] == 0 else None
    if s.get("format", "csv") == "json":
        return io.json_text(rep), msg
    table = s.get("table", "pmf")
    key = {"levels": "levels", "pmf": "pmf", "expected": "expected_absorption"}[table]
    cols = MULTISTAGE_TABLES[table]
    return io.csv_text(cols, [[row[c] for c in cols] for row in rep[key]]), msg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        config = read_config(args.config) if args.config else {}
        s = Settings(args, config)
        stderr_msg = None
        if args.command == "analyze":
            text = cmd_analyze(s)
        elif args.command == "sweep":
            text = cmd_sweep(s)
        elif args.command == "simulate":
            text = cmd_simulate(s)
        elif args.command == "scaling":
            text, summary = cmd_scaling(s)
            if summary is not None and s.get("out") not in (None, "-"):
                sys.stdout.write(summary)
        else:
            text, stderr_msg = cmd_multistage(s)
        io.emit(text, s.get("out"))
        if stderr_msg:
            sys.stderr.write(stderr_msg)
        return EXIT_OK
    except (AllExtinct, MaxTimeExceeded, NeverSubcritical, np.linalg.LinAlgError,
            FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        print(f"parahost: numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ValueError, DegenerateMutation, ParahostError) as exc:
        print(f"parahost: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
