"""Command-line entry point.

Each subcommand runs one pipeline on a gallery system and writes a JSON
report (and optional CSV data).  Settings come from defaults, then an
optional TOML config file, then command-line flags.

Exit status: 0 pass, 1 malformed configuration, 2 a hypothesis or check
failed, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from . import reports
from .bridge import (
    DiscretizationSpec,
    discretize,
    growth_constant,
    reconstruct_dichotomy,
    robust_continuous,
    vcf_process,
)
from .dichotomy import (
    DichotomyCertificate,
    dichotomy_tables,
    fit_certificate,
    verify_dichotomy,
)
from .discrete import estimate_projections, perturbed_constants
from .errors import (
    ArgumentError,
    DegeneracyError,
    DichotomyLabError,
    HypothesisError,
    NoDichotomyError,
    NumericError,
    WindowError,
)
from .gallery import (
    PRESETS,
    GalleryParams,
    analytic_certificate,
    analytic_projections,
    gallery_bound_rhs,
    make_gallery_process,
    make_perturbation,
)
from .parallel import thread_cap
from .persistence import GlobalTrajectory, SemilinearSystem, persist_solution, prepare_persistence
from .process import DEFAULT_STEP, TimeGrid, operator_norm

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

COMMANDS = ("verify", "fit", "discretize", "robustness", "persist", "gallery", "constants")
KNOWN_TOLERANCES = {"picard": 1e-8}
DEFAULT_GRID = "-10:10:0.25"

PARAM_DEFAULTS = {
    "verify": {"alpha": None, "nu": None, "D": None},
    "fit": {},
    "discretize": {"base_time": 0.0, "step": 1.0, "window": 30, "horizon": 20},
    "robustness": {"eps": 1e-3, "shape": [[0.6, -0.8], [0.8, 0.6]], "horizon": 30},
    "persist": {"eta": 1e-3, "eps": 0.05, "delta": 0.01, "nonlinearity": "tanh",
                "window": 20.0, "step": 0.1, "horizon": 12, "check_window": 8.0,
                "samples": 200, "residual_csv": None},
    "gallery": {"bound_points": 50, "bound_span": 10.0},
    "constants": {"alpha": None, "delta": None, "D": 1.0},
}


class ConfigError(ArgumentError):
    """Malformed configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    command: str
    system_name: str
    system: GalleryParams
    grid: TimeGrid
    tolerances: dict = field(default_factory=dict)
    output_path: str | None = None
    csv_path: str | None = None
    seed: int = 42
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "command": self.command,
            "system": self.system_name,
            "system_params": self.system.to_dict(),
            "grid": self.grid.to_dict(),
            "tolerances": dict(sorted(self.tolerances.items())),
            "seed": self.seed,
            "params": dict(sorted(self.params.items())),
        }


def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path!r}: {exc}") from None


def _parse_grid(value, where):
    if isinstance(value, str):
        try:
            return TimeGrid.parse(value)
        except ArgumentError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if isinstance(value, dict):
        try:
            return TimeGrid(float(value["t_min"]), float(value["t_max"]), float(value["step"]))
        except KeyError as exc:
            raise ConfigError(f"{where}: missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError, ArgumentError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: expected 'a:b:h' or a table with t_min, t_max, step")


def _parse_system(value, where="system"):
    if value is None:
        value = "paper-default"
    if isinstance(value, str):
        if value not in PRESETS:
            raise ConfigError(f"{where}: unknown preset {value!r} (known: {sorted(PRESETS)})")
        return value, GalleryParams(**PRESETS[value])
    if isinstance(value, dict):
        value = dict(value)
        name = value.pop("preset", None)
        base = dict(PRESETS[name]) if name in PRESETS else {}
        if name is not None and name not in PRESETS:
            raise ConfigError(f"{where}.preset: unknown preset {name!r}")
        allowed = {"omega", "a", "M", "dim_x", "dim_y", "A_block", "B_block"}
        for key in value:
            if key not in allowed:
                raise ConfigError(f"{where}.{key}: unknown field")
        base.update(value)
        try:
            return name or "inline", GalleryParams(**base)
        except (ArgumentError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: expected a preset name or a table")


def _check_params(command, params):
    defaults = PARAM_DEFAULTS[command]
    out = dict(defaults)
    for key, val in params.items():
        if key not in defaults:
            raise ConfigError(f"params.{key}: not a parameter of '{command}'")
        out[key] = val
    for key, val in out.items():
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            if not np.isfinite(val):
                raise ConfigError(f"params.{key}: must be finite")
    return out


def build_config(args):
    """Merge defaults, the optional config file and command-line flags."""
    data = _load_toml(args.config) if getattr(args, "config", None) else {}
    command = args.command if args.command != "run" else data.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command: expected one of {COMMANDS}, got {command!r}")
    if args.command != "run" and "command" in data and data["command"] != command:
        raise ConfigError(f"command: config says {data['command']!r}, flag says {command!r}")
    for key in data:
        if key not in {"command", "system", "grid", "tolerances", "output", "csv", "seed",
                       "params"}:
            raise ConfigError(f"{key}: unknown top-level field")
    system = getattr(args, "preset", None) or data.get("system")
    system_name, params_obj = _parse_system(system)
    grid_val = getattr(args, "grid", None) or data.get("grid", DEFAULT_GRID)
    grid = _parse_grid(grid_val, "grid")
    tolerances = dict(KNOWN_TOLERANCES)
    for key, val in (data.get("tolerances") or {}).items():
        if key not in KNOWN_TOLERANCES:
            raise ConfigError(f"tolerances.{key}: unknown tolerance")
        if not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"tolerances.{key}: must be a positive number")
        tolerances[key] = float(val)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = data.get("seed", 42)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")
    params = dict(data.get("params") or {})
    for key in PARAM_DEFAULTS[command]:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    params = _check_params(command, params)
    return ExperimentConfig(
        command=command,
        system_name=system_name,
        system=params_obj,
        grid=grid,
        tolerances=tolerances,
        output_path=getattr(args, "output", None) or data.get("output"),
        csv_path=getattr(args, "csv", None) or data.get("csv"),
        seed=seed,
        params=params,
    )


def _provenance(cfg, **extra):
    prov = {"config": cfg.to_dict(), "grid": cfg.grid.to_dict(), "seed": cfg.seed,
            "integrator_step": DEFAULT_STEP}
    prov.update(extra)
    return prov


def _decay_rows(P, Q, grid):
    times = grid.times
    F, Qs, _ = dichotomy_tables(P, Q, times)
    eye = np.eye(Q.dimension)
    rows = []
    for j, s in enumerate(times):
        norms = operator_norm(F[j:, j] @ (eye - Qs[j]))
        for i, nrm in zip(range(j, len(times)), norms):
            rows.append([float(s), float(times[i] - s), float(np.log(max(nrm, 1e-300)))])
    return rows


def cmd_verify(cfg):
    p = cfg.system
    P, Q = make_gallery_process(p), analytic_projections(p)
    C = analytic_certificate(p, cfg.grid)
    over = {k: cfg.params[k] for k in ("D", "nu", "alpha") if cfg.params[k] is not None}
    if over:
        C = DichotomyCertificate(**{"D": C.D, "nu": C.nu, "alpha": C.alpha, **over},
                                 grid=cfg.grid)
    rep = verify_dichotomy(P, Q, C, cfg.grid)
    if cfg.csv_path:
        reports.write_csv(cfg.csv_path, ["s", "gap", "log_norm"], _decay_rows(P, Q, cfg.grid))
    return rep.passed, {"verification": rep.to_dict(), "certificate": C.to_dict()}, {}


def cmd_fit(cfg):
    p = cfg.system
    P, Q = make_gallery_process(p), analytic_projections(p)
    C = fit_certificate(P, Q, cfg.grid)
    rep = verify_dichotomy(P, Q, C, cfg.grid)
    if cfg.csv_path:
        reports.write_csv(cfg.csv_path, ["s", "gap", "log_norm"], _decay_rows(P, Q, cfg.grid))
    result = {"certificate": C.to_dict(), "verification": rep.to_dict(),
              "reference": analytic_certificate(p).to_dict()}
    return rep.passed, result, {"fit": "worst-case envelope, gaps up to half the grid span"}


def cmd_discretize(cfg):
    p, par = cfg.system, cfg.params
    P, Q, C = make_gallery_process(p), analytic_projections(p), analytic_certificate(p)
    N = int(par["window"])
    spec = DiscretizationSpec(float(par["base_time"]), float(par["step"]), (-N, N))
    disc = discretize(P, spec, C, Q)
    rep = verify_dichotomy(disc.process, disc.projections, disc.certificate)
    H = int(par["horizon"])
    est = estimate_projections(disc.process, H)
    idx = est.sample_times
    trace = [[int(n), float(operator_norm(est(n))), float(operator_norm(est(n) - disc.projections(n)))]
             for n in idx]
    if cfg.csv_path:
        reports.write_csv(cfg.csv_path, ["n", "projection_norm", "estimate_error"], trace)
    err = max(row[2] for row in trace)
    result = {"discrete_certificate": disc.certificate.to_dict(), "verification": rep.to_dict(),
              "max_projection_error": err, "base_time": spec.base_time, "step": spec.step,
              "window": list(spec.window)}
    return rep.passed and err <= 1e-6, result, {"estimate_horizon": H}


def cmd_robustness(cfg):
    p, par = cfg.system, cfg.params
    P, Q, C = make_gallery_process(p), analytic_projections(p), analytic_certificate(p)
    shape = np.asarray(par["shape"], dtype=float)
    if shape.shape != (p.dimension, p.dimension):
        raise ConfigError(f"params.shape: expected a {p.dimension}x{p.dimension} matrix")
    B = make_perturbation(float(par["eps"]), p.a, shape)
    T = vcf_process(P, B)
    QT, cert, rep = robust_continuous(P, C, Q, T, cfg.grid, horizon=int(par["horizon"]))
    if cfg.csv_path:
        rows = [[float(t), float(operator_norm(QT(t))), float(operator_norm(QT(t) - Q(t)))]
                for t in cfg.grid.times]
        reports.write_csv(cfg.csv_path, ["t", "projection_norm", "shift_from_unperturbed"], rows)
    result = {"robustness": rep.to_dict(), "certificate": cert.to_dict()}
    return rep.passed, result, {"strip_resolution": rep.strip_resolution,
                                "estimate_horizon": rep.horizon}


def _persist_systems(p, par):
    P = make_gallery_process(p)
    d = p.dimension
    a, eta = p.a, float(par["eta"])
    c = np.zeros(d)
    c[0] = 1.0

    def env(t):
        return eta * np.exp(-6 * a * np.abs(t))[..., None]

    def zero_f(t, x):
        return np.zeros_like(x)

    def zero_df(t, x):
        return np.zeros(x.shape + (d,))

    kind = par["nonlinearity"]
    if kind == "tanh":
        def g(t, x):
            return env(t) * (c + np.tanh(x))

        def dg(t, x):
            return (env(t) * (1 - np.tanh(x) ** 2))[..., None] * np.eye(d)
    elif kind == "linear":
        def g(t, x):
            return env(t) * c + np.zeros_like(x)

        dg = zero_df
    else:
        raise ConfigError("params.nonlinearity: expected 'tanh' or 'linear'")
    return (SemilinearSystem(P, zero_f, zero_df, vectorized=True),
            SemilinearSystem(P, g, dg, vectorized=True))


def cmd_persist(cfg):
    p, par = cfg.system, cfg.params
    S_f, S_g = _persist_systems(p, par)
    window, horizon = float(par["window"]), int(par["horizon"])
    eps = float(par["eps"])
    span = window + horizon
    xi = GlobalTrajectory.zeros(TimeGrid(-span, span, float(par["step"])), p.dimension, bound=eps)
    setup = prepare_persistence(S_f, xi, analytic_certificate(p), analytic_projections(p),
                                window=window, step=float(par["step"]), horizon=horizon)
    psi, rep, cert = persist_solution(
        S_f, xi, S_g, eps, float(par["delta"]), setup=setup, tol=cfg.tolerances["picard"],
        horizon=horizon, check_window=float(par["check_window"]),
        sample_count=int(par["samples"]), seed=cfg.seed,
    )
    if cfg.csv_path:
        header = ["t"] + [f"psi_{k}" for k in range(p.dimension)]
        reports.write_csv(cfg.csv_path, header, psi.to_rows())
    if par["residual_csv"]:
        reports.write_csv(par["residual_csv"], ["iteration", "residual"],
                          list(enumerate(rep.residual_history)))
    late = rep.contraction_ratios[2:]
    ok = rep.converged and rep.sup_distance < eps and all(r <= 0.6 for r in late)
    result = {"fixed_point": rep.to_dict(), "certificate_L_g": cert.to_dict(),
              "sup_psi_minus_xi": rep.sup_distance, "eps": eps}
    prov = {"working_window": [-window, window], "quadrature_step": setup.grid.step,
            "truncation": {"bound": rep.truncation_bound, "window": window},
            "rho_samples": int(par["samples"])}
    return ok, result, prov


def cmd_gallery(cfg):
    p, par = cfg.system, cfg.params
    P = make_gallery_process(p)
    n, span = int(par["bound_points"]), float(par["bound_span"])
    pts = np.linspace(-span, span, n)
    nx = p.dim_x
    worst_f = worst_b = 0.0
    for t in pts:
        for s in pts:
            if t >= s:
                U = P(t, s)[:nx, :nx]
                if nx:
                    worst_f = max(worst_f, operator_norm(U) / gallery_bound_rhs(p, t, s, "forward"))
            else:
                V = P(s, t)[nx:, nx:]
                if p.dim_y:
                    Vinv = np.linalg.inv(V)
                    worst_b = max(worst_b, operator_norm(Vinv) / gallery_bound_rhs(p, t, s, "backward"))
    L = growth_constant(P, 2 * p.a, 1.0, cfg.grid)
    C = analytic_certificate(p, cfg.grid)
    rep = verify_dichotomy(P, analytic_projections(p), C, cfg.grid)
    result = {"params": p.to_dict(), "certificate": C.to_dict(),
              "bound_dominance": {"forward_worst_ratio": worst_f, "backward_worst_ratio": worst_b,
                                  "points": n, "span": span},
              "growth_constant": L.to_dict(), "verification": rep.to_dict()}
    ok = worst_f <= 1 and worst_b <= 1 and rep.passed
    return ok, result, {"strip_resolution": L.resolution}


def cmd_constants(cfg):
    par = cfg.params
    if par["alpha"] is None or par["delta"] is None:
        raise ConfigError("params: 'constants' needs --alpha and --delta")
    const = perturbed_constants(float(par["alpha"]), float(par["delta"]), float(par["D"]))
    return True, {"constants": const.to_dict()}, {}


HANDLERS = {
    "verify": cmd_verify,
    "fit": cmd_fit,
    "discretize": cmd_discretize,
    "robustness": cmd_robustness,
    "persist": cmd_persist,
    "gallery": cmd_gallery,
    "constants": cmd_constants,
}


def run(cfg):
    """Execute a validated config; returns ``(exit_status, report)``."""
    try:
        passed, result, extra = HANDLERS[cfg.command](cfg)
    except (ArgumentError, WindowError):
        raise
    except (HypothesisError, NoDichotomyError, DegeneracyError) as exc:
        detail = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, HypothesisError):
            detail.update({"item": exc.item, "report": exc.report})
        report = reports.build_report(cfg.command, False, detail, _provenance(cfg))
        return 2, report
    except NumericError as exc:
        detail = {"error": type(exc).__name__, "message": str(exc)}
        report = reports.build_report(cfg.command, False, detail, _provenance(cfg))
        return 3, report
    report = reports.build_report(cfg.command, passed, result, _provenance(cfg, **extra))
    return (0 if passed else 2), report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(sp):
    sp.add_argument("--config", help="TOML config file")
    sp.add_argument("--preset", help="gallery preset name (default paper-default)")
    sp.add_argument("--grid", help="time grid as t_min:t_max:step")
    sp.add_argument("--output", help="JSON report path (default stdout)")
    sp.add_argument("--csv", help="CSV plot-data path")
    sp.add_argument("--seed", type=int, help="random seed (default 42)")


def make_parser():
    parser = _Parser(prog="dichotomy-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sp = sub.add_parser("run", help="run the command named in a config file")
    _common(sp)
    sp = sub.add_parser("verify", help="check the example's certificate on a grid")
    _common(sp)
    for k in ("alpha", "nu", "D"):
        sp.add_argument(f"--{k}", type=float, help=f"override certificate {k}")
    sp = sub.add_parser("fit", help="fit certificate constants on a grid")
    _common(sp)
    sp = sub.add_parser("discretize", help="sample at a fixed step and re-estimate projections")
    _common(sp)
    sp.add_argument("--base-time", dest="base_time", type=float)
    sp.add_argument("--step", type=float)
    sp.add_argument("--window", type=int)
    sp.add_argument("--horizon", type=int)
    sp = sub.add_parser("robustness", help="certify a decaying perturbation of the example")
    _common(sp)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--horizon", type=int)
    sp = sub.add_parser("persist", help="persist the zero solution under a small forcing")
    _common(sp)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--nonlinearity", choices=("tanh", "linear"))
    sp.add_argument("--residual-csv", dest="residual_csv", help="Picard residual history CSV")
    sp.add_argument("--window", type=float)
    sp.add_argument("--step", type=float)
    sp = sub.add_parser("gallery", help="describe the example and check its block bounds")
    _common(sp)
    sp = sub.add_parser("constants", help="constants of a perturbed discrete dichotomy")
    _common(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--D", type=float)
    return parser


def _join_grid_values(argv):
    """Let ``--grid -10:10:0.25`` through; argparse would read the value as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--grid":
            val = next(it, None)
            out.append(tok if val is None else f"--grid={val}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = make_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_grid_values(argv))
    try:
        thread_cap()
        cfg = build_config(args)
        status, report = run(cfg)
    except (ArgumentError, WindowError) as exc:
        sys.stderr.write(f"dichotomy-lab: configuration error: {exc}\n")
        return 1
    except DichotomyLabError as exc:
        sys.stderr.write(f"dichotomy-lab: {type(exc).__name__}: {exc}\n")
        return 3
    reports.write_report(report, cfg.output_path)
    return status


if __name__ == "__main__":
    sys.exit(main())
