"""Command-line entry point.

    latticecss stationary --h 30 --p 1
    latticecss roots --lambda 1 --p 1 --omega 1 --h-min 0.5 --h-max 50 --h-steps 100
    latticecss continue --h 10 --direction -1 --seed-kind single_site,double_site
    latticecss evolve --h 1 --t-end 10 --init random --seed 3
    latticecss verify

Options may also come from a flat ``key = value`` file given with ``--config``;
a flag always wins over the file.  Output goes to ``--output-dir``, or
``$LATTICECSS_OUTPUT_DIR``, or ``./latticecss-out``.

Exit status: 0 success, 1 invalid configuration, 2 convergence failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .continuation import (
    StepControl,
    arclength_continue,
    connection_mismatch,
    natural_continue,
)
from .dynamics import EvolutionConfig, IntegrationError, integrate
from .lattice import LatticeWindow, ModelParams
from .stationary import (
    SEED_KINDS,
    SeedSpec,
    continuum_soliton,
    newton_solve,
    scalar_root_double,
    scalar_root_single,
)
from .verify import SUITES, run_suites

log = logging.getLogger("latticecss")

ENV_OUTPUT_DIR = "LATTICECSS_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "latticecss-out"

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_VERIFY = 0, 1, 2, 3

SUBCOMMANDS = ("evolve", "stationary", "roots", "continue", "verify")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (type, default, help).  Keys double as flag names and config-file keys.
OPTIONS = {
    "lambda": (float, 1.0, "coupling constant"),
    "p": (float, 1.0, "nonlinearity power"),
    "omega": (float, 1.0, "frequency"),
    "h": (float, None, "lattice spacing (start value for continue)"),
    "gamma": (float, 0.0, "limit of the potential G at +infinity"),
    "n-min": (int, None, "first site of the window"),
    "n-max": (int, None, "last site of the window"),
    "seed-kind": (str, "single_site", "single_site, double_site or external_field "
                                      "(comma list allowed for continue)"),
    "center": (int, 0, "seed centre site"),
    "seed-file": (str, None, "field file for an external_field seed or evolve initial data"),
    "tol": (float, 1e-12, "Newton tolerance on the residual sup norm"),
    "max-iter": (int, 50, "Newton iteration cap"),
    "t-end": (float, None, "final time for evolve"),
    "dt-initial": (float, 1e-3, "first trial time step"),
    "abs-tol": (float, 1e-12, "absolute error tolerance of the integrator"),
    "rel-tol": (float, 1e-10, "relative error tolerance of the integrator"),
    "record-every": (float, 0.1, "diagnostic sampling interval"),
    "init": (str, "random", "evolve initial data: random, stationary, soliton or file"),
    "sites": (int, 101, "window length for random or soliton initial data"),
    "snapshots": (bool, False, "write every recorded snapshot, not only the last"),
    "h-min": (float, None, "smallest h of a sweep, or lower h bound for continue"),
    "h-max": (float, None, "largest h of a sweep, or upper h bound for continue"),
    "h-steps": (int, None, "number of h values in a roots sweep"),
    "h-target": (float, None, "target h for natural continuation"),
    "mode": (str, "arclength", "continuation driver: natural or arclength"),
    "direction": (int, -1, "initial sense of travel in h for arclength (+1 or -1)"),
    "max-points": (int, 2000, "point cap per branch"),
    "max-folds": (int, None, "stop one point after this many folds"),
    "point-fields": (bool, False, "write the profile of every branch point"),
    "suites": (str, ",".join(SUITES), "comma-separated verification suites"),
    "tolerance": (float, None, "override every verification tolerance"),
    "trials": (int, 100, "randomized trials per verification suite"),
    "seed": (int, 0, "seed of the random generator"),
    "output-dir": (str, None, "output directory"),
}

REQUIRED = {
    "evolve": ("h", "t-end"),
    "stationary": ("h",),
    "roots": ("h-min", "h-max", "h-steps"),
    "continue": ("h",),
    "verify": (),
}

POSITIVE = ("lambda", "p", "omega", "h", "tol", "t-end", "dt-initial", "abs-tol", "rel-tol",
            "record-every", "h-min", "h-max", "h-target", "tolerance")


@dataclass
class RunConfig:
    subcommand: str
    params: ModelParams
    window: LatticeWindow | None
    seed: SeedSpec
    evolution: EvolutionConfig | None
    continuation: StepControl | None
    output_dir: Path
    options: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.options[key]


def _convert(key, raw):
    kind = OPTIONS[key][0]
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, ``_`` and ``-`` are equivalent."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in OPTIONS:
            raise ConfigError(key, f"unknown key in {path}:{lineno}")
        out[key] = _convert(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticecss",
        description="Lattice Chern-Simons-Schrodinger solver: evolution, stationary "
                    "states, scalar roots, branch continuation and self-checks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value configuration file")
        for key, (kind, default, text) in OPTIONS.items():
            dest = key.replace("-", "_")
            shown = f" (default {default})" if default is not None else ""
            if kind is bool:
                sp.add_argument(f"--{key}", dest=dest, action="store_const", const=True,
                                default=None, help=text + shown)
            else:
                sp.add_argument(f"--{key}", dest=dest, type=str, default=None,
                                help=text + shown)
    return parser


def _merge(subcommand: str, flags: dict, file_values: dict) -> dict:
    opts = {}
    for key, (_, default, _) in OPTIONS.items():
        flag = flags.get(key.replace("-", "_"))
        if flag is not None:
            opts[key] = _convert(key, flag)
        elif key in file_values:
            opts[key] = file_values[key]
        else:
            opts[key] = default
    for key in REQUIRED[subcommand]:
        if opts[key] is None:
            raise ConfigError(key, f"required for '{subcommand}'")
    for key in POSITIVE:
        value = opts[key]
        if value is not None and not (math.isfinite(value) and value > 0):
            raise ConfigError(key, f"must be positive, got {value}")
    if opts["h-steps"] is not None and opts["h-steps"] < 1:
        raise ConfigError("h-steps", "must be at least 1")
    if opts["h-min"] is not None and opts["h-max"] is not None and opts["h-min"] > opts["h-max"]:
        raise ConfigError("h-min", "must not exceed h-max")
    if opts["direction"] not in (-1, 1):
        raise ConfigError("direction", "must be +1 or -1")
    if opts["mode"] not in ("natural", "arclength"):
        raise ConfigError("mode", f"must be natural or arclength, got {opts['mode']!r}")
    if opts["init"] not in ("random", "stationary", "soliton", "file"):
        raise ConfigError("init", f"unknown initial data {opts['init']!r}")
    if opts["init"] == "file" and subcommand == "evolve" and not opts["seed-file"]:
        raise ConfigError("seed-file", "required for init = file")
    kinds = [k.strip() for k in opts["seed-kind"].split(",") if k.strip()]
    if not kinds or any(k not in SEED_KINDS for k in kinds):
        raise ConfigError("seed-kind", f"expected one of {', '.join(SEED_KINDS)}")
    if subcommand != "continue" and len(kinds) > 1:
        raise ConfigError("seed-kind", "a list of seed kinds is only accepted by 'continue'")
    if "external_field" in kinds and not opts["seed-file"]:
        raise ConfigError("seed-file", "required for an external_field seed")
    unknown = [s for s in opts["suites"].split(",") if s and s not in SUITES]
    if unknown:
        raise ConfigError("suites", f"unknown suite {unknown[0]!r}")
    if (opts["n-min"] is None) != (opts["n-max"] is None):
        raise ConfigError("n-min" if opts["n-min"] is None else "n-max",
                          "n-min and n-max must be given together")
    if subcommand == "continue" and opts["mode"] == "natural" and opts["h-target"] is None:
        raise ConfigError("h-target", "required for natural continuation")
    return opts


def parse_config(argv=None, config_file=None) -> RunConfig:
    """Parse flags (and an optional config file) into a validated :class:`RunConfig`.

    Raises :class:`ConfigError` naming the offending key.
    """
    ns = build_parser().parse_args(argv)
    flags = vars(ns)
    path = flags.pop("config", None) or config_file
    file_values = read_config_file(path) if path else {}
    opts = _merge(ns.subcommand, flags, file_values)
    opts["verbose"] = ns.verbose

    h = opts["h"] if opts["h"] is not None else 1.0
    try:
        params = ModelParams(opts["lambda"], opts["p"], opts["omega"], h, opts["gamma"])
    except ValueError as exc:
        raise ConfigError(str(exc).split()[0], str(exc)) from None
    window = None
    if opts["n-min"] is not None:
        try:
            window = LatticeWindow(opts["n-min"], opts["n-max"], h)
        except ValueError as exc:
            raise ConfigError("n-max", str(exc)) from None
    data = None
    kind = opts["seed-kind"].split(",")[0].strip()
    if kind == "external_field":
        data, file_window = _load_field(opts["seed-file"])
        data = np.real(data)
        window = window or file_window.with_h(h)
    seed = SeedSpec(kind, opts["center"], data)

    evolution = None
    if ns.subcommand == "evolve":
        try:
            evolution = EvolutionConfig(opts["t-end"], opts["dt-initial"], opts["abs-tol"],
                                        opts["rel-tol"], opts["record-every"])
        except ValueError as exc:
            raise ConfigError("t-end", str(exc)) from None
    control = StepControl(tol=opts["tol"]) if ns.subcommand == "continue" else None

    out = opts["output-dir"] or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output-dir", f"cannot create {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError("output-dir", f"{out} is not writable")
    return RunConfig(ns.subcommand, params, window, seed, evolution, control, out, opts)


def _load_field(path):
    try:
        return io.read_field(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("seed-file", f"cannot read field {path}: {exc}") from None


def _initial_field(cfg: RunConfig):
    opts, params = cfg.options, cfg.params
    init = opts["init"]
    if init == "file":
        values, window = _load_field(opts["seed-file"])
        return np.asarray(values, dtype=complex), window.with_h(params.h)
    if init == "stationary":
        state = newton_solve(cfg.seed, params, cfg.window, tol=opts["tol"],
                             max_iter=opts["max-iter"])
        if not state.converged:
            return None, state.message
        return state.u.astype(complex), state.window
    window = cfg.window or LatticeWindow.centered(opts["sites"] // 2, params.h)
    if init == "soliton":
        x = params.h * window.sites
        return continuum_soliton(x, params).astype(complex), window
    rng = np.random.default_rng(opts["seed"])
    phi = rng.standard_normal(window.size) + 1j * rng.standard_normal(window.size)
    phi /= math.sqrt(params.h * np.sum(np.abs(phi) ** 2))
    return phi, window


def cmd_evolve(cfg: RunConfig) -> int:
    phi0, window = _initial_field(cfg)
    if phi0 is None:
        log.error("initial stationary solve failed: %s", window)
        return EXIT_CONVERGENCE
    try:
        trace = integrate(phi0, cfg.params, cfg.evolution)
    except IntegrationError as exc:
        log.error("integration aborted: %s", exc)
        return EXIT_CONVERGENCE
    out = cfg.output_dir
    io.write_trace(out / "trace.csv", trace)
    snaps = trace.snapshots if cfg["snapshots"] else trace.snapshots[-1:]
    for i, (t, phi) in enumerate(snaps):
        io.write_field(out / f"field_{i:05d}.csv", phi, window, real=False)
    io.write_json(out / "evolve.json", {
        "lambda": cfg.params.lam, "p": cfg.params.p, "h": cfg.params.h,
        "t_end": cfg.evolution.t_end, "mass_drift": trace.mass_drift,
        "constraint_linf_max": float(np.max(trace.constraint_series)),
        "transported_constraint_linf_max": float(np.max(trace.transported_constraint_series)),
        "steps_accepted": trace.steps_accepted, "steps_rejected": trace.steps_rejected,
    })
    print(f"mass drift {trace.mass_drift:.3e}; max constraint "
          f"{np.max(trace.constraint_series):.3e}; output in {out}")
    return EXIT_OK


def cmd_stationary(cfg: RunConfig) -> int:
    state = newton_solve(cfg.seed, cfg.params, cfg.window, tol=cfg["tol"],
                         max_iter=cfg["max-iter"])
    io.write_state(cfg.output_dir, state)
    print(f"{'converged' if state.converged else 'NOT converged'}: "
          f"residual {state.residual_linf:.3e} after {state.iterations} iterations, "
          f"mass {state.mass:.12g}")
    return EXIT_OK if state.converged else EXIT_CONVERGENCE


def cmd_roots(cfg: RunConfig) -> int:
    o = cfg.options
    if o["h-steps"] == 1:
        hs = np.array([o["h-min"]])
    else:
        hs = np.geomspace(o["h-min"], o["h-max"], o["h-steps"])
    path = cfg.output_dir / "roots.csv"
    scale = (4 * cfg.params.omega) ** 0.25
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("h,u_single,w_double,asymptotic_ratio\n")
        for h in hs:
            q = cfg.params.with_h(float(h))
            u = scalar_root_single(q)
            w = scalar_root_double(q, u)
            fh.write(",".join(io.fmt(v) for v in (h, u, w, u * math.sqrt(h) / scale)) + "\n")
    print(f"{len(hs)} roots written to {path}")
    return EXIT_OK


def cmd_continue(cfg: RunConfig) -> int:
    o = cfg.options
    kinds = [k.strip() for k in o["seed-kind"].split(",") if k.strip()]
    branches = []
    for kind in kinds:
        seed = SeedSpec(kind, o["center"], cfg.seed.data if kind == "external_field" else None)
        start = newton_solve(seed, cfg.params, cfg.window, tol=o["tol"], max_iter=o["max-iter"])
        if not start.converged:
            log.error("%s start state did not converge: %s", kind, start.message)
            return EXIT_CONVERGENCE
        if o["mode"] == "natural":
            br = natural_continue(start, o["h-target"], cfg.continuation, seed_kind=kind,
                                  max_points=o["max-points"])
        else:
            br = arclength_continue(
                start, o["direction"], cfg.continuation, max_points=o["max-points"],
                h_min=o["h-min"] or 1e-3, h_max=o["h-max"] or 1e4,
                max_folds=o["max-folds"], seed_kind=kind)
        branches.append(br)
    summaries = []
    for i, br in enumerate(branches):
        stem = f"branch_{i:02d}_{br.seed_kind}"
        io.write_branch(cfg.output_dir / f"{stem}.csv", br)
        if o["point-fields"]:
            io.write_branch_fields(cfg.output_dir / "points", br, stem)
        summary = io.branch_summary(br)
        if o["mode"] == "arclength" and "closed loop" not in br.termination:
            summary["end_connection"] = connection_mismatch(br)
        summaries.append(summary)
        folds = ", ".join(f"{h:.8g}" for h in br.folds) or "none"
        print(f"{br.seed_kind}: {len(br.points)} points, folds at h = {folds}; {br.termination}")
    io.write_json(cfg.output_dir / "continue.json", {"branches": summaries})
    io.emit_branch_figure_data(branches, cfg.output_dir)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, jacobian=None) -> int:
    report = run_verify(cfg, jacobian=jacobian)
    io.write_json(cfg.output_dir / "verify.json", report)
    for r in report["suites"]:
        status = "pass" if r["passed"] else "FAIL"
        print(f"{status:4s} {r['name']:24s} measured {r['measured']:.3e}  "
              f"tolerance {r['tolerance']:.1e}  {r['detail']}")
    if not report["passed"]:
        print("failing suites: " + ", ".join(report["failed"]), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def run_verify(cfg: RunConfig, jacobian=None) -> dict:
    """Run the requested suites and return the JSON-ready report."""
    kwargs = {} if jacobian is None else {"jacobian": jacobian}
    only = tuple(s for s in cfg["suites"].split(",") if s)
    # the stationary suites need an h; use a mid-range spacing if none was given
    params = cfg.params if cfg["h"] is not None else cfg.params.with_h(5.0)
    results = run_suites(params, seed=cfg["seed"], tolerance=cfg["tolerance"],
                         trials=cfg["trials"], only=only, **kwargs)
    failed = [r.name for r in results if not r.passed]
    return {"passed": not failed, "failed": failed, "seed": cfg["seed"],
            "suites": [r.as_dict() for r in results]}


COMMANDS = {
    "evolve": cmd_evolve,
    "stationary": cmd_stationary,
    "roots": cmd_roots,
    "continue": cmd_continue,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"latticecss: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    level = logging.WARNING - 10 * min(cfg["verbose"], 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[cfg.subcommand](cfg)


if __name__ == "__main__":
    sys.exit(main())
