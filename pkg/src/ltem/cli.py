"""Command-line driver: ``ltem converge | positivity | check``.

Settings are merged in the order built-in defaults < JSON config file
(``--config``) < command-line flags.  Exit codes: 0 ok, 1 a check failed,
2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

from .errors import ConfigurationError
from .experiments import (
    MAX_FAILURE_FRACTION,
    POSITIVITY_CELLS,
    ExperimentConfig,
    fit_rate,
    positivity_scan,
    run_manifest,
    sample_trajectories,
    strong_error,
)
from .model import MODEL_NAMES, check_assumptions, get_model
from .truncation import get_policy, validate_step_condition

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULT_POLICY = {
    "lv2": "ex1-eps0.25",
    "lv2-fig2": "lv-eps0.25",
    "lv3": "ex2",
    "lv1": "scalar-default",
}

DEFAULTS = {
    "policy": None,
    "seed": None,
    "paths": 1000,
    "ref": 13,
    "ladder": "10,9,8,7,6",
    "horizon": 1.0,
    "out": "results",
    "workers": 1,
    "format": "csv",
    "schemes": None,
    "p": 1.0,
    "cells": ",".join(f"{T:g}:{e}" for T, e in POSITIVITY_CELLS),
    "traj_paths": 10,
    "J": 100.0,
    "K": 100.0,
    "p_order": 2.0,
    "bound_const": None,
    "samples": 10_000,
}


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows, created):
    created.append(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj, created):
    created.append(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _int_list(text):
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _cells(text):
    out = []
    for item in str(text).split(","):
        try:
            T, e = item.split(":")
            out.append((float(T), int(e)))
        except ValueError:
            raise UsageError(f"cells must look like T:exponent, got {item!r}") from None
    return tuple(out)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, choices=MODEL_NAMES)
    common.add_argument("--policy", help="policy preset (default depends on the model)")
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--seed", type=int, help="base seed (fallback: $LTEM_SEED, then 42)")
    common.add_argument("--paths", type=int, help="Monte Carlo sample paths M")
    common.add_argument("--ref", type=int, help="reference step exponent (dt = 2^-ref)")
    common.add_argument("--ladder", help="comma-separated step exponents")
    common.add_argument("--horizon", type=float, help="terminal time T")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes, 0 = all cores")
    common.add_argument("--format", choices=("csv", "csv+svg"))

    parser = argparse.ArgumentParser(prog="ltem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("converge", parents=[common], help="strong error and rate")
    conv.add_argument("--schemes", help="comma-separated subset of ltem,ltem1d,tem")
    conv.add_argument("--p", type=float, help="error moment p")

    pos = sub.add_parser("positivity", parents=[common], help="non-positive percentages")
    pos.add_argument("--schemes", help="comma-separated subset of ltem,ltem1d,tem")
    pos.add_argument("--cells", help="T:exponent pairs, e.g. 2:11,4:10,8:9")
    pos.add_argument("--traj-paths", dest="traj_paths", type=int,
                     help="paths written to trajectories.csv")

    chk = sub.add_parser("check", parents=[common], help="admissibility and assumptions")
    chk.add_argument("--J", type=float, help="moment order J of the rate condition")
    chk.add_argument("--K", type=float, help="inverse-moment order K of the rate condition")
    chk.add_argument("--p-order", dest="p_order", type=float, help="error order p")
    chk.add_argument("--bound-const", dest="bound_const", type=float,
                     help="override the policy bound constant (M0 or J0)")
    chk.add_argument("--samples", type=int, help="assumption-check sample count")
    return parser


def _settings(args):
    s = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        s.update(loaded)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v
    s["model"] = args.model
    if s["policy"] is None:
        s["policy"] = DEFAULT_POLICY[args.model]
    if s["seed"] is None:
        env = os.environ.get("LTEM_SEED")
        try:
            s["seed"] = int(env) if env else 42
        except ValueError:
            raise UsageError(f"LTEM_SEED must be an integer, got {env!r}") from None
    if int(s["paths"]) < 1:
        raise UsageError("--paths must be at least 1")
    if int(s["workers"]) < 0:
        raise UsageError("--workers must be nonnegative")
    return s


def _config(s, default_schemes):
    schemes = s["schemes"]
    if schemes is None:
        schemes = default_schemes
    elif isinstance(schemes, str):
        schemes = tuple(x.strip() for x in schemes.split(",") if x.strip())
    return ExperimentConfig(
        model_name=s["model"],
        policy_name=s["policy"],
        T=float(s["horizon"]),
        ref_exponent=int(s["ref"]),
        ladder=_int_list(s["ladder"]),
        M=int(s["paths"]),
        p=float(s["p"]),
        seed=int(s["seed"]),
        schemes=tuple(schemes),
        workers=int(s["workers"]),
    )


def _cmd_converge(s, created):
    model = get_model(s["model"])
    policy = get_policy(s["policy"], model)
    default = ("ltem1d",) if policy.regime == "scalar" else ("ltem",)
    config = _config(s, default).validate()
    tables = {scheme: strong_error(config, scheme) for scheme in config.schemes}
    rates = {scheme: fit_rate(t) for scheme, t in tables.items()}

    out = s["out"]
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "errors.csv"),
               ["scheme", "dt_exponent", "error", "stderr", "failures"],
               [(sc, r.dt_exponent, r.error, r.stderr, r.failures)
                for sc, t in tables.items() for r in t.rows], created)
    _write_csv(os.path.join(out, "rate.csv"), ["scheme", "slope", "intercept", "r2"],
               [(sc, r.slope, r.intercept, r.r_squared) for sc, r in rates.items()], created)
    plot_rows = []
    for sc, t in tables.items():
        rows = sorted(t.rows, key=lambda r: r.dt)
        x0, y0 = math.log2(rows[0].dt), math.log2(rows[0].error) if rows[0].error > 0 else 0.0
        for r in rows:
            x = math.log2(r.dt)
            y = math.log2(r.error) if r.error > 0 else float("-inf")
            plot_rows.append((sc, x, y, y0 + 0.5 * (x - x0), y0 + (x - x0)))
    _write_csv(os.path.join(out, "plotdata.csv"),
               ["scheme", "log2dt", "log2error", "ref_half", "ref_one"], plot_rows, created)
    if s["format"] == "csv+svg":
        from .plotting import plot_convergence

        path = os.path.join(out, "convergence.svg")
        created.append(path)
        plot_convergence(tables, path)

    valid = all(t.valid for t in tables.values())
    manifest = run_manifest("converge", config.as_dict())
    manifest["valid"] = valid
    _write_json(os.path.join(out, "manifest.json"), manifest, created)
    for sc, r in rates.items():
        print(f"{sc}: slope={r.slope:.4f} intercept={r.intercept:.4f} r2={r.r_squared:.4f}")
    if not valid:
        print(f"warning: more than {MAX_FAILURE_FRACTION:.1%} of paths failed; "
              "results flagged invalid", file=sys.stderr)
    return EXIT_OK


def _cmd_positivity(s, created):
    config = _config(s, ("tem", "ltem"))
    cells = _cells(s["cells"])
    model, policy, y0 = config.resolve()
    report = positivity_scan(config, cells)

    out = s["out"]
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "positivity.csv"),
               ["scheme", "component", "T", "dt_exponent", "percent"],
               [(r.scheme, r.component, r.T, r.dt_exponent, r.percent) for r in report.rows],
               created)
    T, e = cells[0]
    n_traj = min(int(s["traj_paths"]), config.M)
    traj_schemes = tuple(sc for sc in config.schemes if sc in ("tem", "ltem", "ltem1d"))
    grid, trajs = sample_trajectories(model, policy, y0, T, e, config.seed, n_traj,
                                      traj_schemes)
    header = ["scheme", "path", "step", "t"] + [f"y{i + 1}" for i in range(model.d)]
    rows = []
    for sc, states in trajs.items():
        for p in range(n_traj):
            for k in range(len(grid)):
                rows.append([sc, p, k, float(grid[k])] + [float(v) for v in states[k, p]])
    _write_csv(os.path.join(out, "trajectories.csv"), header, rows, created)
    if s["format"] == "csv+svg":
        from .plotting import plot_trajectories

        path = os.path.join(out, "trajectories.svg")
        created.append(path)
        plot_trajectories(grid, trajs, path)

    cfg = config.as_dict()
    cfg["cells"] = [list(c) for c in cells]
    _write_json(os.path.join(out, "manifest.json"), run_manifest("positivity", cfg), created)
    for r in report.rows:
        print(f"{r.scheme:6s} y{r.component} T={r.T:g} dt=2^-{r.dt_exponent}: {r.percent:.2f}%")
    return EXIT_OK


def _cmd_check(s, created):
    model = get_model(s["model"])
    policy = get_policy(s["policy"], model)
    if s["bound_const"] is not None:
        policy = dataclasses.replace(policy, bound_const=float(s["bound_const"]))
    params = dataclasses.replace(model.params, J=float(s["J"]), K=float(s["K"]))
    ok = True
    print(f"step-size condition (J={params.J:g}, K={params.K:g}, p={s['p_order']:g}, "
          f"policy={policy.name}, regime={policy.regime})")
    for e in _int_list(s["ladder"]):
        rep = validate_step_condition(policy, params, float(s["p_order"]), 2.0**-e)
        ok &= rep.ok
        print("  " + rep.line())
    print(f"assumption diagnostics ({model.name} preset constants, "
          f"{s['samples']} samples; a clean report does not certify)")
    report = check_assumptions(model, model.params, n_samples=int(s["samples"]),
                               seed=int(s["seed"]))
    for line in report.lines():
        print("  " + line)
    ok &= report.ok
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


_COMMANDS = {"converge": _cmd_converge, "positivity": _cmd_positivity, "check": _cmd_check}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    created = []
    try:
        s = _settings(args)
        return _COMMANDS[args.command](s, created)
    except (UsageError, ConfigurationError) as exc:
        code = EXIT_USAGE
        print(f"ltem {args.command}: error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        code = EXIT_RUNTIME
        print(f"ltem {args.command}: runtime failure: {exc!r}", file=sys.stderr)
    for path in created:
        try:
            os.remove(path)
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
