"""Command-line entry point: ``feme {trace,blp,sweep,trscan,selftest}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .core import BlochPair, ModelParams, NumericalError, build_difference_state, rate_down, rate_up, thermal_weights
from .dynamics import IntegratorConfig, analytic_undriven_distance, integrate
from .measures import blp_measure, distance_trace, external_distance
from .oracles import full_space_trace_distance, random_difference_state
from .output import write_json, write_table
from .sweep import extract_ridge, run_sweep, synthetic_ridge_grid, tr_scan

log = logging.getLogger("feme")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

TRACE_HEADER = ("t", "i_int", "i_ext", "d_total", "rate_int", "rate_ext", "rate_total")


def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.data["output"]["directory"])
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.yaml").write_text(cfg.dump(), encoding="utf-8")
    return path


def _fmt(cfg):
    return cfg.data["output"]["format"], cfg.data["output"]["precision"]


def cmd_trace(cfg: RunConfig) -> int:
    params, icfg = cfg.model(), cfg.integrator()
    pair = BlochPair(cfg.data["measure"]["theta"], cfg.data["measure"]["phi"])
    trace = distance_trace(pair, params, icfg)
    out = _out(cfg)
    fmt, prec = _fmt(cfg)
    rows = zip(trace.times, trace.i_int, trace.i_ext, trace.d_total, trace.rate_int, trace.rate_ext, trace.rate_total)
    write_table(out, "trace", TRACE_HEADER, list(rows), fmt, prec)
    write_table(out, "crossings", ("t", "direction"), list(trace.crossings), fmt, prec)
    log.info("trace: %d samples, %d crossings", len(trace.times), len(trace.crossings))
    return EXIT_OK


def cmd_blp(cfg: RunConfig) -> int:
    m = cfg.data["measure"]
    res = blp_measure(
        cfg.model(), cfg.integrator(), grid_step=m["grid_step"], restrict_phi=m["restrict_phi"], refine=m["refine"]
    )
    out = _out(cfg)
    payload = {
        "value": res.value,
        "theta": res.argmax_pair.theta,
        "phi": res.argmax_pair.phi,
        "t_r": res.t_r,
        "tail_i_int": res.tail_i_int,
    }
    write_json(out / "blp.json", payload, cfg.data["output"]["precision"])
    log.info("blp: %s", payload)
    return EXIT_OK


def _ridge_payload(ridge):
    if ridge is None:
        return {"ridge": False, "a_n": None, "n_max": 0.0, "peak_lambda0": None, "peak_g": None, "residual": None}
    return {
        "ridge": True,
        "a_n": ridge.a_n,
        "n_max": ridge.n_max,
        "peak_lambda0": ridge.peak_cell[0],
        "peak_g": ridge.peak_cell[1],
        "residual": ridge.residual,
    }


def cmd_sweep(cfg: RunConfig) -> int:
    s = cfg.data["sweep"]
    lam, g = cfg.axis("sweep", "lambda0"), cfg.axis("sweep", "g")
    base, icfg = cfg.model(), cfg.integrator()
    fmt, prec = _fmt(cfg)
    grids = []
    for n_units in s["n_units"]:
        if s["synthetic_ridge"] is not None:
            grid = synthetic_ridge_grid(s["synthetic_ridge"], lam, g, n_units)
        else:
            log.info("sweep N=%d: %dx%d cells", n_units, len(lam), len(g))
            grid = run_sweep(lam, g, base.replace(n_units=n_units), icfg, s["grid_step"], workers=cfg.data["workers"])
        grids.append(grid)
    out = _out(cfg)
    for grid in grids:
        rows = [
            (l_, g_, grid.values[i, j], grid.theta_max[i, j], grid.t_r[i, j]) for i, j, l_, g_ in grid.cells()
        ]
        write_table(out, f"sweep_N{grid.n_units}", ("lambda0", "g", "blp", "theta_max", "t_r"), rows, fmt, prec)
        ridge = extract_ridge(grid)
        write_json(out / f"ridge_N{grid.n_units}.json", _ridge_payload(ridge), prec)
        if grid.errors:
            write_json(out / f"errors_N{grid.n_units}.json", {f"{i},{j}": m for (i, j), m in grid.errors.items()})
    return EXIT_OK


def _ridge_ratio(cfg: RunConfig, n_units: int) -> float:
    given = cfg.data["trscan"]["a_n"]
    if n_units in given:
        return float(given[n_units])
    path = Path(cfg.data["output"]["directory"]) / f"ridge_N{n_units}.json"
    if path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
        if data.get("a_n"):
            log.info("trscan N=%d: ridge ratio from %s", n_units, path)
            return float(data["a_n"])
    log.info("trscan N=%d: no ridge ratio given, running the sweep first", n_units)
    s = cfg.data["sweep"]
    grid = run_sweep(
        cfg.axis("sweep", "lambda0"),
        cfg.axis("sweep", "g"),
        cfg.model().replace(n_units=n_units),
        cfg.integrator(),
        s["grid_step"],
        workers=cfg.data["workers"],
    )
    ridge = extract_ridge(grid)
    if ridge is None:
        raise NumericalError(f"no backflow anywhere on the sweep grid for N={n_units}; cannot place the ridge")
    return ridge.a_n


def cmd_trscan(cfg: RunConfig) -> int:
    t = cfg.data["trscan"]
    lam = cfg.axis("trscan", "lambda0")
    ratios = {n: _ridge_ratio(cfg, n) for n in t["n_units"]}
    scans = [
        tr_scan(n, ratios[n], lam, cfg.model(), cfg.integrator(), cfg.data["sweep"]["grid_step"]) for n in t["n_units"]
    ]
    out = _out(cfg)
    fmt, prec = _fmt(cfg)
    fits = {}
    for scan in scans:
        write_table(out, f"trscan_N{scan.n_units}", ("lambda0", "g", "t_r"), list(scan.points), fmt, prec)
        fits[str(scan.n_units)] = {
            "a_n": scan.a_n,
            "slope": scan.slope,
            "intercept": scan.intercept,
            "points": len(scan.points),
            "underdetermined": scan.underdetermined,
            "skipped": list(scan.skipped),
        }
    write_json(out / "trscan_fit.json", fits, prec)
    return EXIT_OK


def selftest_checks() -> dict:
    """Fast oracle comparisons; each entry is ``(passed, detail)``."""
    checks = {}

    params = ModelParams(lambda0=0.0, g=0.066, n_units=20)
    worst = max(abs(rate_up(params, n) + rate_down(params, n) - params.g) for n in range(21))
    checks["rates_sum_to_g"] = (worst < 1e-12, f"max deviation {worst:.3g}")

    sums = [abs(thermal_weights(ModelParams(0, 0, n, beta=b)).sum() - 1) for n in (1, 100, 1000) for b in (0.1, 2, 20)]
    checks["thermal_weights_normalized"] = (max(sums) < 1e-12, f"max deviation {max(sums):.3g}")

    worst = 0.0
    cfg = IntegratorConfig(t_end=100 * np.pi)
    for n_units in (1, 5):
        p = ModelParams(lambda0=0.0, g=0.066, n_units=n_units)
        rec = integrate(build_difference_state(BlochPair(0.7), p), p, cfg)
        worst = max(worst, float(np.max(np.abs(rec.i_int - analytic_undriven_distance(0.7, p, rec.times)))))
    checks["undriven_closed_form"] = (worst < 1e-6, f"max |I - I_exact| = {worst:.3g} over t <= 100 pi")

    rng = np.random.default_rng(12345)
    worst = 0.0
    for n_units in (2, 3):
        for _ in range(10):
            diff = random_difference_state(rng, n_units)
            worst = max(worst, abs(external_distance(diff)[0] - full_space_trace_distance(diff)))
    checks["blockwise_trace_distance"] = (worst < 1e-10, f"max deviation {worst:.3g}")

    ridge = extract_ridge(synthetic_ridge_grid(2.0))
    err = abs(ridge.a_n - 2.0) / 2.0
    checks["synthetic_ridge"] = (err < 0.05, f"a_n = {ridge.a_n:.4f} for planted 2")
    return checks


def cmd_selftest(cfg: RunConfig) -> int:
    checks = selftest_checks()
    out = _out(cfg)
    write_json(out / "selftest.json", {k: {"passed": ok, "detail": d} for k, (ok, d) in checks.items()})
    for name, (ok, detail) in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for ok, _ in checks.values()) else EXIT_NUMERICAL


COMMANDS = {"trace": cmd_trace, "blp": cmd_blp, "sweep": cmd_sweep, "trscan": cmd_trscan, "selftest": cmd_selftest}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    common.add_argument("--lambda0", type=float, help="drive amplitude in units of the qubit gap")
    common.add_argument("--g", type=float, help="qubit-calorimeter coupling rate")
    common.add_argument("--beta", type=float, help="inverse temperature")
    common.add_argument("--n-units", type=int, help="calorimeter size N")
    common.add_argument("--theta", type=float, help="Bloch polar angle of the pair (trace)")
    common.add_argument("--phi", type=float, help="Bloch azimuth of the pair (trace)")
    common.add_argument("--t-end", type=float, help="truncation time in units of 1/omega0")
    common.add_argument("--dt", type=float, help="integration step")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="feme", description="Finite-calorimeter qubit dynamics and BLP backflow.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("trace", parents=[common], help="information-flow curves for one pair")
    p = sub.add_parser("blp", parents=[common], help="backflow measure maximized over pairs")
    p.add_argument("--full-sphere", action="store_true", help="search phi too")
    p = sub.add_parser("sweep", parents=[common], help="(lambda0, g) maps and ridge fits")
    p.add_argument("--sizes", help="comma-separated calorimeter sizes, e.g. 5,50,100")
    p.add_argument("--points", type=int, help="points per axis")
    p.add_argument("--synthetic-ridge", type=float, metavar="RATIO", help="fill grids with a planted ridge instead")
    p = sub.add_parser("trscan", parents=[common], help="backflow onset along the ridge")
    p.add_argument("--sizes", help="comma-separated calorimeter sizes")
    sub.add_parser("selftest", parents=[common], help="run the oracle checks")
    return parser


def _sizes(text):
    if text is None:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError([f"cannot parse sizes {text!r}"]) from exc


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    overrides = dict(
        output__directory=args.out,
        output__format=args.format,
        workers=args.workers,
        model__lambda0=args.lambda0,
        model__g=args.g,
        model__beta=args.beta,
        model__n_units=args.n_units,
        measure__theta=args.theta,
        measure__phi=args.phi,
        integrator__t_end=args.t_end,
        integrator__dt=args.dt,
    )
    if args.command == "blp" and args.full_sphere:
        overrides["measure__restrict_phi"] = False
    if args.command == "sweep":
        overrides["sweep__n_units"] = _sizes(args.sizes)
        overrides["sweep__synthetic_ridge"] = args.synthetic_ridge
        if args.points is not None:
            overrides["sweep__lambda0__points"] = args.points
            overrides["sweep__g__points"] = args.points
    if args.command == "trscan":
        overrides["trscan__n_units"] = _sizes(args.sizes)
    return cfg.override(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
