"""Acceptance suite: one test per criterion, each at its stated tolerance.

The default-grid sweeps behind criteria 6 to 8 take tens of minutes on one
core.  Set ``FEME_ACCEPTANCE_CACHE=<dir>`` to keep them between runs,
``FEME_WORKERS=<k>`` to parallelize them (0 = all cores), and
``FEME_LONG_RUN=1`` to enable the N = 1000 check.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from feme.cli import main
from feme.core import STATE, BlochPair, ModelParams, build_difference_state, build_state
from feme.dynamics import DEFAULT_DT, IntegratorConfig, analytic_undriven_distance, integrate, trace_drift
from feme.measures import blp_from_trace, blp_measure, distance_trace
from feme.oracles import full_space_trace_distance, random_difference_state
from feme.measures import external_distance
from feme.sweep import (
    DEFAULT_SIZES,
    DEFAULT_SWEEP_STEP,
    SweepGrid,
    default_axis,
    extract_ridge,
    loglog_fit,
    markov_flips,
    non_monotone_triples,
    resolve_workers,
    run_sweep,
    tr_scan,
)

pytestmark = pytest.mark.acceptance

FULL = IntegratorConfig()
REF = ModelParams(lambda0=0.08, g=0.066, n_units=20, beta=2.0)
REF_PAIR = BlochPair(1.69, 0.0)
EPS = 1e-12

# integrations from criteria 1 to 3, collected for the conservation suite
_RUNS = []


def _record_run(state, params, cfg=FULL):
    rec = integrate(state, params, cfg)
    _RUNS.append((state, params, rec))
    return rec


# ---------------------------------------------------------------- criteria 1-5


UNDRIVEN_CASES = [
    (n, g, theta) for n in (1, 5, 20) for g in (0.01, 0.066, 0.2) for theta in (0.0, 0.7, np.pi / 2)
]


@pytest.mark.criterion("1", "undriven closed form, 27 cases, |dI| < 1e-6 on [0, 1000 pi]")
def test_criterion_1_undriven_closed_form(report):
    worst = 0.0
    for n_units, g, theta in UNDRIVEN_CASES:
        p = ModelParams(lambda0=0.0, g=g, n_units=n_units)
        rec = _record_run(build_difference_state(BlochPair(theta), p), p)
        err = float(np.max(np.abs(rec.i_int - analytic_undriven_distance(theta, p, rec.times))))
        worst = max(worst, err)
    report(f"max deviation {worst:.2e}")
    assert worst < 1e-6


@pytest.mark.criterion("2", "undriven backflow measure < 1e-10")
def test_criterion_2_undriven_zero(report):
    values = []
    for g in (0.01, 0.066, 0.2):
        for n_units in (5, 20):
            res = blp_measure(ModelParams(0.0, g, n_units), FULL, restrict_phi=False)
            values.append(res.value)
    report(f"max value {max(values):.2e} over 6 (g, N) points, full sphere")
    assert max(values) < 1e-10


@pytest.mark.criterion("3", "driven reference point: rate_int(0+) < 0, later backflow, total rate <= eps")
def test_criterion_3_reference_trace(report):
    state = build_difference_state(REF_PAIR, REF)
    rec = _record_run(state, REF)
    trace = distance_trace(REF_PAIR, REF, FULL)
    assert np.array_equal(trace.i_int, rec.i_int)
    rate_total = trace.rate_total
    up = [t for t, d in trace.crossings if d > 0]
    report(
        f"rate_int(0)={trace.rate_int[0]:.3e}, first up-crossing t={up[0] if up else None}, "
        f"max rate_total={rate_total.max():.2e}, backflow={blp_from_trace(trace):.4e}"
    )
    assert trace.rate_int[0] < 0
    assert up and np.any(trace.rate_int[trace.times > up[0]] > 0)
    assert np.all(rate_total <= EPS)
    # also a state-mode run of the same point for the conservation suite
    _record_run(build_state(np.array([[0.5, 0.5], [0.5, 0.5]]), REF), REF)


@pytest.mark.criterion("4", "blockwise total trace distance vs full 2*2^N spectrum, 100 states, N = 2, 3")
def test_criterion_4_blockwise_distance(report):
    rng = np.random.default_rng(20240401)
    worst = 0.0
    for n_units in (2, 3):
        for _ in range(100):
            diff = random_difference_state(rng, n_units)
            worst = max(worst, abs(external_distance(diff)[0] - full_space_trace_distance(diff)))
    report(f"max deviation {worst:.2e}")
    assert worst < 1e-10


@pytest.mark.criterion("5", "trace invariants < 1e-9 on criteria 1-3 runs; step halving moves I_int < 1e-8")
def test_criterion_5_conservation(report):
    if len(_RUNS) < len(UNDRIVEN_CASES) + 2:
        pytest.fail("criteria 1 and 3 must run first in the same session")
    drift = max(trace_drift(rec, state.mode) for state, _, rec in _RUNS)
    modes = {state.mode for state, _, _ in _RUNS}
    halving = 0.0
    for state, params, rec in _RUNS:
        fine = integrate(state, params, FULL.replace(dt=DEFAULT_DT / 2, sample_every=2))
        if state.mode == STATE:
            a, b = rec.sums, fine.sums
        else:
            a, b = rec.i_int, fine.i_int
        halving = max(halving, float(np.max(np.abs(a - b))))
    report(f"max trace drift {drift:.2e} over {len(_RUNS)} runs ({sorted(modes)}), step-halving change {halving:.2e}")
    assert STATE in modes and len(modes) == 2
    assert drift < 1e-9
    assert halving < 1e-8


# ------------------------------------------------------- default-grid sweeps


def _cache_key(n_units):
    spec = {
        "axis": default_axis().tolist(),
        "n": n_units,
        "dt": FULL.dt,
        "t_end": FULL.t_end,
        "step": DEFAULT_SWEEP_STEP,
        "beta": 2.0,
    }
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def _sweep(n_units):
    cache = os.environ.get("FEME_ACCEPTANCE_CACHE")
    path = Path(cache) / f"sweep_N{n_units}_{_cache_key(n_units)}.npz" if cache else None
    if path is not None and path.exists():
        d = np.load(path)
        return SweepGrid(d["lam"], d["g"], n_units, d["values"], d["t_r"], d["theta"])
    axis = default_axis()
    grid = run_sweep(
        axis, axis, ModelParams(0.0, 0.0, n_units), FULL, workers=int(os.environ.get("FEME_WORKERS", "0"))
    )
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, lam=grid.lambda0_values, g=grid.g_values, values=grid.values, t_r=grid.t_r, theta=grid.theta_max)
    return grid


@pytest.fixture(scope="session")
def default_grids():
    return {n: _sweep(n) for n in DEFAULT_SIZES}


@pytest.fixture(scope="session")
def ridges(default_grids):
    return {n: extract_ridge(grid) for n, grid in default_grids.items()}


@pytest.mark.criterion("6", "peak value strictly decreasing and ridge ratio increasing over N = 5..100")
def test_criterion_6_peak_and_ridge_scaling(default_grids, ridges, report):
    sizes = sorted(default_grids)
    assert all(ridges[n] is not None for n in sizes), "a default grid shows no backflow at all"
    n_max = [ridges[n].n_max for n in sizes]
    a_n = [ridges[n].a_n for n in sizes]
    peaks = [ridges[n].peak_cell for n in sizes]
    slope, intercept = loglog_fit(sizes, n_max)
    extrapolated = float(np.exp(intercept) * 1000.0**slope)
    report(
        "N_max="
        + ", ".join(f"{n}:{v:.4g}" for n, v in zip(sizes, n_max))
        + " | a_N="
        + ", ".join(f"{n}:{v:.3f}" for n, v in zip(sizes, a_n))
        + " | peaks="
        + ", ".join(f"{n}:({l:.3g},{g:.3g})" for n, (l, g) in zip(sizes, peaks))
        + f" | power-law extrapolation to N=1000: {extrapolated:.2e}"
    )
    assert all(b < a for a, b in zip(n_max, n_max[1:])), "peak value not strictly decreasing"
    assert all(b > a for a, b in zip(a_n, a_n[1:])), "ridge ratio not increasing"


@pytest.mark.criterion("6-long", "optional: N = 1000 peak within a factor 3 of 1e-3 (FEME_LONG_RUN=1)")
@pytest.mark.skipif(os.environ.get("FEME_LONG_RUN") != "1", reason="set FEME_LONG_RUN=1 for the N = 1000 check")
def test_criterion_6_long_run(report):
    axis = np.linspace(0.005, 0.2, 14)
    grid = run_sweep(axis, axis, ModelParams(0.0, 0.0, 1000), FULL, workers=int(os.environ.get("FEME_WORKERS", "0")))
    ridge = extract_ridge(grid)
    value = 0.0 if ridge is None else ridge.n_max
    report(f"N=1000 peak {value:.3e} on a 14x14 grid, peak cell {None if ridge is None else ridge.peak_cell}")
    assert 1e-3 / 3 <= value <= 3e-3


TR_SIZES = (5, 50, 100)
TR_LAMBDA = np.geomspace(0.01, 0.1, 6)


@pytest.mark.criterion("7", "onset time along the ridge: slope -1 +- 0.1 per N, curves within 10% spread")
def test_criterion_7_onset_scaling(ridges, report):
    scans = {n: tr_scan(n, ridges[n].a_n, TR_LAMBDA, cfg=FULL, grid_step=0.08) for n in TR_SIZES}
    slopes = {n: s.slope for n, s in scans.items()}
    skipped = {n: s.skipped for n, s in scans.items() if s.skipped}
    common = sorted(set.intersection(*[{p[0] for p in s.points} for s in scans.values()]))
    spreads = []
    for lam in common:
        t = np.array([next(p[2] for p in scans[n].points if p[0] == lam) for n in TR_SIZES])
        spreads.append((t.max() - t.min()) / t.mean())
    worst = max(spreads) if spreads else float("nan")
    report(
        "slopes="
        + ", ".join(f"{n}:{s if s is None else round(s, 3)}" for n, s in slopes.items())
        + f" | worst relative spread {worst:.3f} over {len(common)} drive values"
        + (f" | skipped {skipped}" if skipped else "")
    )
    assert all(s is not None and abs(s + 1) <= 0.1 for s in slopes.values())
    assert len(common) >= 2 and worst <= 0.10


@pytest.mark.criterion("8", "a default-grid cell flips Markovian -> non-Markovian as N grows")
def test_criterion_8_size_flip(default_grids, report):
    flips = markov_flips(default_grids)
    dips = non_monotone_triples(default_grids)
    example = flips[0] if flips else None
    report(f"{len(flips)} flips, {len(dips)} non-monotone triples; first flip {example}")
    assert flips


@pytest.mark.criterion("9", "full-sphere optimum at phi in {0, pi} within one step, value within 1e-6")
def test_criterion_9_phi_symmetry(report):
    restricted = blp_measure(REF, FULL, grid_step=0.08, restrict_phi=True, with_trace=False)
    full = blp_measure(REF, FULL, grid_step=0.08, restrict_phi=False, with_trace=False)
    phi = full.argmax_pair.phi
    gap = min(phi, np.pi - phi)
    report(
        f"full sphere theta={full.argmax_pair.theta:.4f} phi={phi:.4f} value={full.value:.8f}; "
        f"restricted theta={restricted.argmax_pair.theta:.4f} value={restricted.value:.8f}"
    )
    assert gap <= 0.08 + 1e-12
    assert abs(full.value - restricted.value) <= 1e-6


@pytest.mark.criterion("10", "sweep output byte-identical for 1, 4 and all workers")
def test_criterion_10_determinism(tmp_path, report):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "sweep:\n"
        "  lambda0: {min: 0.02, max: 0.2, points: 4, scale: linear}\n"
        "  g: {min: 0.02, max: 0.2, points: 4, scale: linear}\n"
        "  n_units: [5, 20]\n"
    )
    outputs = {}
    for workers in (1, 4, 0):
        out = tmp_path / f"w{workers}"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--workers", str(workers)]) == 0
        outputs[workers] = {p.name: p.read_bytes() for p in sorted(out.glob("*_N*.*"))}
    report(f"all cores = {resolve_workers(0)}; files compared: {sorted(outputs[1])}")
    assert outputs[1] == outputs[4] == outputs[0]
