"""Trace distances, the BLP backflow measure and backflow onset.

The qubit trace distance of a traceless difference is
``sqrt(((s00 - s11)/2)**2 + |s01|**2)``.  Because the composite difference is
block diagonal over calorimeter energies and uniform inside each
microcanonical shell, its trace distance is the sum of the blockwise 2x2
half trace norms.

The maximization over initial pairs never integrates one pair at a time:
the dynamics is linear, so two (or three) basis trajectories are combined
with the coefficients of each Bloch direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    DIFFERENCE,
    BlochPair,
    ContractError,
    FemeState,
    ModelParams,
    basis_blocks,
    basis_coefficients,
    build_difference_state,
)
from .dynamics import (
    IntegratorConfig,
    feme_rhs,
    half_trace_norms,
    internal_distance_rows,
    propagate,
    reduce_state,
)

#: ascending runs of I(t) that rise by less than this are roundoff
BLP_FLOOR = 1e-12
DEFAULT_GRID_STEP = 0.08


@dataclass(frozen=True)
class DistanceTrace:
    times: np.ndarray
    i_int: np.ndarray
    i_ext: np.ndarray | None
    d_total: np.ndarray | None
    rate_int: np.ndarray
    rate_ext: np.ndarray | None
    crossings: tuple

    @classmethod
    def from_series(cls, times, i_int, d_total=None, rate_int=None, floor: float = BLP_FLOOR):
        times = np.asarray(times, dtype=float)
        i_int = np.asarray(i_int, dtype=float)
        if rate_int is None:
            rate_int = _rate(i_int, times)
        rate_int = np.asarray(rate_int, dtype=float)
        i_ext = rate_ext = None
        if d_total is not None:
            d_total = np.asarray(d_total, dtype=float)
            i_ext = d_total - i_int
            rate_ext = _rate(i_ext, times)
        return cls(
            times=times,
            i_int=i_int,
            i_ext=i_ext,
            d_total=d_total,
            rate_int=rate_int,
            rate_ext=rate_ext,
            crossings=sign_crossings(times, rate_int, i_int, floor),
        )

    @property
    def rate_total(self) -> np.ndarray | None:
        if self.rate_ext is None:
            return None
        return self.rate_int + self.rate_ext

    @property
    def tail_i_int(self) -> float:
        return float(self.i_int[-1])


@dataclass(frozen=True)
class BlpResult:
    value: float
    argmax_pair: BlochPair
    t_r: float | None
    trace: DistanceTrace | None
    tail_i_int: float


def _rate(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    if len(values) < 2:
        return np.zeros_like(values)
    return np.gradient(values, times)


def sign_crossings(times, rate, values, floor: float = BLP_FLOOR) -> tuple:
    """Sign changes of ``rate`` as ``(time, direction)`` pairs.

    Direction is +1 for negative-to-positive.  Zero counts as non-positive.
    Positive excursions during which ``values`` rises by no more than
    ``floor`` are roundoff and dropped together with their closing crossing.
    """
    times = np.asarray(times, dtype=float)
    rate = np.asarray(rate, dtype=float)
    values = np.asarray(values, dtype=float)
    positive = rate > 0
    change = np.flatnonzero(positive[1:] != positive[:-1])
    out = []
    i = 0
    while i < len(change):
        k = change[i]
        if positive[k + 1]:
            k_end = change[i + 1] if i + 1 < len(change) else len(rate) - 1
            segment = values[k : k_end + 2]
            if segment.max() - segment.min() <= floor:
                i += 2
                continue
        out.append((_interpolate_zero(times, rate, k), 1 if positive[k + 1] else -1))
        i += 1
    return tuple(out)


def _interpolate_zero(times, rate, k):
    r0, r1 = rate[k], rate[k + 1]
    if r1 == r0:
        return float(times[k])
    return float(times[k] + (times[k + 1] - times[k]) * r0 / (r0 - r1))


def internal_distance(block_sum, tol: float = 1e-9) -> float:
    """Qubit trace distance from a traceless Hermitian 2x2 difference."""
    m = np.asarray(block_sum, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    if abs(m[0, 0] + m[1, 1]) > tol:
        raise ContractError(f"difference matrix must be traceless, trace={m[0, 0] + m[1, 1]}")
    if abs(m[1, 0] - np.conj(m[0, 1])) > tol or abs(m[0, 0].imag) > tol or abs(m[1, 1].imag) > tol:
        raise ContractError("difference matrix must be Hermitian")
    return float(np.hypot(0.5 * (m[0, 0].real - m[1, 1].real), abs(m[0, 1])))


def external_distance(diff: FemeState) -> tuple[float, float]:
    """``(d_total, i_ext)`` for a composite difference state."""
    if diff.mode != DIFFERENCE:
        raise ContractError(f"external_distance needs a difference state, got mode {diff.mode!r}")
    d_total = float(half_trace_norms(diff).sum())
    return d_total, d_total - internal_distance(reduce_state(diff))


def rate_closed_form(state: FemeState, t: float, params: ModelParams, picture: str = "interaction") -> float:
    """dI/dt from the instantaneous block derivatives.

    ``(D dD/dt + |s01| d|s01|/dt) / I`` with ``D = (s00 - s11)/2``; singular
    as I -> 0, so only meaningful away from coalescence.
    """
    x = state.blocks.sum(axis=0)
    dx = feme_rhs(state, t, params, picture).sum(axis=0)
    half_diff = 0.5 * (x[0] - x[1])
    distance = np.sqrt(half_diff**2 + x[2] ** 2 + x[3] ** 2)
    return float((half_diff * 0.5 * (dx[0] - dx[1]) + x[2] * dx[2] + x[3] * dx[3]) / distance)


def distance_trace(
    pair: BlochPair,
    params: ModelParams,
    cfg: IntegratorConfig | None = None,
    floor: float = BLP_FLOOR,
) -> DistanceTrace:
    """Internal, external and total information for one initial pair."""
    cfg = cfg or IntegratorConfig()
    initial = build_difference_state(pair, params)
    times, sums, d_total, _, _ = propagate(initial.blocks, params, cfg)
    return DistanceTrace.from_series(times, internal_distance_rows(sums[0]), d_total[0], floor=floor)


@numba.njit(cache=True)
def _ascending_rise(values, floor):
    total = 0.0
    rise = 0.0
    for k in range(values.shape[0] - 1):
        d = values[k + 1] - values[k]
        if d > 0.0:
            rise += d
        else:
            if rise > floor:
                total += rise
            rise = 0.0
    if rise > floor:
        total += rise
    return total


@numba.njit(cache=True)
def _combined_distance(sums, coeffs):
    n_basis, n_samples, _ = sums.shape
    out = np.empty(n_samples)
    for j in range(n_samples):
        a = 0.0
        b = 0.0
        re = 0.0
        im = 0.0
        for k in range(n_basis):
            c = coeffs[k]
            a += c * sums[k, j, 0]
            b += c * sums[k, j, 1]
            re += c * sums[k, j, 2]
            im += c * sums[k, j, 3]
        h = 0.5 * (a - b)
        out[j] = np.sqrt(h * h + re * re + im * im)
    return out


@numba.njit(cache=True)
def _scan(sums, coeff_rows, floor):
    out = np.empty(coeff_rows.shape[0])
    for i in range(coeff_rows.shape[0]):
        out[i] = _ascending_rise(_combined_distance(sums, coeff_rows[i]), floor)
    return out


def blp_from_trace(trace: DistanceTrace, floor: float = BLP_FLOOR) -> float:
    """Total rise of I_int over its ascending runs (the positive-rate integral)."""
    values = np.ascontiguousarray(trace.i_int if isinstance(trace, DistanceTrace) else trace, dtype=float)
    return float(_ascending_rise(values, floor))


def backflow_onset(trace: DistanceTrace) -> float | None:
    """First negative-to-positive crossing of the qubit information rate."""
    for t, direction in trace.crossings:
        if direction > 0:
            return t
    return None


def angle_grid(step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError(f"grid step must be > 0, got {step!r}")
    grid = step * np.arange(int(np.ceil(np.pi / step)) + 1)
    return grid[grid < np.pi]


class BasisTrajectories:
    """Reduced trajectories of the basis differences for one parameter point."""

    def __init__(self, params: ModelParams, cfg: IntegratorConfig | None = None, full_sphere: bool = False):
        self.params = params
        self.cfg = cfg or IntegratorConfig()
        self.n_basis = 3 if full_sphere else 2
        self.times, sums, _, _, _ = propagate(
            basis_blocks(params, self.n_basis), params, self.cfg, with_distance=False
        )
        self.sums = np.ascontiguousarray(sums)

    def coefficients(self, theta, phi=0.0) -> np.ndarray:
        coeffs = basis_coefficients(theta, phi)
        if self.n_basis == 2 and np.any(np.abs(coeffs[..., 2]) > 0):
            raise ValueError("phi != 0 needs full_sphere=True")
        return np.ascontiguousarray(coeffs[..., : self.n_basis])

    def i_int(self, theta: float, phi: float = 0.0) -> np.ndarray:
        return _combined_distance(self.sums, self.coefficients(theta, phi))

    def blp(self, theta, phi=0.0, floor: float = BLP_FLOOR) -> np.ndarray:
        coeffs = self.coefficients(theta, phi)
        flat = coeffs.reshape(-1, self.n_basis)
        return _scan(self.sums, np.ascontiguousarray(flat), floor).reshape(coeffs.shape[:-1])


def blp_measure(
    params: ModelParams,
    cfg: IntegratorConfig | None = None,
    grid_step: float = DEFAULT_GRID_STEP,
    restrict_phi: bool = True,
    refine: bool = True,
    with_trace: bool = True,
    floor: float = BLP_FLOOR,
) -> BlpResult:
    """Maximize the backflow over orthogonal pure pairs on an angle grid.

    Grid ties go to the smallest theta, then the smallest phi.  With
    ``refine`` a bounded scalar search on theta within one grid step of the
    grid argmax replaces the grid value when it finds a larger one.
    """
    cfg = cfg or IntegratorConfig()
    basis = BasisTrajectories(params, cfg, full_sphere=not restrict_phi)
    thetas = angle_grid(grid_step)
    phis = np.zeros(1) if restrict_phi else angle_grid(grid_step)
    values = basis.blp(thetas[:, None], phis[None, :], floor)
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    theta, phi, value = float(thetas[i]), float(phis[j]), float(values[i, j])

    if refine and value > floor:
        lo, hi = max(0.0, theta - grid_step), min(np.nextafter(np.pi, 0), theta + grid_step)
        res = minimize_scalar(
            lambda th: -float(basis.blp(th, phi, floor)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-6},
        )
        if -res.fun > value:
            theta, value = float(res.x), float(-res.fun)

    pair = BlochPair(theta, phi)
    if value <= floor:
        value = 0.0
    if with_trace:
        trace = distance_trace(pair, params, cfg, floor)
    else:
        trace = DistanceTrace.from_series(basis.times, basis.i_int(theta, phi), floor=floor)
    t_r = backflow_onset(trace) if value > 0 else None
    return BlpResult(value=value, argmax_pair=pair, t_r=t_r, trace=trace, tail_i_int=trace.tail_i_int)
