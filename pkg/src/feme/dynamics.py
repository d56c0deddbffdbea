"""Time evolution of the conditional qubit blocks.

The right-hand side couples block n to its neighbours n - 1 and n + 1 through
the level-dependent jump rates.  In the interaction picture with respect to
the bare qubit Hamiltonian the drive enters through

    v(t) = lambda0 * exp(-i omega0 t) * sin(omega0 t)

so no fast phase appears in the solved variables.  The Schroedinger-picture
right-hand side is kept as a cross-check path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import (
    CONSERVATION_TOL,
    DIFFERENCE,
    FemeState,
    ModelParams,
    NumericalError,
    _half_trace_norm,
)

INTERACTION = "interaction"
SCHROEDINGER = "schroedinger"

DEFAULT_DT = 2 * np.pi / 200
DEFAULT_T_END = 1000 * np.pi

_FASTMATH = {"nsz", "arcp", "contract", "reassoc"}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = DEFAULT_DT
    t_end: float = DEFAULT_T_END
    sample_every: int = 1
    picture: str = INTERACTION

    def __post_init__(self):
        bad = []
        if not self.dt > 0:
            bad.append(f"dt={self.dt!r} (need > 0)")
        if not self.t_end > 0:
            bad.append(f"t_end={self.t_end!r} (need > 0)")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            bad.append(f"sample_every={self.sample_every!r} (need integer >= 1)")
        if self.picture not in (INTERACTION, SCHROEDINGER):
            bad.append(f"picture={self.picture!r} (need {INTERACTION!r} or {SCHROEDINGER!r})")
        if bad:
            raise ValueError("invalid integrator config: " + ", ".join(bad))
        object.__setattr__(self, "sample_every", int(self.sample_every))

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.t_end / self.dt - 1e-9))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_every + 1

    def replace(self, **changes) -> "IntegratorConfig":
        values = dict(dt=self.dt, t_end=self.t_end, sample_every=self.sample_every, picture=self.picture)
        values.update(changes)
        return IntegratorConfig(**values)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled trajectory.

    ``sums[k]`` is the reduced qubit matrix at ``times[k]`` stored as
    ``(s00, s11, Re s01, Im s01)``; ``d_total[k]`` is half the trace norm of
    the full composite matrix.  Full blocks are only kept on request.
    """

    times: np.ndarray
    sums: np.ndarray
    d_total: np.ndarray
    final: FemeState
    picture: str
    blocks: np.ndarray | None = None

    def reduced(self, k: int) -> np.ndarray:
        s00, s11, re, im = self.sums[k]
        return np.array([[s00, re + 1j * im], [re - 1j * im, s11]])

    def snapshot(self, k: int) -> FemeState:
        if self.blocks is None:
            raise ValueError("trajectory was integrated without keep_blocks=True")
        return FemeState(self.blocks[k], time=float(self.times[k]), mode=self.final.mode, check=False)

    @property
    def total_trace(self) -> np.ndarray:
        return self.sums[:, 0] + self.sums[:, 1]

    @property
    def i_int(self) -> np.ndarray:
        return internal_distance_rows(self.sums)


def internal_distance_rows(sums: np.ndarray) -> np.ndarray:
    # traceless part only: ((s00 - s11)/2)^2 + |s01|^2
    return np.sqrt((0.5 * (sums[..., 0] - sums[..., 1])) ** 2 + sums[..., 2] ** 2 + sums[..., 3] ** 2)


def _drive(t, lambda0, omega0, rotating):
    s = np.sin(omega0 * t)
    amp = lambda0 * s
    if rotating:
        return amp * np.cos(omega0 * t), -amp * s, 0.0
    return amp, 0.0, omega0


def feme_rhs(state: FemeState, t: float, params: ModelParams, picture: str = INTERACTION) -> np.ndarray:
    """Time derivative of every block, shape ``(N + 1, 4)``.

    Plain numpy; the integrator uses a compiled twin of the same equations.
    """
    x = np.asarray(state.blocks if isinstance(state, FemeState) else state, dtype=float)
    n_units = params.n_units
    if x.shape != (n_units + 1, 4):
        raise ValueError(f"state has shape {x.shape}, expected ({n_units + 1}, 4) for N={n_units}")
    if picture not in (INTERACTION, SCHROEDINGER):
        raise ValueError(f"unknown picture {picture!r}")
    vr, vi, w = _drive(t, params.lambda0, params.omega0, picture == INTERACTION)
    s00, s11, re, im = x.T
    n = np.arange(n_units + 1)
    up = params.g * n / n_units
    down = params.g * (n_units - n) / n_units
    # 2 Re(i v* s01) for the coherent population transfer
    coherent = -2.0 * (vr * im - vi * re)
    gain00 = np.zeros(n_units + 1)
    gain00[1:] = down[:-1] * s11[:-1]
    gain11 = np.zeros(n_units + 1)
    gain11[:-1] = up[1:] * s00[1:]
    out = np.empty_like(x)
    out[:, 0] = coherent - up * s00 + gain00
    out[:, 1] = -coherent - down * s11 + gain11
    diff = s00 - s11
    half_g = 0.5 * params.g
    out[:, 2] = -vi * diff - half_g * re - w * im
    out[:, 3] = vr * diff - half_g * im + w * re
    return out


@numba.njit(cache=True, fastmath=_FASTMATH)
def _rhs_kernel(t, lambda0, omega0, g, rotating, x, dx):
    n_basis, n_levels, _ = x.shape
    n_units = n_levels - 1
    s = np.sin(omega0 * t)
    amp = lambda0 * s
    if rotating:
        vr = amp * np.cos(omega0 * t)
        vi = -amp * s
        w = 0.0
    else:
        vr = amp
        vi = 0.0
        w = omega0
    step = g / n_units
    half_g = 0.5 * g
    for k in range(n_basis):
        for n in range(n_levels):
            a = x[k, n, 0]
            b = x[k, n, 1]
            re = x[k, n, 2]
            im = x[k, n, 3]
            coherent = -2.0 * (vr * im - vi * re)
            up = step * n
            da = coherent - up * a
            if n > 0:
                da += (g - step * (n - 1)) * x[k, n - 1, 1]
            db = -coherent - (g - up) * b
            if n < n_units:
                db += step * (n + 1) * x[k, n + 1, 0]
            diff = a - b
            dx[k, n, 0] = da
            dx[k, n, 1] = db
            dx[k, n, 2] = -vi * diff - half_g * re - w * im
            dx[k, n, 3] = vr * diff - half_g * im + w * re


# no fastmath here: the finiteness test must survive optimization
@numba.njit(cache=True)
def _record(x, sums, d_total, blocks, j, keep_blocks, with_distance):
    n_basis, n_levels, _ = x.shape
    ok = True
    for k in range(n_basis):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        dt_ = 0.0
        for n in range(n_levels):
            a = x[k, n, 0]
            b = x[k, n, 1]
            re = x[k, n, 2]
            im = x[k, n, 3]
            s0 += a
            s1 += b
            s2 += re
            s3 += im
            if with_distance:
                mean = 0.5 * abs(a + b)
                h = 0.5 * (a - b)
                radius = np.sqrt(h * h + re * re + im * im)
                dt_ += mean if mean > radius else radius
            if keep_blocks:
                blocks[k, j, n, 0] = a
                blocks[k, j, n, 1] = b
                blocks[k, j, n, 2] = re
                blocks[k, j, n, 3] = im
        sums[k, j, 0] = s0
        sums[k, j, 1] = s1
        sums[k, j, 2] = s2
        sums[k, j, 3] = s3
        d_total[k, j] = dt_
        if not (np.isfinite(s0) and np.isfinite(s1) and np.isfinite(s2) and np.isfinite(s3)):
            ok = False
    return ok


@numba.njit(cache=True, fastmath=_FASTMATH)
def _rk4_kernel(x, lambda0, omega0, g, dt, n_steps, sample_every, rotating, keep_blocks, with_distance):
    n_basis, n_levels, _ = x.shape
    n_samples = n_steps // sample_every + 1
    sums = np.empty((n_basis, n_samples, 4))
    d_total = np.empty((n_basis, n_samples))
    if keep_blocks:
        blocks = np.empty((n_basis, n_samples, n_levels, 4))
    else:
        blocks = np.empty((n_basis, 0, n_levels, 4))
    k1 = np.empty_like(x)
    k2 = np.empty_like(x)
    k3 = np.empty_like(x)
    k4 = np.empty_like(x)
    tmp = np.empty_like(x)
    size = x.size
    xf = x.reshape(size)
    k1f = k1.reshape(size)
    k2f = k2.reshape(size)
    k3f = k3.reshape(size)
    k4f = k4.reshape(size)
    tf = tmp.reshape(size)
    half = 0.5 * dt
    sixth = dt / 6.0
    if not _record(x, sums, d_total, blocks, 0, keep_blocks, with_distance):
        return sums, d_total, blocks, 0
    j = 1
    for step in range(n_steps):
        t = step * dt
        _rhs_kernel(t, lambda0, omega0, g, rotating, x, k1)
        for i in range(size):
            tf[i] = xf[i] + half * k1f[i]
        _rhs_kernel(t + half, lambda0, omega0, g, rotating, tmp, k2)
        for i in range(size):
            tf[i] = xf[i] + half * k2f[i]
        _rhs_kernel(t + half, lambda0, omega0, g, rotating, tmp, k3)
        for i in range(size):
            tf[i] = xf[i] + dt * k3f[i]
        _rhs_kernel(t + dt, lambda0, omega0, g, rotating, tmp, k4)
        for i in range(size):
            xf[i] += sixth * (k1f[i] + 2.0 * (k2f[i] + k3f[i]) + k4f[i])
        if (step + 1) % sample_every == 0:
            if not _record(x, sums, d_total, blocks, j, keep_blocks, with_distance):
                return sums, d_total, blocks, step + 1
            j += 1
    return sums, d_total, blocks, -1


def check_step(dt: float, params: ModelParams) -> None:
    limit = 2 * np.pi / (200 * params.omega0)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} does not resolve the drive; need dt <= 2 pi / (200 omega0) = {limit}")


def propagate(
    initial: np.ndarray,
    params: ModelParams,
    cfg: IntegratorConfig,
    keep_blocks: bool = False,
    with_distance: bool = True,
):
    """Integrate a batch of initial block arrays, shape ``(k, N + 1, 4)``.

    Returns ``(times, sums, d_total, blocks, final)`` with a leading batch axis
    on every array except ``times``.  ``d_total`` is zero-filled when
    ``with_distance`` is false (basis runs, where it has no meaning).
    """
    x = np.array(initial, dtype=float, order="C")
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (params.n_units + 1, 4):
        raise ValueError(f"initial blocks have shape {x.shape}, expected (k, {params.n_units + 1}, 4)")
    check_step(cfg.dt, params)
    sums, d_total, blocks, bad = _rk4_kernel(
        x,
        float(params.lambda0),
        float(params.omega0),
        float(params.g),
        float(cfg.dt),
        cfg.n_steps,
        cfg.sample_every,
        cfg.picture == INTERACTION,
        keep_blocks,
        with_distance,
    )
    if bad >= 0:
        where = np.argwhere(~np.isfinite(x))
        batch, level = (int(where[0, 0]), int(where[0, 1])) if len(where) else (-1, -1)
        raise NumericalError(
            f"non-finite state at t={bad * cfg.dt:.6g} (step {bad}), batch {batch}, block n={level}; "
            f"params={params}"
        )
    times = np.arange(sums.shape[1]) * (cfg.sample_every * cfg.dt)
    return times, sums, d_total, (blocks if keep_blocks else None), x


def integrate(
    initial: FemeState,
    params: ModelParams,
    cfg: IntegratorConfig | None = None,
    keep_blocks: bool = False,
) -> TrajectoryRecord:
    """Fixed-step classical RK4 integration of one initial state."""
    cfg = cfg or IntegratorConfig()
    if initial.n_units != params.n_units:
        raise ValueError(f"state has N={initial.n_units} but params have N={params.n_units}")
    times, sums, d_total, blocks, final = propagate(initial.blocks, params, cfg, keep_blocks)
    t_final = cfg.n_steps * cfg.dt
    return TrajectoryRecord(
        times=times,
        sums=sums[0],
        d_total=d_total[0],
        final=FemeState(final[0], time=t_final, mode=initial.mode, check=False),
        picture=cfg.picture,
        blocks=None if blocks is None else blocks[0],
    )


def trace_drift(record: TrajectoryRecord, mode: str) -> float:
    """Largest deviation of the total trace from its conserved value."""
    expected = 0.0 if mode == DIFFERENCE else 1.0
    return float(np.max(np.abs(record.total_trace - expected)))


def conserves_trace(record: TrajectoryRecord, mode: str, tol: float = CONSERVATION_TOL) -> bool:
    return trace_drift(record, mode) < tol


def analytic_undriven_distance(theta: float, params: ModelParams, t):
    """Closed-form qubit trace distance without drive, thermal calorimeter.

    ``sqrt(f(t)^2 cos^2 theta + h(t)^2 sin^2 theta)`` where the population
    part f relaxes to 1/(N + 1) and the coherence part h = exp(-g t / 2).
    """
    t = np.asarray(t, dtype=float)
    n_units = params.n_units
    g = params.g
    f = (n_units * np.exp(-g * (1.0 + 1.0 / n_units) * t) + 1.0) / (n_units + 1.0)
    h = np.exp(-0.5 * g * t)
    return np.sqrt((f * np.cos(theta)) ** 2 + (h * np.sin(theta)) ** 2)


def reduce_state(state: FemeState) -> np.ndarray:
    """Reduced qubit matrix: the sum of all blocks."""
    s00, s11, re, im = state.blocks.sum(axis=0)
    return np.array([[s00, re + 1j * im], [re - 1j * im, s11]])


def half_trace_norms(state: FemeState) -> np.ndarray:
    return _half_trace_norm(state.blocks)
