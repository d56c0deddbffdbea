"""(lambda0, g) grids, ridge extraction and the backflow-onset scan.

Cells are independent; with ``workers > 1`` rows of the grid go to a process
pool and come back in submission order, so the result never depends on the
worker count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams, NumericalError
from .dynamics import IntegratorConfig
from .measures import BLP_FLOOR, blp_measure

log = logging.getLogger(__name__)

DEFAULT_AXIS = (0.005, 0.2, 40)
DEFAULT_SWEEP_STEP = 0.16
DEFAULT_SIZES = (5, 10, 20, 50, 100)

MARKOVIAN = 1e-10
NON_MARKOVIAN = 1e-6


def default_axis() -> np.ndarray:
    lo, hi, num = DEFAULT_AXIS
    return np.linspace(lo, hi, num)


@dataclass
class SweepGrid:
    lambda0_values: np.ndarray
    g_values: np.ndarray
    n_units: int
    values: np.ndarray
    t_r: np.ndarray
    theta_max: np.ndarray
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.lambda0_values), len(self.g_values))
        for name in ("values", "t_r", "theta_max"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def shape(self):
        return self.values.shape

    def cells(self):
        for i, lam in enumerate(self.lambda0_values):
            for j, g in enumerate(self.g_values):
                yield i, j, float(lam), float(g)


@dataclass(frozen=True)
class RidgeFit:
    a_n: float
    n_max: float
    peak_cell: tuple
    fit_points: np.ndarray
    residual: float


@dataclass(frozen=True)
class TrScan:
    n_units: int
    a_n: float
    points: tuple
    skipped: tuple
    slope: float | None
    intercept: float | None

    @property
    def underdetermined(self) -> bool:
        return self.slope is None


def _check_axis(name, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError(f"{name} axis must be a nonempty 1-d sequence")
    if np.any(np.diff(values) <= 0):
        raise ValueError(f"{name} axis must be strictly increasing")
    if np.any(values < 0):
        raise ValueError(f"{name} axis must be nonnegative")
    return values


def _row(task):
    lam, g_values, base, cfg, grid_step, restrict_phi = task
    out = []
    for g in g_values:
        try:
            res = blp_measure(
                base.replace(lambda0=float(lam), g=float(g)),
                cfg,
                grid_step=grid_step,
                restrict_phi=restrict_phi,
                with_trace=False,
            )
            out.append((res.value, np.nan if res.t_r is None else res.t_r, res.argmax_pair.theta, None))
        except NumericalError as exc:
            out.append((np.nan, np.nan, np.nan, str(exc)))
    return out


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def run_sweep(
    lambda0_values,
    g_values,
    base: ModelParams,
    cfg: IntegratorConfig | None = None,
    grid_step: float = DEFAULT_SWEEP_STEP,
    restrict_phi: bool = True,
    workers: int = 1,
) -> SweepGrid:
    """Evaluate the maximized backflow on every (lambda0, g) cell.

    A cell whose integration fails carries NaN and an entry in ``errors``.
    """
    cfg = cfg or IntegratorConfig()
    lambda0_values = _check_axis("lambda0", lambda0_values)
    g_values = _check_axis("g", g_values)
    tasks = [(lam, g_values, base, cfg, grid_step, restrict_phi) for lam in lambda0_values]
    workers = resolve_workers(workers)
    if workers == 1:
        rows = [_row(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_row, tasks))
    cells = np.array([[c[:3] for c in row] for row in rows], dtype=float).reshape(len(lambda0_values), len(g_values), 3)
    errors = {
        (i, j): row[j][3] for i, row in enumerate(rows) for j in range(len(g_values)) if row[j][3] is not None
    }
    for key, msg in errors.items():
        log.warning("cell %s failed: %s", key, msg)
    return SweepGrid(
        lambda0_values=lambda0_values,
        g_values=g_values,
        n_units=base.n_units,
        values=cells[..., 0],
        t_r=cells[..., 1],
        theta_max=cells[..., 2],
        errors=errors,
    )


def _crest(values: np.ndarray) -> np.ndarray:
    """Row and column argmaxes that fall strictly inside their line."""
    crest = np.zeros(values.shape, dtype=bool)
    ni, nj = values.shape
    for i in range(ni):
        j = int(np.argmax(values[i]))
        if nj == 1 or 0 < j < nj - 1:
            crest[i, j] = True
    for j in range(nj):
        i = int(np.argmax(values[:, j]))
        if ni == 1 or 0 < i < ni - 1:
            crest[i, j] = True
    return crest


def extract_ridge(grid: SweepGrid, band: float = 0.1) -> RidgeFit | None:
    """Line lambda0 = a_N g through the origin fitted to the ridge crest.

    Candidate cells are the top ``band`` fraction ranked by value (top decile
    by default).  Of those, only crest cells (the maximum of their row or
    column, away from the grid edge) enter the fit, since the raw band is
    lopsided toward shallow rays on a square grid.  Falls back to the whole
    band when no crest cell qualifies.  Returns None for a grid with no
    backflow anywhere.
    """
    values = np.where(np.isfinite(grid.values), grid.values, 0.0)
    if not np.any(values > BLP_FLOOR):
        return None
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    lam, g = np.meshgrid(grid.lambda0_values, grid.g_values, indexing="ij")
    n_keep = max(1, int(np.ceil(band * values.size)))
    order = np.argsort(-values, axis=None, kind="stable")[:n_keep]
    top = np.zeros(values.size, dtype=bool)
    top[order] = True
    top = top.reshape(values.shape) & (values > BLP_FLOOR)
    keep = top & _crest(values)
    if not keep.any():
        keep = top
    x, y = g[keep], lam[keep]
    if not np.dot(x, x) > 0:
        raise ValueError("ridge cells all sit at g = 0; cannot fit a ratio")
    a_n = float(np.dot(x, y) / np.dot(x, x))
    residual = float(np.sqrt(np.mean((y - a_n * x) ** 2)))
    return RidgeFit(
        a_n=a_n,
        n_max=float(values[i, j]),
        peak_cell=(float(grid.lambda0_values[i]), float(grid.g_values[j])),
        fit_points=np.column_stack([y, x]),
        residual=residual,
    )


def loglog_fit(x, y):
    """Slope and intercept of log y against log x; None for fewer than two points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return None, None
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def tr_scan(
    n_units: int,
    a_n: float,
    lambda0_values,
    base: ModelParams | None = None,
    cfg: IntegratorConfig | None = None,
    grid_step: float = DEFAULT_SWEEP_STEP,
    restrict_phi: bool = True,
) -> TrScan:
    """Backflow onset along the ridge g = lambda0 / a_N."""
    if not a_n > 0:
        raise ValueError(f"ridge ratio must be > 0, got {a_n!r}")
    base = (base or ModelParams(lambda0=0.0, g=0.0, n_units=n_units)).replace(n_units=n_units)
    points, skipped = [], []
    for lam in np.atleast_1d(np.asarray(lambda0_values, dtype=float)):
        g = lam / a_n
        res = blp_measure(base.replace(lambda0=lam, g=g), cfg, grid_step=grid_step, restrict_phi=restrict_phi, with_trace=False)
        if res.t_r is None:
            skipped.append(float(lam))
        else:
            points.append((float(lam), float(g), float(res.t_r)))
    if points:
        slope, intercept = loglog_fit([p[0] for p in points], [p[2] for p in points])
    else:
        slope = intercept = None
    return TrScan(n_units, float(a_n), tuple(points), tuple(skipped), slope, intercept)


def synthetic_ridge_grid(ratio: float, lambda0_values=None, g_values=None, n_units: int = 0) -> SweepGrid:
    """Grid filled with exp(-(lambda0/g - ratio)**2): a ridge of known slope."""
    lam = default_axis() if lambda0_values is None else np.asarray(lambda0_values, dtype=float)
    g = default_axis() if g_values is None else np.asarray(g_values, dtype=float)
    values = np.exp(-((lam[:, None] / g[None, :] - ratio) ** 2))
    nan = np.full(values.shape, np.nan)
    return SweepGrid(lam, g, n_units, values, nan, nan.copy())


def markov_flips(grids: dict) -> list:
    """Cells that are Markovian at a smaller N and non-Markovian at a larger one.

    ``grids`` maps N to :class:`SweepGrid` sharing the same axes.  Returns
    ``(lambda0, g, N1, N2, value1, value2)`` tuples.
    """
    sizes = sorted(grids)
    first = grids[sizes[0]]
    for n in sizes[1:]:
        if not (
            np.array_equal(grids[n].lambda0_values, first.lambda0_values)
            and np.array_equal(grids[n].g_values, first.g_values)
        ):
            raise ValueError("grids must share their axes")
    out = []
    for i, j, lam, g in first.cells():
        for a, n1 in enumerate(sizes):
            for n2 in sizes[a + 1 :]:
                v1, v2 = grids[n1].values[i, j], grids[n2].values[i, j]
                if v1 < MARKOVIAN and v2 > NON_MARKOVIAN:
                    out.append((lam, g, n1, n2, float(v1), float(v2)))
    return out


def non_monotone_triples(grids: dict) -> list:
    """Cells with N1 < N2 < N3 where the value dips at N2 and recovers at N3."""
    sizes = sorted(grids)
    first = grids[sizes[0]]
    out = []
    for i, j, lam, g in first.cells():
        v = [grids[n].values[i, j] for n in sizes]
        for a in range(len(sizes)):
            for b in range(a + 1, len(sizes)):
                for c in range(b + 1, len(sizes)):
                    if v[a] > v[b] < v[c]:
                        out.append((lam, g, sizes[a], sizes[b], sizes[c]))
    return out
