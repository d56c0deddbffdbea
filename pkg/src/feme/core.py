"""Model parameters, conditional qubit blocks and initial conditions.

Units are natural: hbar = 1 and, unless ``omega0`` is changed, omega0 = 1, so
``lambda0``, ``g`` and ``1/beta`` are all measured in units of the qubit gap
and times in units of ``1/omega0``.

A state of the qubit + calorimeter composite is stored as an ``(N + 1, 4)``
float array: row ``n`` holds ``(s00, s11, Re s01, Im s01)`` of the
unnormalized block sigma(n, t).  ``s10`` is never stored; it is the complex
conjugate of ``s01``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

STATE = "state"
DIFFERENCE = "difference"

#: tolerance for conservation laws over long integrations
CONSERVATION_TOL = 1e-9
#: tolerance for algebraic identities
ALGEBRAIC_TOL = 1e-12


class ContractError(ValueError):
    """An input violates a documented precondition (mode, tracelessness, ...)."""


class NumericalError(RuntimeError):
    """Integration produced non-finite numbers."""


@dataclass(frozen=True)
class ModelParams:
    lambda0: float
    g: float
    n_units: int
    beta: float = 2.0
    omega0: float = 1.0

    def __post_init__(self):
        bad = []
        if not self.lambda0 >= 0:
            bad.append(f"lambda0={self.lambda0!r} (need >= 0)")
        if not self.g >= 0:
            bad.append(f"g={self.g!r} (need >= 0)")
        if not self.beta > 0:
            bad.append(f"beta={self.beta!r} (need > 0)")
        if not self.omega0 > 0 or not np.isfinite(self.omega0):
            bad.append(f"omega0={self.omega0!r} (need finite > 0)")
        if isinstance(self.n_units, bool) or int(self.n_units) != self.n_units or self.n_units < 1:
            bad.append(f"n_units={self.n_units!r} (need integer >= 1)")
        if bad:
            raise ValueError("invalid model parameters: " + ", ".join(bad))
        object.__setattr__(self, "n_units", int(self.n_units))

    def replace(self, **changes) -> "ModelParams":
        values = {k: getattr(self, k) for k in ("lambda0", "g", "n_units", "beta", "omega0")}
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True)
class QubitBlock:
    s00: float
    s11: float
    s01: complex

    @property
    def s10(self) -> complex:
        return complex(self.s01).conjugate()

    @property
    def trace(self) -> float:
        return self.s00 + self.s11

    def matrix(self) -> np.ndarray:
        return np.array([[self.s00, self.s01], [self.s10, self.s11]], dtype=complex)

    def half_trace_norm(self) -> float:
        return float(_half_trace_norm(np.array([[self.s00, self.s11, self.s01.real, self.s01.imag]]))[0])

    def is_positive(self, tol: float = CONSERVATION_TOL) -> bool:
        mean = 0.5 * (self.s00 + self.s11)
        radius = np.hypot(0.5 * (self.s00 - self.s11), abs(self.s01))
        return self.s00 >= -tol and self.s11 >= -tol and mean - radius >= -tol


def _half_trace_norm(blocks: np.ndarray) -> np.ndarray:
    # eigenvalues of a Hermitian 2x2 block are mean +- radius, so
    # (|l+| + |l-|) / 2 = max(|mean|, radius)
    mean = 0.5 * (blocks[..., 0] + blocks[..., 1])
    radius = np.sqrt((0.5 * (blocks[..., 0] - blocks[..., 1])) ** 2 + blocks[..., 2] ** 2 + blocks[..., 3] ** 2)
    return np.maximum(np.abs(mean), radius)


@dataclass(frozen=True)
class FemeState:
    """Blocks sigma(n, t) for n = 0..N at a given time.

    ``mode`` is ``"state"`` for a physical state (total trace 1) or
    ``"difference"`` for the difference of two states (total trace 0).
    """

    blocks: np.ndarray
    time: float = 0.0
    mode: str = STATE
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.blocks, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4 or arr.shape[0] < 1:
            raise ValueError(f"blocks must have shape (N + 1, 4), got {arr.shape}")
        if self.mode not in (STATE, DIFFERENCE):
            raise ValueError(f"mode must be {STATE!r} or {DIFFERENCE!r}, got {self.mode!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "blocks", arr)
        if self.check:
            expected = 1.0 if self.mode == STATE else 0.0
            if abs(self.total_trace - expected) > CONSERVATION_TOL:
                raise ContractError(
                    f"{self.mode} mode needs total trace {expected}, got {self.total_trace!r}"
                )

    @classmethod
    def from_blocks(cls, blocks, time: float = 0.0, mode: str = STATE) -> "FemeState":
        """Build from a sequence of :class:`QubitBlock` or 2x2 matrices."""
        rows = []
        for b in blocks:
            if isinstance(b, QubitBlock):
                rows.append((b.s00, b.s11, complex(b.s01).real, complex(b.s01).imag))
            else:
                m = np.asarray(b, dtype=complex)
                rows.append((m[0, 0].real, m[1, 1].real, m[0, 1].real, m[0, 1].imag))
        return cls(np.array(rows), time=time, mode=mode)

    @property
    def n_units(self) -> int:
        return self.blocks.shape[0] - 1

    def __len__(self) -> int:
        return self.blocks.shape[0]

    def block(self, n: int) -> QubitBlock:
        s00, s11, re, im = self.blocks[n]
        return QubitBlock(float(s00), float(s11), complex(re, im))

    @property
    def total_trace(self) -> float:
        return float(self.blocks[:, 0].sum() + self.blocks[:, 1].sum())

    def populations(self) -> np.ndarray:
        """Calorimeter level probabilities p_n(t) = tr sigma(n, t)."""
        return self.blocks[:, 0] + self.blocks[:, 1]


@dataclass(frozen=True)
class BlochPair:
    """Orthogonal pure pair whose difference has Bloch direction (theta, phi)."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        for name in ("theta", "phi"):
            value = getattr(self, name)
            if not 0.0 <= value < np.pi:
                raise ValueError(f"{name} must lie in [0, pi), got {value!r}")

    def difference_matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        e = np.exp(1j * self.phi)
        return np.array([[c, e * s], [np.conj(e) * s, -c]])


def _check_level(params: ModelParams, n: int) -> None:
    if not 0 <= n <= params.n_units:
        raise ValueError(f"level index n={n} outside [0, {params.n_units}]")


def rate_down(params: ModelParams, n: int) -> float:
    """Qubit emission rate g (1 - n/N) with the calorimeter at level n."""
    _check_level(params, n)
    return params.g * (params.n_units - n) / params.n_units


def rate_up(params: ModelParams, n: int) -> float:
    """Qubit absorption rate g n / N with the calorimeter at level n."""
    _check_level(params, n)
    return params.g * n / params.n_units


def thermal_weights(params: ModelParams) -> np.ndarray:
    """Canonical probabilities of the calorimeter energy levels E_n = n omega0.

    Computed in log space with Z = (1 + exp(-beta omega0))**N.
    """
    n_units = params.n_units
    n = np.arange(n_units + 1)
    x = params.beta * params.omega0
    log_binom = gammaln(n_units + 1) - gammaln(n + 1) - gammaln(n_units - n + 1)
    with np.errstate(invalid="ignore", over="ignore"):
        boltzmann = np.where(n == 0, 0.0, -x * n)
        log_z = n_units * np.log1p(np.exp(-x))
        weights = np.exp(log_binom + boltzmann - log_z)
    if not np.all(np.isfinite(weights)):
        raise NumericalError(f"non-finite thermal weights for N={n_units}, beta*omega0={x}")
    return weights


def build_difference_state(pair: BlochPair, params: ModelParams) -> FemeState:
    """Thermal calorimeter times the difference of an orthogonal pure pair."""
    return build_state(pair.difference_matrix(), params, mode=DIFFERENCE)


def build_state(rho0, params: ModelParams, mode: str = STATE) -> FemeState:
    """Product initial condition sigma(n, 0) = p_n rho0 with thermal p_n."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (2, 2):
        raise ValueError(f"rho0 must be 2x2, got {rho0.shape}")
    if abs(rho0[1, 0] - np.conj(rho0[0, 1])) > ALGEBRAIC_TOL:
        raise ContractError("rho0 must be Hermitian")
    p = thermal_weights(params)
    row = np.array([rho0[0, 0].real, rho0[1, 1].real, rho0[0, 1].real, rho0[0, 1].imag])
    return FemeState(p[:, None] * row[None, :], time=0.0, mode=mode)


def basis_blocks(params: ModelParams, n_basis: int = 3) -> np.ndarray:
    """Initial blocks for diag(1, -1), sigma_x and sigma_y differences.

    Any Bloch difference is cos(theta) * B0 + sin(theta) cos(phi) * B1 +
    sin(theta) sin(phi) * B2, so by linearity these span every pair.
    """
    p = thermal_weights(params)
    out = np.zeros((3, params.n_units + 1, 4))
    out[0, :, 0] = p
    out[0, :, 1] = -p
    out[1, :, 2] = p
    out[2, :, 3] = p
    return out[:n_basis]


def basis_coefficients(theta, phi=0.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = np.sin(theta)
    return np.stack(np.broadcast_arrays(np.cos(theta), s * np.cos(phi), s * np.sin(phi)), axis=-1)
