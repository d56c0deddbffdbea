"""Independent reference computations used by ``selftest`` and the tests.

None of these touch the compiled integrator.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .core import DIFFERENCE, FemeState, ModelParams, thermal_weights


def full_space_trace_distance(diff: FemeState) -> float:
    """Half trace norm of sum_n diff(n) (x) sigma_c(E_n) on the full 2 * 2**N space.

    Every calorimeter microstate is built explicitly, so keep N small.
    """
    n_units = diff.n_units
    dim_c = 2**n_units
    excitations = np.array([bin(k).count("1") for k in range(dim_c)])
    shell_size = np.bincount(excitations, minlength=n_units + 1)
    total = np.zeros((2 * dim_c, 2 * dim_c), dtype=complex)
    for n in range(n_units + 1):
        sigma_c = np.diag((excitations == n) / shell_size[n])
        total += np.kron(diff.block(n).matrix(), sigma_c)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(total)).sum())


def random_difference_state(rng: np.random.Generator, n_units: int) -> FemeState:
    """Random traceless Hermitian blocks (total trace exactly zero)."""
    blocks = rng.normal(size=(n_units + 1, 4))
    shift = blocks[:, :2].sum() / (2 * (n_units + 1))
    blocks[:, :2] -= shift
    return FemeState(blocks, mode=DIFFERENCE)


def undriven_generator(params: ModelParams) -> np.ndarray:
    """Birth-death generator of the undriven populations.

    State index ``2 n + q`` with q = 0 (ground) or 1 (excited).  Decay moves
    (n, 1) -> (n + 1, 0) at g (1 - n/N); absorption moves (n, 0) -> (n - 1, 1)
    at g n / N.
    """
    n_units, g = params.n_units, params.g
    size = 2 * (n_units + 1)
    gen = np.zeros((size, size))
    for n in range(n_units + 1):
        down = g * (n_units - n) / n_units
        up = g * n / n_units
        if n < n_units:
            gen[2 * (n + 1), 2 * n + 1] += down
            gen[2 * n + 1, 2 * n + 1] -= down
        if n > 0:
            gen[2 * (n - 1) + 1, 2 * n] += up
            gen[2 * n, 2 * n] -= up
    return gen


def undriven_populations(params: ModelParams, excited: float, times) -> np.ndarray:
    """Qubit excited-state probability over time without drive.

    Starts from p_n (thermal) times diag(1 - excited, excited) and applies
    the matrix exponential of :func:`undriven_generator`.
    """
    p = thermal_weights(params)
    x0 = np.zeros(2 * (params.n_units + 1))
    x0[0::2] = p * (1 - excited)
    x0[1::2] = p * excited
    gen = undriven_generator(params)
    out = []
    for t in np.atleast_1d(times):
        out.append((expm(gen * t) @ x0)[1::2].sum())
    return np.array(out)
