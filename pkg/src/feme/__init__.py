"""Driven qubit coupled to a finite calorimeter of N two-level systems.

Conditional-block master equation dynamics, qubit and composite trace
distances, the BLP information-backflow measure and parameter sweeps.
"""

from .core import (
    BlochPair,
    ContractError,
    FemeState,
    ModelParams,
    NumericalError,
    QubitBlock,
    build_difference_state,
    build_state,
    rate_down,
    rate_up,
    thermal_weights,
)
from .dynamics import (
    IntegratorConfig,
    TrajectoryRecord,
    analytic_undriven_distance,
    feme_rhs,
    integrate,
    reduce_state,
)
from .measures import (
    BlpResult,
    DistanceTrace,
    backflow_onset,
    blp_from_trace,
    blp_measure,
    distance_trace,
    external_distance,
    internal_distance,
)
from .sweep import RidgeFit, SweepGrid, TrScan, extract_ridge, run_sweep, tr_scan

__version__ = "0.1.0"
