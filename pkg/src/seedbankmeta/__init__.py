"""Seed-bank metapopulation simulator with block-occupancy coupling and an
oriented-percolation threshold estimator."""

from ._kernels import BACKEND_ENV, NUMBA_AVAILABLE, backend_name
from .core import (Params, derive_run_seed, floor_gm, k_from_alpha,
                   validate_params)
from .errors import (BudgetExceededError, CouplingViolationError,
                     DegenerateKError, MissingPreviousError,
                     OccupancySpecError, RangeError, ScanExhaustedError,
                     WindowMismatchError)
from .experiments import (ExperimentSpec, run_convergence, run_invasion,
                          run_offspring_test, run_threshold_curve)
from .occupancy import (CoupledRun, DeviationReport, OccupancyState, boa_step,
                        coupled_run, derive_occupancy,
                        state_from_occupancy_profile)
from .percolation import (PercConfig, desk_config, exact_survival_small,
                          pcrit_scan, rbar)
from .wfsb import (SeedBankState, all_ghost_state, make_block_state,
                   simulate_generations, wfsb_step)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_ENV", "NUMBA_AVAILABLE", "backend_name",
    "Params", "derive_run_seed", "floor_gm", "k_from_alpha",
    "validate_params",
    "RangeError", "DegenerateKError", "WindowMismatchError",
    "MissingPreviousError", "CouplingViolationError", "OccupancySpecError",
    "ScanExhaustedError", "BudgetExceededError",
    "SeedBankState", "all_ghost_state", "make_block_state", "wfsb_step",
    "simulate_generations",
    "OccupancyState", "derive_occupancy", "boa_step", "coupled_run",
    "CoupledRun", "DeviationReport", "state_from_occupancy_profile",
    "PercConfig", "desk_config", "rbar", "pcrit_scan",
    "exact_survival_small",
    "ExperimentSpec", "run_invasion", "run_convergence",
    "run_threshold_curve", "run_offspring_test",
    "__version__",
]
