"""Simulation of repeated Gaussian flux measurements on a particle in a double well."""
from .errors import (AccuracyWarning, AmbiguousMaximumWarning, ConfigError, ContractViolation,
                     DegenerateError, FluxMeasError, ImpossibleConditionError,
                     OrthogonalTrialError, OutOfDomainError, SolverFailure, StagnationWarning,
                     StepSizeError, TruncationWarning, UnderflowWarning)
from .measurement import (CollapseKernel, Measure, QuantumState, SequenceSpec, SignMeasure,
                          apply_collapse, collapse_matrix, free_evolve, gaussian_packet,
                          run_sequence, transfer_matrix)
from .oracle import GridState, fidelity, grid_collapse, oracle_check, split_step_propagate
from .spectral import (DeltaBarrierWell, EigenBasis, Grid, QuarticDoubleWell, build_basis,
                       characteristic_time, evaluate_potential, relax_eigenstate,
                       relaxed_levels, solve_delta_well, solve_on_grid, wkb_levels)
from .statistics import (CorrelationTable, MixedState, OutcomeDensity, UncertaintyCurve,
                         asymptotic_uncertainty, conditional_uncertainty,
                         correlation_probability, effective_uncertainty, lg_correlator,
                         most_probable_outcome, outcome_density, scan_barrier,
                         scan_quiescent)

__version__ = "0.1.0"
