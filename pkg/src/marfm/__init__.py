"""Inverse source reconstruction for the Helmholtz equation with random features,
adaptive quadrature and morphology-enhanced bases."""

from .assembly import MeasurementPoint, WavenumberSet, assemble_operator, assemble_rhs, predict
from .basis import BasisSet, build_random_set, sample_morphology
from .experiment import ConfigError, report, run_experiment, sweep, validate_config
from .pipeline import (IAConfig, MAConfig, Problem, SourceModel, detect_regions, estimate_shape,
                       eval_grid, l2_relative_error, run_ia_rfm, run_ma_rfm)
from .solver import lcurve_select, solve_tikhonov, stability_bound

__version__ = "0.1.0"
