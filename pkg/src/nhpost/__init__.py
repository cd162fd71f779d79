"""Postselection gadgets, unitary dilations and trajectory simulation for non-Hermitian dynamics."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    BrokenPhaseError,
    ConfigError,
    DimensionError,
    NHPostError,
    NotDiagonalizableError,
    NumericalError,
    PreconditionError,
    WellFormednessError,
)
from .linalg import (
    biorthogonal_spectrum,
    distance_to_unitary,
    matrix_exp,
    normalized_singular_radius,
    polar_decompose,
    svd,
)
from .hamiltonian import (
    check_gamma_indefinite,
    find_metric,
    pt_canonical_2x2,
    pt_hamiltonian,
    similarity_factors,
    split_parts,
)
from .circuit import CircuitProgram, DensityState, PureState, conditional_probability, run
from .gadgets import build_diag_gadget, build_pt_gadget, build_svd_gadget, verify_gadget
from .purification import dilate_circuit, matchgate_dilation, polar_dilation, two_meter_pt_dilation
from .trajectories import TrajectoryModel, assemble, sample_trajectory, step_kraus, unconditional_step
from .stabilizer import PauliString, StabilizerTableau, effective_conjugation, postselected_marginal, run_postselected_clifford
from .conditioning import conditional_estimate, error_budget

__all__ = [
    "__version__",
    "BrokenPhaseError",
    "ConfigError",
    "DimensionError",
    "NHPostError",
    "NotDiagonalizableError",
    "NumericalError",
    "PreconditionError",
    "WellFormednessError",
    "biorthogonal_spectrum",
    "distance_to_unitary",
    "matrix_exp",
    "normalized_singular_radius",
    "polar_decompose",
    "svd",
    "check_gamma_indefinite",
    "find_metric",
    "pt_canonical_2x2",
    "pt_hamiltonian",
    "similarity_factors",
    "split_parts",
    "CircuitProgram",
    "DensityState",
    "PureState",
    "conditional_probability",
    "run",
    "build_diag_gadget",
    "build_pt_gadget",
    "build_svd_gadget",
    "verify_gadget",
    "dilate_circuit",
    "matchgate_dilation",
    "polar_dilation",
    "two_meter_pt_dilation",
    "TrajectoryModel",
    "assemble",
    "sample_trajectory",
    "step_kraus",
    "unconditional_step",
    "PauliString",
    "StabilizerTableau",
    "effective_conjugation",
    "postselected_marginal",
    "run_postselected_clifford",
    "conditional_estimate",
    "error_budget",
]
