"""Discrete Hartree-Fock mean-field solver for disordered lattice fermions.

The package builds tight-binding Hamiltonians with a staggered periodic
potential and on-site disorder, solves the self-consistent projector
equation by fixed-point or optimal-damping iteration, and provides seeded
experiment recipes for convergence, locality, eigenvalue-counting and
localisation statistics, plus box diagnostics for multiscale analysis.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EigenvalueAtMu,
    GapTooSmall,
    HfaError,
    MaxIterExceeded,
    NoGap,
    ResolventSingular,
    ResonantBox,
)
from .model import (
    HamiltonianMatrix,
    InteractionKernel,
    LatticeBox,
    PotentialField,
    build_hamiltonian,
    derived_seed,
    effective_interaction,
    hf_energy,
    interaction_kernel_nnn,
    kernel_matrix,
)
from .spectral import (
    DecayFit,
    DensityMatrix,
    GapReport,
    combes_thomas_probe,
    eig_symmetric,
    find_gap,
    operator_norm,
    spectral_projector,
)
from .scf import (
    ScfConfig,
    ScfResult,
    SolverTrace,
    VerificationReport,
    contraction_bound,
    fixed_point_map,
    solve,
    solve_fixed_point,
    solve_oda,
    verify_solution,
)
from .multiscale import (
    Box,
    border_operator,
    calibrate_truncation_decay,
    decompose,
    geometric_resolvent_residual,
    good_box_check,
    good_box_probability,
    hatted_hamiltonian,
    is_resonant,
    restrict,
)
from .experiments import (
    ExperimentSpec,
    ResultTable,
    convergence_experiment,
    gap_closing_experiment,
    localisation_experiment,
    locality_experiment,
    multiscale_probe,
    periodic_sweep,
    verify_experiment,
    wegner_experiment,
)
