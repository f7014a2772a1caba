"""Structure determination from rotational spectroscopy.

Recovers all-atom 3D structures from a molecular formula, principal planar
moments of inertia, and unsigned isotopic-substitution coordinates: exact
spectroscopic math, a reflection-equivariant diffusion model at desk scale,
a genetic-algorithm baseline, and an evaluation harness.
"""

from .geom import (
    ComNotZero,
    DegenerateTop,
    Molecule,
    NotSymmetric,
    PasAlignment,
    PlanarMoments,
    align_to_pas,
    inertia_matrix,
    planar_dyadic,
    sym_eig3,
    weighted_com,
)
from .kraitchman import (
    DegenerateParent,
    DropoutConfig,
    IsotopologueObservation,
    NonPhysicalMoments,
    NonPositiveMass,
    RotationalConstants,
    SubstitutionTable,
    build_substitution_table,
    constants_to_planar_moments,
    kraitchman_coordinates,
    planar_moments_to_constants,
    simulate_isotopologue,
)
from .subspace import MassWeights, project_zero_com, sample_projected_gaussian
from .diffusion import (
    NoiseSchedule,
    PerSampleNoise,
    TOutOfRange,
    UnknownKind,
    corrupt,
    make_schedule,
    posterior_params,
    sample,
    training_loss,
    x_hat_from_eps,
)
from .denoiser import (
    FeatureScaling,
    ModelConfig,
    NonFiniteActivation,
    ShapeMismatch,
    build_conditioning,
    denoise_eps,
    distance_features,
    eq_block,
    grad_loss,
    init_params,
    parameter_count,
)
from .ga import (
    Candidate,
    DistanceHistogram,
    Framework,
    GaConfig,
    GaInstance,
    brute_force_signs,
    build_histogram,
    decorate_hydrogens,
    evolve,
    fitness,
)
from .evaluate import (
    BondGraph,
    ElementMismatch,
    Infeasible,
    MatchReport,
    connectivity_correct,
    hungarian,
    min_rmsd_over_reflections,
    perceive_bonds,
    rank_by_deviation,
)
from .train import TrainConfig, TrainerState, train

__version__ = "0.1.0"
