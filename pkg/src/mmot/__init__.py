"""Entropic multi-marginal optimal transport with Coulomb cost."""

from .analytic_oracles import (
    ComotionMap,
    PiecewisePotential,
    comotion_multi_1d,
    comotion_triangular,
    comotion_uniform_N2,
    potential_from_maps,
    potential_uniform_N2,
    potential_uniform_N3,
)
from .cost import CoulombCostSpec, GibbsKernel, build_kernel, reduced_cost
from .densities import (
    DiscreteDensity,
    Grid1D,
    load_density,
    make_ball,
    make_gaussian,
    make_triangular,
    make_uniform,
    make_uniform_interval,
    quantile,
    save_density,
)
from .estimator import EntropicCoulombTransport
from .exceptions import (
    DensityFormatError,
    DomainError,
    InfeasibleError,
    InvalidParameterError,
    MMOTError,
    SingularIntegrandError,
)
from .radial import RadialProblem, angular_report, radial_comotion_N2, reduce_problem
from .recovery import (
    Potential,
    map_from_plan,
    potential_from_scalings,
    project_pair,
    relative_linf_error,
    sce_energy,
)
from .refine import RefinementConfig, refine_solve, threshold_support
from .solver import (
    SolverConfig,
    TransportPlan,
    bregman_solve,
    entropic_cost,
    ipfp_solve,
    ipfp_solve_sparse,
)

__version__ = "0.1.0"
