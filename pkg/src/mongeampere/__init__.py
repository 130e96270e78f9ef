"""Numerical toolkit for det(D^2 u) = f with periodic positive data.

Solves the torus problem det(A + D^2 v) = f + sigma for the periodic part v
and the ergodic constant, solves Dirichlet problems on convex domains with a
monotone wide-stencil scheme, and provides the estimators that decompose an
entire solution into quadratic, linear, and periodic pieces.
"""

from .alexandrov import NodeMeasure, subdifferential_measure
from .dirichlet import (
    ConvexDomain,
    DirichletOptions,
    DirichletProblem,
    JohnMap,
    box_domain,
    interval,
    john_normalize,
    lattice_for,
    load_domain_csv,
    save_domain_csv,
    section_rescale,
    solve_dirichlet,
    sublevel_set,
)
from .errors import (
    InfeasibleProblem,
    InvalidArgument,
    InvariantViolation,
    MongeAmpereError,
    NonConvergence,
)
from .gridio import file_checksum, read_grid, write_grid
from .lattice import (
    BoxLattice,
    MollifierSpec,
    PeriodicField,
    ProblemBounds,
    ScalarField,
    TorusLattice,
    box_lattice,
    cell_average,
    make_torus,
    mollify,
    normalize_rhs,
    resample,
    second_quotient,
)
from .operator import (
    ConvexGridFunction,
    LinearizedCoeffs,
    certify_convex,
    concavity_gap,
    convexity_defect,
    det_root,
    det_root_grad,
    directional_second_differences,
    linearize,
    ma_operator,
)
from .periodic import (
    PeriodicProblem,
    SolveOptions,
    check_compatibility,
    compare_solutions,
    mollified_continuation,
    residual,
    solve_periodic,
)
from .reports import SolveReport, StructureReport
from .stencils import StencilSet, build_stencil
from .structure import (
    DecayFit,
    DoublingTrace,
    EntireSample,
    LatticeDirectionSet,
    QuadraticPart,
    anchored_copy,
    concavity_residual,
    doubling_trace,
    estimate_a,
    estimate_b,
    fit_decay,
    harnack_ratio,
    periodic_residual,
    quotient_profile,
    reconstruct_entire,
    scaling_profile,
    scaling_rescale,
    synthesize_entire,
)

__version__ = "1.0.0"
