"""Mixed RT0/P0 finite elements with localized orthogonal decomposition."""

from .errors import (
    AlignmentError,
    AssemblyError,
    ConfigurationError,
    DomainError,
    MixedLODError,
    ParseError,
    RankError,
    SolverFailure,
    SpaceMismatchError,
)
from .mesh import build_hierarchy, build_hierarchy_by_factor, build_structured_mesh, patch
from .lod import (
    CorrectorBasis,
    Discretization,
    choose_k,
    corrector_basis,
    element_corrector,
    solve_multiscale,
    solve_multiscale_corrected,
    solve_reference,
)

__version__ = "0.1.0"
