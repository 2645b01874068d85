"""Hybrid-pressure face-centred finite volume method for 2D steady
incompressible flows (Stokes and Navier-Stokes)."""

__version__ = "0.1.0"

from .mesh import (
    BoundaryKind,
    CellType,
    Mesh,
    characteristic_size,
    distort,
    generate_annulus,
    generate_structured_quads,
    generate_structured_tris,
    read_mesh,
    tag_boundaries,
    validate_compatibility,
    write_mesh,
)
from .stabilization import (
    PressureConstraint,
    RiemannSolver,
    SolverConfig,
    load_config,
    tau_convective,
    tau_diffusive,
    tau_total,
)
from .cases import (
    CaseDefinition,
    case_by_name,
    cavity,
    couette,
    graded_cavity_mesh,
    mesh_for_case,
    synthetic_stokes,
)
from .stokes import (
    SparseSystem,
    append_zero_mean_constraint,
    assemble_stokes,
    dump_matrix,
    recover_stokes_cells,
    solve_linear,
    spectrum,
)
from .ns import Residuals, SolutionState
from .newton import (
    InitialGuess,
    NewtonReport,
    initial_guess,
    newton_solve,
    solve_stokes_case,
)
from .postprocess import (
    ConvergenceReport,
    cell_mass_flux,
    centreline_profiles,
    convergence_study,
    l2_error_cells,
    l2_error_faces,
    masked_l2_error,
    profile_rms_difference,
    tau_p_sweep,
    write_vtk,
)

__all__ = [name for name in dir() if not name.startswith("_")]
