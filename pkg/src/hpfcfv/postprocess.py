"""Error norms, conservation audits, convergence studies and field export."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ._celldata import build_cell_face_data, evaluate_case_data
from .cases import CaseDefinition
from .mesh import BoundaryKind, Mesh, characteristic_size
from .newton import NewtonReport, newton_solve, solve_stokes_case
from .ns import SolutionState, face_velocity
from .stabilization import SolverConfig
from .voigt import FROBENIUS_WEIGHTS

logger = logging.getLogger(__name__)


def _weighted_rel_error(weights, diff_sq, exact_sq):
    num = float(np.sqrt(np.sum(weights * diff_sq)))
    den = float(np.sqrt(np.sum(weights * exact_sq)))
    if den == 0.0:
        logger.warning("zero exact norm; returning absolute error")
        return num
    return num / den


def l2_error_cells(
    mesh: Mesh,
    values: np.ndarray,
    exact: Callable[[np.ndarray], np.ndarray],
    voigt_tensor: bool = False,
) -> float:
    """Relative cell L2 error with one-point (centroid) quadrature.

    Voigt-packed tensors are compared with the off-diagonal component
    weighted twice (Frobenius-consistent).
    """
    ex = np.asarray(exact(mesh.centroids), dtype=float)
    values = np.asarray(values, dtype=float)
    diff_sq = (values - ex) ** 2
    ex_sq = ex**2
    if values.ndim == 1:
        diff_sq = diff_sq[:, None]
        ex_sq = ex_sq[:, None]
    comp_w = FROBENIUS_WEIGHTS if voigt_tensor else np.ones(diff_sq.shape[1])
    w = mesh.areas[:, None] * comp_w[None, :]
    return _weighted_rel_error(w, diff_sq, ex_sq)


def l2_error_faces(
    mesh: Mesh,
    values: np.ndarray,
    exact: Callable[[np.ndarray], np.ndarray],
    face_indices: Optional[np.ndarray] = None,
) -> float:
    """Relative face L2 error (barycentre evaluation, |face| weights)."""
    if face_indices is None:
        face_indices = np.arange(mesh.n_faces)
    bary = mesh.faces.barycentre[face_indices]
    ex = np.asarray(exact(bary), dtype=float)
    values = np.asarray(values, dtype=float)
    diff_sq = (values - ex) ** 2
    ex_sq = ex**2
    if values.ndim == 1:
        diff_sq = diff_sq[:, None]
        ex_sq = ex_sq[:, None]
    w = mesh.faces.measure[face_indices][:, None]
    return _weighted_rel_error(w, diff_sq, ex_sq)


def masked_l2_error(
    mesh: Mesh,
    values: np.ndarray,
    exact: Callable[[np.ndarray], np.ndarray],
    excluded_boxes: Sequence[tuple[float, float, float, float]] = (),
    voigt_tensor: bool = False,
) -> float:
    """l2_error_cells skipping cells whose centroid lies in an excluded
    box (x0, x1, y0, y1)."""
    keep = np.ones(mesh.n_cells, dtype=bool)
    cx, cy = mesh.centroids[:, 0], mesh.centroids[:, 1]
    for x0, x1, y0, y1 in excluded_boxes:
        keep &= ~((cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1))
    if not keep.any():
        raise ValueError("exclusion boxes cover every cell")
    sub_values = np.asarray(values)[keep]
    ex = np.asarray(exact(mesh.centroids[keep]), dtype=float)
    diff_sq = (sub_values - ex) ** 2
    ex_sq = ex**2
    if sub_values.ndim == 1:
        diff_sq = diff_sq[:, None]
        ex_sq = ex_sq[:, None]
    comp_w = FROBENIUS_WEIGHTS if voigt_tensor else np.ones(diff_sq.shape[1])
    w = mesh.areas[keep][:, None] * comp_w[None, :]
    return _weighted_rel_error(w, diff_sq, ex_sq)


def cell_mass_flux(mesh: Mesh, case: CaseDefinition, state: SolutionState):
    """Per-cell mass flux J_e from hybrid/Dirichlet velocities.

    Returns (J, max|J|, sum J). J_e vanishes for the exact solution; it
    measures the local compressibility error of the weak mass enforcement.
    """
    data = build_cell_face_data(mesh)
    cased = evaluate_case_data(data, case)
    v = face_velocity(data, cased, state)
    vn = np.einsum("efj,efj->ef", v, data.normal)
    J = (data.gamma * vn).sum(axis=1)
    return J, float(np.abs(J).max()), float(J.sum())


@dataclass
class LevelRecord:
    level: int
    h: float
    err_u: float
    err_uhat: float
    err_p: float
    err_phat: float
    err_stress: float
    max_Je: float
    sum_Je: float
    newton_iterations: int = 0
    report: Optional[NewtonReport] = None


@dataclass
class ConvergenceReport:
    records: list[LevelRecord] = field(default_factory=list)

    def rates(self, attr: str) -> list[float]:
        """Observed order between consecutive levels:
        log(e_i/e_{i+1}) / log(h_i/h_{i+1})."""
        out = []
        for a, b in zip(self.records, self.records[1:]):
            ea, eb = getattr(a, attr), getattr(b, attr)
            out.append(float(np.log(ea / eb) / np.log(a.h / b.h)))
        return out

    def write_csv(self, path: str | Path) -> None:
        header = (
            "level,h,err_u,err_uhat,err_p,err_phat,err_L,"
            "rate_u,rate_p,rate_L,maxJe,sumJe"
        )
        ru = [float("nan")] + self.rates("err_u")
        rp = [float("nan")] + self.rates("err_p")
        rl = [float("nan")] + self.rates("err_stress")
        lines = [header]
        for k, r in enumerate(self.records):
            lines.append(
                f"{r.level},{r.h:.17g},{r.err_u:.17g},{r.err_uhat:.17g},"
                f"{r.err_p:.17g},{r.err_phat:.17g},{r.err_stress:.17g},"
                f"{ru[k]:.17g},{rp[k]:.17g},{rl[k]:.17g},"
                f"{r.max_Je:.17g},{r.sum_Je:.17g}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def solve_case_on_mesh(
    mesh: Mesh,
    config: SolverConfig,
    case: CaseDefinition,
    tau_p_faces=None,
) -> tuple[SolutionState, Optional[NewtonReport]]:
    """Stokes path for linear cases, Newton otherwise."""
    if case.convection:
        state, report = newton_solve(mesh, config, case, tau_p_faces=tau_p_faces)
        if not report.converged:
            raise RuntimeError(
                f"Newton did not converge on {case.name}: "
                f"residuals {report.residual_norms[-3:]}"
            )
        return state, report
    return solve_stokes_case(mesh, config, case, tau_p_faces), None


def measure_errors(
    mesh: Mesh,
    case: CaseDefinition,
    state: SolutionState,
    level: int = 0,
    report: Optional[NewtonReport] = None,
) -> LevelRecord:
    """Fill one convergence-report row for a solved level."""
    data = build_cell_face_data(mesh)
    free = np.flatnonzero(data.dofmap.uhat_rank >= 0)
    err_u = l2_error_cells(mesh, state.u, case.exact_velocity)
    err_uhat = l2_error_faces(mesh, state.uhat, case.exact_velocity, free)
    err_p = l2_error_cells(mesh, state.p, case.exact_pressure)
    err_phat = l2_error_faces(mesh, state.phat, case.exact_pressure)
    stress = -case.nu * state.L
    err_stress = l2_error_cells(mesh, stress, case.exact_stress, voigt_tensor=True)
    _, max_je, sum_je = cell_mass_flux(mesh, case, state)
    return LevelRecord(
        level=level,
        h=characteristic_size(mesh),
        err_u=err_u,
        err_uhat=err_uhat,
        err_p=err_p,
        err_phat=err_phat,
        err_stress=err_stress,
        max_Je=max_je,
        sum_Je=sum_je,
        newton_iterations=report.iterations if report else 0,
        report=report,
    )


def convergence_study(
    case: CaseDefinition,
    mesh_builder: Callable[[int], Mesh],
    levels: Sequence[int],
    config: SolverConfig,
) -> ConvergenceReport:
    """Solve a mesh family and report errors, rates and mass-flux audits."""
    if len(levels) < 2:
        raise ValueError("need at least two levels for a convergence study")
    out = ConvergenceReport()
    for level in levels:
        mesh = mesh_builder(level)
        try:
            state, report = solve_case_on_mesh(mesh, config, case)
        except Exception as exc:
            raise RuntimeError(f"level {level} failed: {exc}") from exc
        out.records.append(measure_errors(mesh, case, state, level, report))
        logger.info(
            "level %d: h=%.3e err_u=%.3e err_p=%.3e",
            level,
            out.records[-1].h,
            out.records[-1].err_u,
            out.records[-1].err_p,
        )
    return out


def tau_p_sweep(
    case: CaseDefinition,
    mesh: Mesh,
    tau_p_values: Sequence[float],
    config: SolverConfig,
) -> list[LevelRecord]:
    """Errors and mass-flux maxima across a pressure-stabilization grid."""
    rows = []
    for k, tp in enumerate(tau_p_values):
        cfg = config.with_(tau_p=float(tp))
        state, report = solve_case_on_mesh(mesh, cfg, case)
        rec = measure_errors(mesh, case, state, k, report)
        rec.h = float(tp)  # reuse the abscissa slot for the swept value
        rows.append(rec)
    return rows


def centreline_profiles(mesh: Mesh, state: SolutionState, axis: str = "vertical"):
    """Piecewise-constant samples along a cavity centreline.

    axis="vertical" samples cells nearest x1 = 0.5 ordered by x2 (the u1
    profile); axis="horizontal" samples nearest x2 = 0.5 ordered by x1.
    Returns an array with columns (coord, u1, u2, p).
    """
    if axis not in ("vertical", "horizontal"):
        raise ValueError("axis must be 'vertical' or 'horizontal'")
    along, across = (1, 0) if axis == "vertical" else (0, 1)
    coord = mesh.centroids[:, along]
    dist = np.abs(mesh.centroids[:, across] - 0.5)
    # cluster cells into rows/columns by the along-coordinate
    order = np.lexsort((dist, np.round(coord, 12)))
    coords = np.round(coord[order], 12)
    first = np.ones(order.size, dtype=bool)
    first[1:] = coords[1:] != coords[:-1]
    chosen = order[first]
    out = np.column_stack(
        [
            coord[chosen],
            state.u[chosen, 0],
            state.u[chosen, 1],
            state.p[chosen],
        ]
    )
    return out[np.argsort(out[:, 0])]


def profile_rms_difference(
    profile: np.ndarray,
    reference: np.ndarray,
    column: int,
    scale: float = 1.0,
    excluded_boxes: Sequence[tuple[float, float, float, float]] = (),
    axis: str = "vertical",
) -> float:
    """RMS difference of a profile column against a reference profile
    interpolated onto the coarse coordinates, normalized by `scale`.

    Samples whose 2D position on the centreline falls inside an excluded
    box (x0, x1, y0, y1) are dropped.
    """
    c = profile[:, 0]
    pos = np.column_stack([np.full(c.size, 0.5), c])
    if axis == "horizontal":
        pos = pos[:, ::-1]
    keep = np.ones(c.size, dtype=bool)
    for x0, x1, y0, y1 in excluded_boxes:
        keep &= ~(
            (pos[:, 0] >= x0)
            & (pos[:, 0] <= x1)
            & (pos[:, 1] >= y0)
            & (pos[:, 1] <= y1)
        )
    ref = np.interp(c[keep], reference[:, 0], reference[:, column])
    return float(np.sqrt(np.mean((profile[keep, column] - ref) ** 2)) / scale)


def write_vtk(mesh: Mesh, state: SolutionState, path: str | Path) -> None:
    """Legacy ASCII VTK unstructured grid with CELL_DATA (u, p, L)."""
    lines = [
        "# vtk DataFile Version 3.0",
        "hpfcfv fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    nv = mesh.cells.shape[1]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nv + 1)}")
    lines += [
        f"{nv} " + " ".join(str(int(v)) for v in cell) for cell in mesh.cells
    ]
    vtk_type = 9 if nv == 4 else 5
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(vtk_type)] * mesh.n_cells
    lines.append(f"CELL_DATA {mesh.n_cells}")
    lines.append("VECTORS velocity double")
    lines += [f"{u:.17g} {v:.17g} 0" for u, v in state.u]
    lines.append("SCALARS pressure double")
    lines.append("LOOKUP_TABLE default")
    lines += [f"{p:.17g}" for p in state.p]
    lines.append("FIELD cellfields 1")
    lines.append(f"mixed_variable 3 {mesh.n_cells} double")
    lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in state.L]
    Path(path).write_text("\n".join(lines) + "\n")


def write_csv(rows: Sequence[Sequence], header: Sequence[str], path: str | Path):
    """Plain CSV writer: floats at 17 significant digits (lossless)."""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")
