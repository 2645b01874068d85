"""Linear hybrid-pressure Stokes system: assembly, constraint, recovery.

The global system couples hybrid velocities on non-Dirichlet faces with
hybrid pressures on all faces. Cell fields (mixed variable, velocity,
pressure) are condensed out analytically and recovered per cell after the
face solve. Pure-Dirichlet problems are singular up to a constant pressure
shift and require the zero-mean Lagrange constraint row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._celldata import CellFaceData, DofMap, build_cell_face_data, evaluate_case_data
from .mesh import Mesh
from .stabilization import PressureConstraint, SolverConfig, tau_diffusive


@dataclass
class SparseSystem:
    """Assembled sparse system with its unknown numbering.

    nnz counts stored entries: every structurally inserted coefficient is
    kept, including numerically zero ones (never eliminated), so sparsity
    counts are reproducible.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    bordered: bool = False
    aux: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def _tau_p_array(data: CellFaceData, config: SolverConfig, tau_p_faces) -> np.ndarray:
    if tau_p_faces is None:
        return np.full_like(data.gamma, config.tau_p)
    tau_p_faces = np.asarray(tau_p_faces, dtype=float)
    if tau_p_faces.shape != (data.mesh.n_faces,):
        raise ValueError("tau_p_faces must have one value per mesh face")
    return tau_p_faces[data.face_ids]


def _symmetry_rows(data: CellFaceData, kuu, kup, fu):
    """Replace velocity rows of symmetry faces by the tangential-traction
    row and the normal-velocity row."""
    e, i = np.nonzero(data.is_sym)
    if e.size == 0:
        return
    t = data.tangent[e, i]                            # (k,2)
    kuu_t = np.einsum("kb,kjbc->kjc", t, kuu[e, i])   # (k,F,2)
    kuu[e, i] = 0.0
    kuu[e, i, :, 0, :] = kuu_t
    kuu[e, i, i, 1, :] += data.gamma[e, i][:, None] * data.normal[e, i]
    kup_t = np.einsum("kb,kjb->kj", t, kup[e, i])
    kup[e, i] = 0.0
    kup[e, i, :, 0] = kup_t
    fu_t = np.einsum("kb,kb->k", t, fu[e, i])
    fu[e, i] = 0.0
    fu[e, i, 0] = fu_t


def assemble_stokes(
    mesh: Mesh,
    config: SolverConfig,
    case,
    tau_p_faces: Optional[np.ndarray] = None,
) -> SparseSystem:
    """Assemble the condensed Stokes system over [u_hat; p_hat].

    Refuses a pure-Dirichlet problem when no pressure constraint is
    configured (the system would be singular). The returned system is
    unbordered; apply append_zero_mean_constraint afterwards if needed.
    """
    data = build_cell_face_data(mesh)
    dofmap = data.dofmap
    pure_dirichlet = not np.any(~data.is_dir & ~data.is_int)
    if pure_dirichlet and config.pressure_constraint is PressureConstraint.NONE:
        raise ValueError(
            "pure-Dirichlet Stokes problem is singular without a pressure "
            "constraint; configure pressure_constraint=zero_mean"
        )
    cased = evaluate_case_data(data, case)

    nu = config.nu
    gamma = data.gamma
    taud = np.full_like(gamma, tau_diffusive(config))
    taup = _tau_p_array(data, config, tau_p_faces)
    au = (gamma * taud).sum(axis=1)            # (E,)
    ap = (gamma * taup).sum(axis=1)
    inv_area = 1.0 / data.area

    # Dirichlet data contributions (zero arrays elsewhere keep the sums exact)
    ud = np.where(data.is_dir[:, :, None], cased.ud, 0.0)
    f_L = np.einsum("ef,efaj,efj->ea", gamma, data.DN, ud)          # (E,3)
    f_u = data.area[:, None] * cased.s + np.einsum(
        "ef,ef,efj->ej", gamma, taud, ud
    )
    f_p = np.einsum("ef,efj,efj->e", gamma, data.normal, ud)        # (E,)

    gg = gamma[:, :, None] * gamma[:, None, :]                      # (E,F,F)
    ntdn = np.einsum("eiab,ejac->eijbc", data.N, data.DN)           # (E,F,F,2,2)
    eye2 = np.eye(2)
    kuu = gg[..., None, None] * (
        -nu * inv_area[:, None, None, None, None] * ntdn
        + (taud[:, :, None] * taud[:, None, :] / au[:, None, None])[
            ..., None, None
        ]
        * eye2
    )
    diag = (gamma * taud)[:, :, None, None] * eye2
    idx = np.arange(data.faces_per_cell)
    kuu[:, idx, idx] -= diag

    kup = -(gg * (taud / au[:, None])[:, :, None])[..., None] * data.normal[
        :, None, :, :
    ]
    kup[:, idx, idx] += (gamma * data.is_neu)[:, :, None] * data.normal

    kpu = -(gg * (taup / ap[:, None])[:, :, None])[..., None] * data.normal[
        :, None, :, :
    ]
    kpp = gg * taup[:, :, None] * taup[:, None, :] / ap[:, None, None]
    kpp[:, idx, idx] -= gamma * taup

    f_uhat = gamma[:, :, None] * (
        nu * inv_area[:, None, None] * np.einsum("efaj,ea->efj", data.N, f_L)
        - (taud / au[:, None])[:, :, None] * f_u[:, None, :]
    )
    f_uhat -= gamma[:, :, None] * np.where(data.is_neu[:, :, None], cased.g, 0.0)
    f_phat = gamma * taup / ap[:, None] * f_p[:, None]

    _symmetry_rows(data, kuu, kup, f_uhat)

    rows, cols, vals = _scatter_blocks(data, kuu, kup, kpu, kpp)
    dim = dofmap.dimension
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()

    rhs = np.zeros(dim)
    umask = data.udofs >= 0
    np.add.at(rhs, data.udofs[umask], f_uhat[umask])
    np.add.at(rhs, data.pdofs.ravel(), f_phat.ravel())

    return SparseSystem(
        matrix=matrix,
        rhs=rhs,
        dofmap=dofmap,
        aux={
            "celldata": data,
            "casedata": cased,
            "tau_p": taup,
            "a_p": ap,
            "f_p": f_p,
        },
    )


def _scatter_blocks(data: CellFaceData, kuu, kup, kpu, kpp):
    """Flatten the per-cell block families into COO triplets, dropping
    entries attached to Dirichlet velocity slots."""
    E, F = data.gamma.shape
    ud = data.udofs
    pd = data.pdofs

    r_uu = np.broadcast_to(ud[:, :, None, :, None], (E, F, F, 2, 2))
    c_uu = np.broadcast_to(ud[:, None, :, None, :], (E, F, F, 2, 2))
    m_uu = (r_uu >= 0) & (c_uu >= 0)

    r_up = np.broadcast_to(ud[:, :, None, :], (E, F, F, 2))
    c_up = np.broadcast_to(pd[:, None, :, None], (E, F, F, 2))
    m_up = r_up >= 0

    r_pu = np.broadcast_to(pd[:, :, None, None], (E, F, F, 2))
    c_pu = np.broadcast_to(ud[:, None, :, :], (E, F, F, 2))
    m_pu = c_pu >= 0

    r_pp = np.broadcast_to(pd[:, :, None], (E, F, F))
    c_pp = np.broadcast_to(pd[:, None, :], (E, F, F))

    rows = np.concatenate(
        [r_uu[m_uu], r_up[m_up], r_pu[m_pu], r_pp.ravel()]
    )
    cols = np.concatenate(
        [c_uu[m_uu], c_up[m_up], c_pu[m_pu], c_pp.ravel()]
    )
    vals = np.concatenate(
        [kuu[m_uu], kup[m_up], kpu[m_pu], kpp.ravel()]
    )
    return rows, cols, vals


def constraint_row(
    data: CellFaceData,
    tau_p: np.ndarray,
    a_p: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Condensed coefficients of sum_e |Omega_e| p_e over the face unknowns.

    Returns (row_indices, values) of the dense constraint row in the
    [u_hat; p_hat] numbering.
    """
    w = data.area / a_p                                  # (E,)
    cu = -(w[:, None, None] * data.gamma[:, :, None]) * data.normal
    cp = w[:, None] * data.gamma * tau_p

    row = np.zeros(data.dofmap.dimension - (1 if data.dofmap.has_lagrange else 0))
    umask = data.udofs >= 0
    np.add.at(row, data.udofs[umask], cu[umask])
    np.add.at(row, data.pdofs.ravel(), cp.ravel())
    nz = np.nonzero(row)[0]
    return nz, row[nz]


def append_zero_mean_constraint(
    system: SparseSystem, mesh: Mesh, target: float = 0.0
) -> SparseSystem:
    """Border the system with the Lagrange row enforcing
    sum_e |Omega_e| p_e = target (zero diagonal for the multiplier)."""
    if system.bordered:
        raise ValueError("constraint already appended")
    data: CellFaceData = system.aux["celldata"]
    tau_p = system.aux["tau_p"]
    a_p = system.aux["a_p"]
    f_p = system.aux["f_p"]

    idx, vals = constraint_row(data, tau_p, a_p)
    n = system.dimension
    coo = system.matrix.tocoo()
    rows = np.concatenate([coo.row, np.full(idx.size, n), idx])
    cols = np.concatenate([coo.col, idx, np.full(idx.size, n)])
    allv = np.concatenate([coo.data, vals, vals])
    matrix = sp.coo_matrix((allv, (rows, cols)), shape=(n + 1, n + 1)).tocsr()

    rhs = np.concatenate(
        [system.rhs, [target + float((data.area / a_p) @ f_p)]]
    )
    dofmap = DofMap(
        n_faces=system.dofmap.n_faces,
        uhat_rank=system.dofmap.uhat_rank,
        n_ub=system.dofmap.n_ub,
        has_lagrange=True,
    )
    return SparseSystem(
        matrix=matrix, rhs=rhs, dofmap=dofmap, bordered=True, aux=system.aux
    )


def solve_linear(system: SparseSystem) -> np.ndarray:
    """Direct sparse solve with a residual acceptance check.

    Raises on factorization failure or when the solution fails
    ||Ax - b|| <= 1e-10 (1 + ||b||), instead of returning garbage.
    """
    A = system.matrix.tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # SuperLU signals exact singularity this way
        raise RuntimeError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(system.rhs)
    resid = system.matrix @ x - system.rhs
    norm = float(np.linalg.norm(resid))
    limit = 1e-10 * (1.0 + float(np.linalg.norm(system.rhs)))
    if not np.all(np.isfinite(x)) or norm > limit:
        worst = int(np.argmax(np.abs(resid)))
        raise RuntimeError(
            f"linear solve rejected: residual {norm:.3e} exceeds {limit:.3e} "
            f"(worst equation {worst}); the system is singular or ill-posed"
        )
    return x


def recover_stokes_cells(
    mesh: Mesh,
    config: SolverConfig,
    case,
    face_solution: np.ndarray,
    tau_p_faces: Optional[np.ndarray] = None,
):
    """Recover per-cell (L_voigt, u, p) from the face solution; each cell is
    independent."""
    data = build_cell_face_data(mesh)
    cased = evaluate_case_data(data, case)
    gamma = data.gamma
    taud = np.full_like(gamma, tau_diffusive(config))
    taup = _tau_p_array(data, config, tau_p_faces)
    au = (gamma * taud).sum(axis=1)
    ap = (gamma * taup).sum(axis=1)

    x = np.asarray(face_solution, dtype=float)
    uh = np.where(data.udofs >= 0, x[np.maximum(data.udofs, 0)], 0.0)
    vhat = uh + np.where(data.is_dir[:, :, None], cased.ud, 0.0)
    ph = x[data.pdofs]

    L = -np.einsum("ef,efaj,efj->ea", gamma, data.DN, vhat) / data.area[:, None]
    u = (
        data.area[:, None] * cased.s
        + np.einsum("ef,ef,efj->ej", gamma, taud, vhat)
        - np.einsum("ef,ef,efj->ej", gamma, ph, data.normal)
    ) / au[:, None]
    p = -(
        np.einsum("ef,efj,efj->e", gamma, data.normal, vhat)
        - (gamma * taup * ph).sum(axis=1)
    ) / ap
    return L, u, p


@dataclass
class SpectrumSummary:
    dimension: int
    nnz: int
    min_real: float
    max_real: float
    max_abs_imag: float
    complex_count: int

    @property
    def complex_fraction(self) -> float:
        return self.complex_count / self.dimension


def spectrum(system: SparseSystem, cap: int = 4096, imag_tol: float = 1e-12):
    """All eigenvalues of the (unbordered) global matrix by dense solve.

    Guarded by a dimension cap; the matrix is used exactly as assembled,
    without any renumbering. Eigenvalues count as complex above imag_tol:
    the real Schur form emits near-degenerate real pairs with stray
    imaginary parts at round-off (~1e-17), far below the genuine conjugate
    pairs of this discretization (1e-6 to 1e-4).
    """
    if system.bordered:
        raise ValueError("spectrum is defined for the unbordered system")
    if system.dimension > cap:
        raise ValueError(
            f"dimension {system.dimension} exceeds the dense-eigensolve cap "
            f"{cap}; raise the cap explicitly to force it"
        )
    eigvals = np.linalg.eigvals(system.matrix.toarray())
    summary = SpectrumSummary(
        dimension=system.dimension,
        nnz=system.nnz,
        min_real=float(eigvals.real.min()),
        max_real=float(eigvals.real.max()),
        max_abs_imag=float(np.abs(eigvals.imag).max()),
        complex_count=int(np.count_nonzero(np.abs(eigvals.imag) > imag_tol)),
    )
    return eigvals, summary


def dump_matrix(system: SparseSystem, path: str | Path) -> None:
    """Write `row col value` triplets (0-based) for external verification."""
    coo = system.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [
        f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}" for k in order
    ]
    Path(path).write_text("\n".join(lines) + "\n")
