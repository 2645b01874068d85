"""Nonlinear hybrid-pressure residuals, Jacobian blocks and condensation.

Per Newton iteration the stabilization is evaluated with the hybrid
velocity of the previous iterate (lagged) and held fixed, so the analytic
Jacobian assembled here is exactly consistent with the evaluated residual.
The cell-block structure is block-diagonal in (L, u, p), which makes the
Schur complement onto the face unknowns explicit and cheap; cell unknowns
are recovered independently per cell afterwards.

Stokes mode is the same machinery with the convective terms switched off.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._celldata import CaseData, CellFaceData
from .stabilization import SolverConfig, tau_convective, tau_diffusive
from .stokes import _tau_p_array, constraint_row


@dataclass
class SolutionState:
    """Cell fields plus face traces; sizes fixed by the mesh and tagging."""

    L: np.ndarray      # (E,3) mixed variable, Voigt
    u: np.ndarray      # (E,2)
    p: np.ndarray      # (E,)
    uhat: np.ndarray   # (n_ub,2) on non-Dirichlet faces
    phat: np.ndarray   # (nf,)
    lam: float = 0.0

    @classmethod
    def zeros(cls, data: CellFaceData) -> "SolutionState":
        E = data.n_cells
        return cls(
            L=np.zeros((E, 3)),
            u=np.zeros((E, 2)),
            p=np.zeros(E),
            uhat=np.zeros((data.dofmap.n_ub, 2)),
            phat=np.zeros(data.dofmap.n_faces),
        )

    def copy(self) -> "SolutionState":
        return SolutionState(
            L=self.L.copy(),
            u=self.u.copy(),
            p=self.p.copy(),
            uhat=self.uhat.copy(),
            phat=self.phat.copy(),
            lam=self.lam,
        )


@dataclass
class Residuals:
    """The five residual families; norm() is the plain Euclidean norm of
    their concatenation (unnormalized)."""

    R_L: np.ndarray      # (E,3)
    R_u: np.ndarray      # (E,2)
    R_p: np.ndarray      # (E,)
    R_uhat: np.ndarray   # (n_ub,2)
    R_phat: np.ndarray   # (nf,)

    def concatenated(self) -> np.ndarray:
        return np.concatenate(
            [
                self.R_L.ravel(),
                self.R_u.ravel(),
                self.R_p.ravel(),
                self.R_uhat.ravel(),
                self.R_phat.ravel(),
            ]
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.concatenated()))


def face_velocity(data: CellFaceData, cased: CaseData, state: SolutionState):
    """Per-(cell,face) trace velocity: the hybrid unknown on non-Dirichlet
    faces, the Dirichlet datum elsewhere."""
    rank = data.dofmap.uhat_rank[data.face_ids]
    uh = np.where(rank[:, :, None] >= 0, state.uhat[np.maximum(rank, 0)], 0.0)
    return uh + np.where(data.is_dir[:, :, None], cased.ud, 0.0)


def lagged_tau(
    data: CellFaceData,
    cased: CaseData,
    config: SolverConfig,
    case,
    state: SolutionState,
) -> np.ndarray:
    """Total stabilization per (cell, face) from the previous iterate.

    The convective part is evaluated with the cell's outward normal, so the
    HLL coefficient is one-sided (upwinding asymmetry); LF is side-neutral.
    Dirichlet faces use the boundary datum as the trace velocity.
    """
    taud = tau_diffusive(config)
    if not case.convection:
        return np.full_like(data.gamma, taud)
    v = face_velocity(data, cased, state)
    return taud + tau_convective(config, v, data.normal)


def _momentum_face_rows(
    data: CellFaceData,
    cased: CaseData,
    config: SolverConfig,
    case,
    state: SolutionState,
    tau: np.ndarray,
    v: np.ndarray,
    vn: np.ndarray,
    include_cancelled_terms: bool = False,
):
    """Cell-side momentum rows per (cell, face): the interior flux row, the
    Neumann/symmetry boundary operator rows, zero on Dirichlet slots.

    For symmetry faces the two components hold the tangential-traction row
    and the normal-velocity row, in that order.
    """
    gamma = data.gamma
    taud = tau_diffusive(config)
    ph = state.phat[data.face_ids]
    NL = np.einsum("efaj,ea->efj", data.N, state.L)
    ru = np.zeros_like(v)

    m = data.is_int
    cells = np.nonzero(m)[0]
    ru[m] = (
        config.nu * NL[m]
        + tau[m][:, None] * (state.u[cells] - v[m])
    )
    if include_cancelled_terms:
        if case.convection:
            ru[m] += vn[m][:, None] * v[m]
        ru[m] += ph[m][:, None] * data.normal[m]

    m = data.is_neu
    if m.any():
        cells = np.nonzero(m)[0]
        ru[m] = (
            ph[m][:, None] * data.normal[m]
            + config.nu * NL[m]
            + taud * (state.u[cells] - v[m])
            + cased.g[m]
        )

    m = data.is_sym
    if m.any():
        cells = np.nonzero(m)[0]
        trac = config.nu * NL[m] + taud * (state.u[cells] - v[m])
        ru[m, 0] = np.einsum("kj,kj->k", data.tangent[m], trac)
        ru[m, 1] = np.einsum("kj,kj->k", data.normal[m], v[m])

    ru *= gamma[:, :, None]
    ru[data.is_dir] = 0.0
    return ru


def residuals(
    data: CellFaceData,
    cased: CaseData,
    config: SolverConfig,
    case,
    state: SolutionState,
    tau: np.ndarray,
    tau_p_faces: Optional[np.ndarray] = None,
    include_cancelled_terms: bool = False,
) -> Residuals:
    """Evaluate all residual families at the given state and (lagged) tau.

    include_cancelled_terms adds back the physical convective flux and
    p_hat n on interior-face momentum rows; their two cell contributions
    cancel through opposite normals, leaving assembled residuals unchanged.
    """
    gamma = data.gamma
    taup = _tau_p_array(data, config, tau_p_faces)
    v = face_velocity(data, cased, state)
    ph = state.phat[data.face_ids]
    vn = np.einsum("efj,efj->ef", v, data.normal)

    R_L = data.area[:, None] * state.L + np.einsum(
        "ef,efaj,efj->ea", gamma, data.DN, v
    )

    R_u = (gamma * tau).sum(axis=1)[:, None] * state.u
    R_u -= data.area[:, None] * cased.s
    R_u -= np.einsum("ef,ef,efj->ej", gamma, tau, v)
    if case.convection:
        R_u += np.einsum("ef,ef,efj->ej", gamma, vn, v)
    R_u += np.einsum("ef,ef,efj->ej", gamma, ph, data.normal)

    R_p = (gamma * taup).sum(axis=1) * state.p
    R_p += (gamma * vn).sum(axis=1)
    R_p -= (gamma * taup * ph).sum(axis=1)

    ru = _momentum_face_rows(
        data, cased, config, case, state, tau, v, vn, include_cancelled_terms
    )
    rp = gamma * taup * (state.p[:, None] - ph)

    R_uhat = np.zeros((data.dofmap.n_ub, 2))
    rank = data.dofmap.uhat_rank[data.face_ids]
    bm = rank >= 0
    np.add.at(R_uhat, rank[bm], ru[bm])
    R_phat = np.zeros(data.dofmap.n_faces)
    np.add.at(R_phat, data.face_ids.ravel(), rp.ravel())

    return Residuals(R_L=R_L, R_u=R_u, R_p=R_p, R_uhat=R_uhat, R_phat=R_phat)


@dataclass
class CellBlocks:
    """Per-cell Newton blocks in the local numbering.

    U slots are [L1, L2, L3, ux, uy, p]; face slots are [ux, uy, p_hat] per
    local face (nL = 3 * faces-per-cell). T_UU is block-diagonal and stored
    through its diagonal scales.
    """

    data: CellFaceData
    tuu_diag: np.ndarray    # (E,6)
    tul: np.ndarray         # (E,6,nL)
    tlu: np.ndarray         # (E,nL,6)
    tll: np.ndarray         # (E,nL,nL)
    r_u: np.ndarray         # (E,6)
    r_l_cell: np.ndarray    # (E,nL) cell-side face residual contributions
    lam_dofs: np.ndarray    # (E,nL) global dof per slot, -1 for Dirichlet u

    @property
    def n_lambda(self) -> int:
        return self.tll.shape[1]


def cell_blocks(
    data: CellFaceData,
    cased: CaseData,
    config: SolverConfig,
    case,
    state: SolutionState,
    tau: np.ndarray,
    tau_p_faces: Optional[np.ndarray] = None,
) -> CellBlocks:
    """Analytic Jacobian blocks and residuals at the given state/tau.

    The convective nonlinearity differentiates the (n.v)v terms with tau
    held fixed; Dirichlet data is constant under differentiation.
    """
    E, F = data.gamma.shape
    nL = 3 * F
    gamma = data.gamma
    nu = config.nu
    taud = tau_diffusive(config)
    taup = _tau_p_array(data, config, tau_p_faces)
    v = face_velocity(data, cased, state)
    vn = np.einsum("efj,efj->ef", v, data.normal)
    is_b = data.is_b
    eye2 = np.eye(2)

    res = residuals(data, cased, config, case, state, tau, tau_p_faces)

    au = (gamma * tau).sum(axis=1)
    ap = (gamma * taup).sum(axis=1)
    tuu_diag = np.concatenate(
        [
            np.repeat(data.area[:, None], 3, axis=1),
            np.repeat(au[:, None], 2, axis=1),
            ap[:, None],
        ],
        axis=1,
    )

    # T_UL: local residuals differentiated w.r.t. face unknowns.
    tul = np.zeros((E, F, 6, 3))
    tul[:, :, 0:3, 0:2] = np.where(
        is_b[:, :, None, None], gamma[:, :, None, None] * data.DN, 0.0
    )
    duu = -(gamma * tau)[:, :, None, None] * eye2
    if case.convection:
        duu += gamma[:, :, None, None] * (
            np.einsum("efi,efj->efij", v, data.normal)
            + vn[:, :, None, None] * eye2
        )
    tul[:, :, 3:5, 0:2] = np.where(is_b[:, :, None, None], duu, 0.0)
    tul[:, :, 3:5, 2] = gamma[:, :, None] * data.normal
    tul[:, :, 5, 0:2] = np.where(
        is_b[:, :, None], gamma[:, :, None] * data.normal, 0.0
    )
    tul[:, :, 5, 2] = -gamma * taup
    tul = tul.transpose(0, 2, 1, 3).reshape(E, 6, nL)

    # T_LU: face rows differentiated w.r.t. cell unknowns. Interior rows
    # carry the full tau, boundary-operator rows only the viscous part.
    tau_row = np.where(data.is_int, tau, taud)
    row_visc = nu * gamma[:, :, None, None] * data.N.transpose(0, 1, 3, 2)
    row_uu = (gamma * tau_row)[:, :, None, None] * eye2
    tlu = np.zeros((E, F, 3, 6))
    tlu[:, :, 0:2, 0:3] = row_visc
    tlu[:, :, 0:2, 3:5] = row_uu
    ms = data.is_sym
    if ms.any():
        t = data.tangent[ms]
        tlu[ms, 0, 0:3] = np.einsum("kj,kja->ka", t, row_visc[ms])
        tlu[ms, 0, 3:5] = np.einsum("kj,kja->ka", t, row_uu[ms])
        tlu[ms, 1, :] = 0.0
    tlu[:, :, 0:2] *= is_b[:, :, None, None]
    tlu[:, :, 2, 5] = gamma * taup
    tlu = tlu.reshape(E, nL, 6)

    # T_LL: per-face diagonal couplings of the face rows.
    tll_face = np.zeros((E, F, 3, 3))
    duu_face = -(gamma * tau_row)[:, :, None, None] * eye2
    if ms.any():
        t = data.tangent[ms]
        dsym = np.zeros_like(duu_face[ms])
        dsym[:, 0, :] = -(gamma[ms] * taud)[:, None] * t
        dsym[:, 1, :] = gamma[ms][:, None] * data.normal[ms]
        duu_face[ms] = dsym
    tll_face[:, :, 0:2, 0:2] = np.where(
        is_b[:, :, None, None], duu_face, 0.0
    )
    mneu = data.is_neu
    if mneu.any():
        tll_face[mneu, 0:2, 2] = gamma[mneu][:, None] * data.normal[mneu]
    tll_face[:, :, 2, 2] = -gamma * taup
    tll = np.zeros((E, nL, nL))
    for f in range(F):
        tll[:, 3 * f : 3 * f + 3, 3 * f : 3 * f + 3] = tll_face[:, f]

    r_u = np.concatenate([res.R_L, res.R_u, res.R_p[:, None]], axis=1)

    ru_loc = _momentum_face_rows(data, cased, config, case, state, tau, v, vn)
    rp_loc = gamma * taup * (state.p[:, None] - state.phat[data.face_ids])
    r_l_cell = np.zeros((E, F, 3))
    r_l_cell[:, :, 0:2] = ru_loc
    r_l_cell[:, :, 2] = rp_loc
    r_l_cell = r_l_cell.reshape(E, nL)

    lam_dofs = np.concatenate(
        [data.udofs, data.pdofs[:, :, None]], axis=2
    ).reshape(E, nL)

    return CellBlocks(
        data=data,
        tuu_diag=tuu_diag,
        tul=tul,
        tlu=tlu,
        tll=tll,
        r_u=r_u,
        r_l_cell=r_l_cell,
        lam_dofs=lam_dofs,
    )


def condense(blocks: CellBlocks):
    """Schur complement onto the face unknowns using the closed-form
    block-diagonal inverse: per-cell K_e and F_e."""
    inv = 1.0 / blocks.tuu_diag
    m = blocks.tlu * inv[:, None, :]                     # T_LU T_UU^-1
    K = blocks.tll - np.einsum("eau,eub->eab", m, blocks.tul)
    F = -blocks.r_l_cell + np.einsum("eau,eu->ea", m, blocks.r_u)
    return K, F


def recover_cell_increments(blocks: CellBlocks, delta_lambda: np.ndarray):
    """Cell increments from face increments: T_UU dU = -R_U - T_UL dLam.

    delta_lambda is the per-cell gathered face increment (E, nL); cells are
    independent.
    """
    rhs = -blocks.r_u - np.einsum("eul,el->eu", blocks.tul, delta_lambda)
    du = rhs / blocks.tuu_diag
    return du[:, 0:3], du[:, 3:5], du[:, 5]


def gather_face_increments(blocks: CellBlocks, x: np.ndarray) -> np.ndarray:
    """Per-cell (E, nL) view of a global face-unknown vector; Dirichlet
    velocity slots read as zero."""
    dofs = blocks.lam_dofs
    return np.where(dofs >= 0, x[np.maximum(dofs, 0)], 0.0)


def assemble_newton_system(
    blocks: CellBlocks,
    config: SolverConfig,
    res: Residuals,
    state: SolutionState,
    constraint_target: Optional[float] = None,
    tau_p_faces: Optional[np.ndarray] = None,
):
    """Assemble the condensed Newton system K dLam = F.

    With constraint_target set, the system is bordered by the zero-mean
    pressure constraint row (re-condensed at the current state) and its
    transpose column; the multiplier has a zero diagonal.
    """
    data = blocks.data
    K, Fcell = condense(blocks)
    dofs = blocks.lam_dofs
    E, nL = dofs.shape

    rows = np.broadcast_to(dofs[:, :, None], (E, nL, nL))
    cols = np.broadcast_to(dofs[:, None, :], (E, nL, nL))
    mask = (rows >= 0) & (cols >= 0)
    n_free = 2 * data.dofmap.n_ub + data.dofmap.n_faces
    bordered = constraint_target is not None
    dim = n_free + (1 if bordered else 0)

    r = rows[mask]
    c = cols[mask]
    vals = K[mask]

    rhs = np.zeros(dim)
    rmask = dofs >= 0
    np.add.at(rhs, dofs[rmask], Fcell[rmask])

    if bordered:
        taup = _tau_p_array(data, config, tau_p_faces)
        ap = (data.gamma * taup).sum(axis=1)
        idx, cvals = constraint_row(data, taup, ap)
        r = np.concatenate([r, np.full(idx.size, n_free), idx])
        c = np.concatenate([c, idx, np.full(idx.size, n_free)])
        vals = np.concatenate([vals, cvals, cvals])
        rhs[n_free] = (
            constraint_target
            - float(data.area @ state.p)
            + float((data.area / ap) @ res.R_p)
        )

    A = sp.coo_matrix((vals, (r, c)), shape=(dim, dim)).tocsr()
    return A, rhs
