"""Per-(cell, local face) arrays and unknown numbering shared by assembly.

The global unknown ordering is: hybrid velocities first (grouped per
non-Dirichlet face, x then y), then hybrid pressures on all faces, then the
optional Lagrange multiplier. Dirichlet faces carry no velocity unknowns;
their data enters right-hand sides only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import KIND_CODES, BoundaryKind, Mesh
from .voigt import deviatoric_operator, normal_matrix

_DIR = KIND_CODES[BoundaryKind.DIRICHLET]
_NEU = KIND_CODES[BoundaryKind.NEUMANN]
_SYM = KIND_CODES[BoundaryKind.SYMMETRY]


@dataclass
class DofMap:
    n_faces: int
    uhat_rank: np.ndarray  # (nf,) rank among non-Dirichlet faces, -1 otherwise
    n_ub: int
    has_lagrange: bool = False

    @property
    def n_uhat(self) -> int:
        return 2 * self.n_ub

    @property
    def dimension(self) -> int:
        return 2 * self.n_ub + self.n_faces + (1 if self.has_lagrange else 0)

    def phat_dof(self, face):
        return 2 * self.n_ub + np.asarray(face)

    @property
    def lagrange_dof(self) -> int:
        if not self.has_lagrange:
            raise ValueError("no Lagrange multiplier in this numbering")
        return 2 * self.n_ub + self.n_faces


def build_dofmap(mesh: Mesh, with_lagrange: bool = False) -> DofMap:
    codes = mesh.boundary_kind_codes()
    is_dirichlet = codes == _DIR
    rank = np.full(mesh.n_faces, -1, dtype=np.int64)
    free = np.flatnonzero(~is_dirichlet)
    rank[free] = np.arange(free.size)
    return DofMap(
        n_faces=mesh.n_faces,
        uhat_rank=rank,
        n_ub=free.size,
        has_lagrange=with_lagrange,
    )


@dataclass
class CellFaceData:
    """Geometry, masks, kernels and dof ids laid out as (n_cells, F) arrays."""

    mesh: Mesh
    dofmap: DofMap
    face_ids: np.ndarray      # (E,F) global face index
    gamma: np.ndarray         # (E,F) face measure
    normal: np.ndarray        # (E,F,2) outward from this cell
    tangent: np.ndarray       # (E,F,2) stored face tangent (not sign-flipped)
    bary: np.ndarray          # (E,F,2)
    is_dir: np.ndarray        # (E,F) bool
    is_neu: np.ndarray
    is_sym: np.ndarray
    is_int: np.ndarray
    udofs: np.ndarray         # (E,F,2) global velocity dof, -1 on Dirichlet
    pdofs: np.ndarray         # (E,F) global pressure dof
    N: np.ndarray             # (E,F,3,2) normal matrices
    DN: np.ndarray            # (E,F,3,2) deviatoric_operator @ N
    area: np.ndarray          # (E,)
    centroid: np.ndarray      # (E,2)

    @property
    def is_b(self) -> np.ndarray:
        return ~self.is_dir

    @property
    def n_cells(self) -> int:
        return self.gamma.shape[0]

    @property
    def faces_per_cell(self) -> int:
        return self.gamma.shape[1]


def build_cell_face_data(mesh: Mesh, with_lagrange: bool = False) -> CellFaceData:
    mesh.require_tagged()
    dofmap = build_dofmap(mesh, with_lagrange)
    ft = mesh.faces
    cf = mesh.cell_faces
    sign = mesh.cell_face_sign

    gamma = ft.measure[cf]
    normal = ft.normal[cf] * sign[:, :, None]
    tangent = ft.tangent[cf]
    bary = ft.barycentre[cf]

    codes = mesh.boundary_kind_codes()[cf]
    is_dir = codes == _DIR
    is_neu = codes == _NEU
    is_sym = codes == _SYM
    is_int = codes == -1

    rank = dofmap.uhat_rank[cf]
    udofs = np.where(
        rank[:, :, None] >= 0,
        2 * rank[:, :, None] + np.arange(2)[None, None, :],
        -1,
    )
    pdofs = dofmap.phat_dof(cf)

    N = normal_matrix(normal.reshape(-1, 2)).reshape(normal.shape[:2] + (3, 2))
    DN = np.einsum("ab,efbj->efaj", deviatoric_operator(), N)

    return CellFaceData(
        mesh=mesh,
        dofmap=dofmap,
        face_ids=cf,
        gamma=gamma,
        normal=normal,
        tangent=tangent,
        bary=bary,
        is_dir=is_dir,
        is_neu=is_neu,
        is_sym=is_sym,
        is_int=is_int,
        udofs=udofs,
        pdofs=pdofs,
        N=N,
        DN=DN,
        area=mesh.areas,
        centroid=mesh.centroids,
    )


@dataclass
class CaseData:
    """Boundary data and body force evaluated at the quadrature points."""

    ud: np.ndarray  # (E,F,2), zero away from Dirichlet faces
    g: np.ndarray   # (E,F,2), zero away from Neumann faces
    s: np.ndarray   # (E,2) body force at centroids


def evaluate_case_data(data: CellFaceData, case) -> CaseData:
    E, F = data.gamma.shape
    flat = data.bary.reshape(-1, 2)
    ud = np.zeros((E * F, 2))
    mask = data.is_dir.reshape(-1)
    if mask.any():
        ud[mask] = np.asarray(case.u_dirichlet(flat[mask]), dtype=float)
    g = np.zeros((E * F, 2))
    mask = data.is_neu.reshape(-1)
    if mask.any():
        if case.neumann_traction is None:
            raise ValueError(f"case {case.name!r} has Neumann faces but no traction")
        g[mask] = np.asarray(case.neumann_traction(flat[mask]), dtype=float)
    s = np.asarray(case.body_force(data.centroid), dtype=float)
    return CaseData(ud=ud.reshape(E, F, 2), g=g.reshape(E, F, 2), s=s)
