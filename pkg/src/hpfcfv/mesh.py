"""2D meshes of quadrilateral or triangular cells with full face connectivity.

Meshes are immutable after construction: operations such as distortion or
boundary tagging return new Mesh objects sharing connectivity arrays where
possible. Each face stores its geometry once, oriented outward from the
owner cell (the adjacent cell with the smaller index); the neighbour sees
the negated normal at assembly time via the per-cell sign table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class CellType(Enum):
    QUAD = "quad"
    TRI = "tri"


class BoundaryKind(Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    SYMMETRY = "symmetry"


#: Integer codes used in vectorized kind arrays; -1 marks interior faces.
KIND_CODES = {
    BoundaryKind.DIRICHLET: 0,
    BoundaryKind.NEUMANN: 1,
    BoundaryKind.SYMMETRY: 2,
}

_LOCAL_EDGES = {
    CellType.QUAD: ((0, 1), (1, 2), (2, 3), (3, 0)),
    CellType.TRI: ((0, 1), (1, 2), (2, 0)),
}


@dataclass
class FaceTable:
    """Per-face connectivity and geometry.

    normal is the unit normal oriented outward from the owner cell;
    tangent is the normal rotated 90 degrees counter-clockwise. neighbor
    and neighbor_local are -1 for boundary faces.
    """

    nodes: np.ndarray
    owner: np.ndarray
    neighbor: np.ndarray
    owner_local: np.ndarray
    neighbor_local: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    measure: np.ndarray
    barycentre: np.ndarray

    @property
    def n_faces(self) -> int:
        return self.owner.shape[0]

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.neighbor < 0


@dataclass
class Mesh:
    """Immutable 2D mesh of one cell type with face connectivity.

    cells hold counter-clockwise node indices. cell_faces maps each cell to
    its face indices in local-edge order; cell_face_sign is +1 where the
    cell owns the face, -1 where it sees the negated normal.
    """

    nodes: np.ndarray
    cells: np.ndarray
    cell_type: CellType
    faces: FaceTable
    cell_faces: np.ndarray
    cell_face_sign: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    boundary_tags: dict[int, BoundaryKind] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.n_faces

    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.faces.boundary_mask)

    def boundary_kind_codes(self) -> np.ndarray:
        """Per-face kind codes (KIND_CODES values); -1 for interior faces."""
        codes = np.full(self.n_faces, -1, dtype=np.int8)
        for f, kind in self.boundary_tags.items():
            codes[f] = KIND_CODES[kind]
        return codes

    def require_tagged(self) -> None:
        untagged = set(self.boundary_faces().tolist()) - set(self.boundary_tags)
        if untagged:
            raise ValueError(
                f"{len(untagged)} boundary faces are untagged "
                f"(e.g. face {min(untagged)})"
            )


def _polygon_geometry(nodes: np.ndarray, cells: np.ndarray):
    """Shoelace areas and area centroids of the (convex or not) cells."""
    pts = nodes[cells]
    nxt = np.roll(pts, -1, axis=1)
    cross = pts[:, :, 0] * nxt[:, :, 1] - nxt[:, :, 0] * pts[:, :, 1]
    areas = 0.5 * cross.sum(axis=1)
    cx = ((pts[:, :, 0] + nxt[:, :, 0]) * cross).sum(axis=1)
    cy = ((pts[:, :, 1] + nxt[:, :, 1]) * cross).sum(axis=1)
    centroids = np.stack([cx, cy], axis=1) / (6.0 * areas)[:, None]
    return areas, centroids


def _build_mesh(
    nodes: np.ndarray,
    cells: np.ndarray,
    cell_type: CellType,
    boundary_tags: dict[int, BoundaryKind] | None = None,
) -> Mesh:
    """Construct a Mesh from nodes and CCW cells, deriving the face table.

    Faces are enumerated in first-appearance order scanning cells by
    ascending index and local edges in order, so the owner is always the
    lower-index adjacent cell and the numbering is reproducible from
    (nodes, cells) alone.
    """
    nodes = np.asarray(nodes, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    edges = _LOCAL_EDGES[cell_type]
    n_cells = cells.shape[0]

    face_of: dict[tuple[int, int], int] = {}
    f_nodes: list[tuple[int, int]] = []
    owner: list[int] = []
    neighbor: list[int] = []
    owner_local: list[int] = []
    neighbor_local: list[int] = []
    cell_faces = np.empty((n_cells, len(edges)), dtype=np.int64)
    cell_face_sign = np.empty((n_cells, len(edges)), dtype=float)

    for e in range(n_cells):
        cell = cells[e]
        for loc, (a, b) in enumerate(edges):
            na, nb = int(cell[a]), int(cell[b])
            key = (na, nb) if na < nb else (nb, na)
            f = face_of.get(key)
            if f is None:
                f = len(f_nodes)
                face_of[key] = f
                f_nodes.append((na, nb))
                owner.append(e)
                owner_local.append(loc)
                neighbor.append(-1)
                neighbor_local.append(-1)
                cell_face_sign[e, loc] = 1.0
            else:
                if neighbor[f] >= 0:
                    raise ValueError(f"face {f} referenced by more than two cells")
                neighbor[f] = e
                neighbor_local[f] = loc
                cell_face_sign[e, loc] = -1.0
            cell_faces[e, loc] = f

    f_nodes_arr = np.asarray(f_nodes, dtype=np.int64)
    a = nodes[f_nodes_arr[:, 0]]
    b = nodes[f_nodes_arr[:, 1]]
    d = b - a
    measure = np.hypot(d[:, 0], d[:, 1])
    if np.any(measure <= 0.0):
        raise ValueError("degenerate zero-length face")
    # CCW traversal of the owner cell: outward normal is the edge direction
    # rotated -90 degrees.
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / measure[:, None]
    tangent = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
    bary = 0.5 * (a + b)

    areas, centroids = _polygon_geometry(nodes, cells)
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise ValueError(f"cell {bad} has non-positive area {areas[bad]:.3e}")

    faces = FaceTable(
        nodes=f_nodes_arr,
        owner=np.asarray(owner, dtype=np.int64),
        neighbor=np.asarray(neighbor, dtype=np.int64),
        owner_local=np.asarray(owner_local, dtype=np.int64),
        neighbor_local=np.asarray(neighbor_local, dtype=np.int64),
        normal=normal,
        tangent=tangent,
        measure=measure,
        barycentre=bary,
    )
    return Mesh(
        nodes=nodes,
        cells=cells,
        cell_type=cell_type,
        faces=faces,
        cell_faces=cell_faces,
        cell_face_sign=cell_face_sign,
        areas=areas,
        centroids=centroids,
        boundary_tags=dict(boundary_tags or {}),
    )


def _rect_coords(domain: Sequence[float]) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain!r}")
    return x0, y0, x1, y1


def _structured_nodes(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _quad_cells(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    nid = lambda ii, jj: jj * (nx + 1) + ii
    return np.stack(
        [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)], axis=1
    )


def structured_quads_from_coords(xs, ys) -> Mesh:
    """Tensor-product quadrilateral mesh from 1D coordinate vectors."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or ys.size < 2 or np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise ValueError("coordinate vectors must be strictly increasing, size >= 2")
    nodes = _structured_nodes(xs, ys)
    cells = _quad_cells(xs.size - 1, ys.size - 1)
    return _build_mesh(nodes, cells, CellType.QUAD)


def structured_tris_from_coords(xs, ys) -> Mesh:
    """As structured_quads_from_coords, each quad split by its low-to-high
    diagonal (corner (i,j) to (i+1,j+1))."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or ys.size < 2 or np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise ValueError("coordinate vectors must be strictly increasing, size >= 2")
    nodes = _structured_nodes(xs, ys)
    quads = _quad_cells(xs.size - 1, ys.size - 1)
    a, b, c, d = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    tris = np.empty((2 * quads.shape[0], 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, d], axis=1)
    return _build_mesh(nodes, tris, CellType.TRI)


def generate_structured_quads(nx: int, ny: int, domain=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Uniform nx-by-ny quadrilateral mesh of an axis-aligned rectangle."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    x0, y0, x1, y1 = _rect_coords(domain)
    return structured_quads_from_coords(
        np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    )


def generate_structured_tris(nx: int, ny: int, domain=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Uniform triangular mesh: the quad mesh split by a fixed diagonal."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    x0, y0, x1, y1 = _rect_coords(domain)
    return structured_tris_from_coords(
        np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    )


def generate_annulus(
    n_theta: int,
    n_r: int,
    r_inner: float,
    r_outer: float,
    cell_type: CellType = CellType.QUAD,
) -> Mesh:
    """Structured polar mesh of the annulus r_inner <= r <= r_outer.

    n_theta subdivisions around, n_r across; boundary faces lie on the two
    circles (polygonal chords) and can be told apart by barycentre radius.
    """
    if n_theta < 3 or n_r < 1:
        raise ValueError("need n_theta >= 3 and n_r >= 1")
    if not (0.0 < r_inner < r_outer):
        raise ValueError("radii must satisfy 0 < r_inner < r_outer")
    radii = np.linspace(r_inner, r_outer, n_r + 1)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(radii, theta, indexing="ij")
    nodes = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)

    nid = lambda k, m: k * n_theta + (m % n_theta)
    k, m = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    k, m = k.ravel(), m.ravel()
    quads = np.stack(
        [nid(k, m), nid(k + 1, m), nid(k + 1, m + 1), nid(k, m + 1)], axis=1
    )
    if cell_type is CellType.QUAD:
        return _build_mesh(nodes, quads, CellType.QUAD)
    a, b, c, d = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    tris = np.empty((2 * quads.shape[0], 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, d], axis=1)
    return _build_mesh(nodes, tris, CellType.TRI)


def distort(mesh: Mesh, factor: float, seed: int) -> Mesh:
    """Displace internal nodes by a random vector, keeping topology.

    Each internal node moves by a vector drawn uniformly in the disc of
    radius factor * (shortest incident edge before distortion); boundary
    nodes stay put. Draws come from numpy's PCG64 generator seeded with
    `seed`, consumed in node-index order, so results are bit-reproducible.
    Raises if any cell area becomes non-positive.
    """
    if not (0.0 <= factor < 0.5):
        raise ValueError("factor must lie in [0, 0.5)")
    if factor == 0.0:
        return Mesh(
            nodes=mesh.nodes,
            cells=mesh.cells,
            cell_type=mesh.cell_type,
            faces=mesh.faces,
            cell_faces=mesh.cell_faces,
            cell_face_sign=mesh.cell_face_sign,
            areas=mesh.areas,
            centroids=mesh.centroids,
            boundary_tags=dict(mesh.boundary_tags),
        )

    ft = mesh.faces
    shortest = np.full(mesh.n_nodes, np.inf)
    for end in (0, 1):
        np.minimum.at(shortest, ft.nodes[:, end], ft.measure)
    internal = np.ones(mesh.n_nodes, dtype=bool)
    bmask = ft.boundary_mask
    internal[ft.nodes[bmask].ravel()] = False

    rng = np.random.default_rng(seed)
    u = rng.random((mesh.n_nodes, 2))
    radius = factor * shortest * np.sqrt(u[:, 0])
    angle = 2.0 * np.pi * u[:, 1]
    disp = radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    disp[~internal] = 0.0

    new_nodes = mesh.nodes + disp
    return _regeometry(mesh, new_nodes)


def _regeometry(mesh: Mesh, new_nodes: np.ndarray) -> Mesh:
    """Rebuild geometric quantities for moved nodes; connectivity unchanged."""
    ft = mesh.faces
    a = new_nodes[ft.nodes[:, 0]]
    b = new_nodes[ft.nodes[:, 1]]
    d = b - a
    measure = np.hypot(d[:, 0], d[:, 1])
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / measure[:, None]
    tangent = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
    bary = 0.5 * (a + b)
    areas, centroids = _polygon_geometry(new_nodes, mesh.cells)
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise ValueError(
            f"distortion inverted cell {bad} (area {areas[bad]:.3e}); lower the factor"
        )
    faces = FaceTable(
        nodes=ft.nodes,
        owner=ft.owner,
        neighbor=ft.neighbor,
        owner_local=ft.owner_local,
        neighbor_local=ft.neighbor_local,
        normal=normal,
        tangent=tangent,
        measure=measure,
        barycentre=bary,
    )
    return Mesh(
        nodes=new_nodes,
        cells=mesh.cells,
        cell_type=mesh.cell_type,
        faces=faces,
        cell_faces=mesh.cell_faces,
        cell_face_sign=mesh.cell_face_sign,
        areas=areas,
        centroids=centroids,
        boundary_tags=dict(mesh.boundary_tags),
    )


TagRule = tuple[Callable[[np.ndarray], bool], BoundaryKind]


def tag_boundaries(mesh: Mesh, rules: Iterable[TagRule]) -> Mesh:
    """Classify every boundary face through geometric predicates.

    Each rule is (predicate(barycentre) -> bool, BoundaryKind). Every
    boundary face barycentre must satisfy exactly one predicate; anything
    else is a configuration error.
    """
    rules = list(rules)
    tags: dict[int, BoundaryKind] = {}
    for f in mesh.boundary_faces():
        x = mesh.faces.barycentre[f]
        hits = [kind for pred, kind in rules if pred(x)]
        if len(hits) != 1:
            raise ValueError(
                f"boundary face {int(f)} at {x.tolist()} matched "
                f"{len(hits)} predicates (need exactly 1)"
            )
        tags[int(f)] = hits[0]
    return Mesh(
        nodes=mesh.nodes,
        cells=mesh.cells,
        cell_type=mesh.cell_type,
        faces=mesh.faces,
        cell_faces=mesh.cell_faces,
        cell_face_sign=mesh.cell_face_sign,
        areas=mesh.areas,
        centroids=mesh.centroids,
        boundary_tags=tags,
    )


def validate_compatibility(mesh: Mesh, u_dirichlet) -> float:
    """Signed net flux of the Dirichlet datum through the tagged boundary.

    Returns sum over Dirichlet faces of |face| * u_D(barycentre) . n with
    the outward normal; a compatible datum gives zero. Purely diagnostic.
    """
    total = 0.0
    ft = mesh.faces
    for f, kind in mesh.boundary_tags.items():
        if kind is not BoundaryKind.DIRICHLET:
            continue
        ud = np.asarray(u_dirichlet(ft.barycentre[f][None, :]), dtype=float).reshape(2)
        total += ft.measure[f] * float(ud @ ft.normal[f])
    return total


def characteristic_size(mesh: Mesh) -> float:
    """Characteristic cell size: the largest over cells of the shortest
    cell edge (equals the grid spacing on the structured families)."""
    pts = mesh.nodes[mesh.cells]
    nxt = np.roll(pts, -1, axis=1)
    lengths = np.hypot(*(nxt - pts).transpose(2, 0, 1))
    return float(lengths.min(axis=1).max())


_MAGIC = "hpfcfv-mesh"


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write the self-describing ASCII format (lossless round-trip)."""
    lines = [f"{_MAGIC} v1 2 {mesh.cell_type.value}"]
    lines.append(f"nodes {mesh.n_nodes}")
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.nodes)
    lines.append(f"cells {mesh.n_cells}")
    lines.extend(" ".join(str(int(v)) for v in cell) for cell in mesh.cells)
    lines.append(f"tags {len(mesh.boundary_tags)}")
    lines.extend(
        f"{f} {kind.value}" for f, kind in sorted(mesh.boundary_tags.items())
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    """Read the ASCII format written by write_mesh.

    Face numbering is reconstructed deterministically from (nodes, cells),
    so stored tag indices remain valid.
    """
    tokens = Path(path).read_text().split()
    pos = 0

    def take(n: int):
        nonlocal pos
        out = tokens[pos : pos + n]
        if len(out) != n:
            raise ValueError(f"truncated mesh file {path}")
        pos += n
        return out

    magic, version, dim, ctype = take(4)
    if magic != _MAGIC or version != "v1" or dim != "2":
        raise ValueError(f"not a {_MAGIC} v1 2D file: {path}")
    cell_type = CellType(ctype)
    nv = 4 if cell_type is CellType.QUAD else 3

    kw, n = take(2)
    if kw != "nodes":
        raise ValueError("expected 'nodes'")
    n = int(n)
    nodes = np.array(take(2 * n), dtype=float).reshape(n, 2)

    kw, m = take(2)
    if kw != "cells":
        raise ValueError("expected 'cells'")
    m = int(m)
    cells = np.array(take(nv * m), dtype=np.int64).reshape(m, nv)

    kw, k = take(2)
    if kw != "tags":
        raise ValueError("expected 'tags'")
    k = int(k)
    tags: dict[int, BoundaryKind] = {}
    for _ in range(k):
        f, kind = take(2)
        tags[int(f)] = BoundaryKind(kind)

    return _build_mesh(nodes, cells, cell_type, tags)
