"""Benchmark case definitions: boundary data, body forces, exact fields.

Closed-form body forces and tractions were derived by hand from the exact
fields; the test suite audits every one of them against high-order finite
differences of the velocity/pressure evaluators before any solver run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .mesh import (
    BoundaryKind,
    CellType,
    Mesh,
    TagRule,
    generate_annulus,
    generate_structured_quads,
    generate_structured_tris,
    structured_tris_from_coords,
    tag_boundaries,
)
from .stabilization import PressureConstraint, RiemannSolver, SolverConfig

Field2 = Callable[[np.ndarray], np.ndarray]
Field1 = Callable[[np.ndarray], np.ndarray]


@dataclass
class CaseDefinition:
    """A flow problem: tagging rules, data evaluators, exact fields if any.

    Evaluators take points of shape (n, 2); vector fields return (n, 2),
    scalars (n,), Voigt tensors (n, 3). exact_stress is the deviatoric
    stress sigma_d; the mixed variable is L = -sigma_d / nu.
    """

    name: str
    nu: float
    convection: bool
    tag_rules: Sequence[TagRule]
    u_dirichlet: Field2
    neumann_traction: Optional[Field2] = None
    body_force: Field2 = None  # type: ignore[assignment]
    exact_velocity: Optional[Field2] = None
    exact_pressure: Optional[Field1] = None
    exact_stress: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pure_dirichlet: bool = False

    def __post_init__(self) -> None:
        if self.body_force is None:
            self.body_force = lambda x: np.zeros_like(np.asarray(x, dtype=float))

    def tag(self, mesh: Mesh) -> Mesh:
        return tag_boundaries(mesh, self.tag_rules)

    def default_config(self, **overrides) -> SolverConfig:
        kw = dict(
            nu=self.nu,
            pressure_constraint=(
                PressureConstraint.ZERO_MEAN_LAGRANGE
                if self.pure_dirichlet
                else PressureConstraint.NONE
            ),
        )
        kw.update(overrides)
        return SolverConfig(**kw)

    def exact_mixed(self, x: np.ndarray) -> np.ndarray:
        """Exact mixed variable L = -sigma_d / nu in Voigt components."""
        if self.exact_stress is None:
            raise ValueError(f"case {self.name!r} has no exact stress")
        return -np.asarray(self.exact_stress(x)) / self.nu

    def pressure_mean_target(self, mesh: Mesh) -> float:
        """Lagrange-constraint target sum_e |Omega_e| p_e.

        Uses the exact pressure at centroids when available so the discrete
        additive gauge matches the exact one; zero otherwise.
        """
        if self.exact_pressure is None:
            return 0.0
        return float(mesh.areas @ np.asarray(self.exact_pressure(mesh.centroids)))


def synthetic_stokes() -> CaseDefinition:
    """Trigonometric manufactured Stokes flow on the unit square, nu = 1.

    Neumann boundary on x2 = 0, Dirichlet elsewhere. The velocity is
    divergence-free, so sigma_d = 2 nu grad_s(u).
    """
    nu = 1.0
    two_pi = 2.0 * np.pi

    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack(
            [
                (1.0 - np.cos(two_pi * x1)) * np.sin(two_pi * x2),
                -np.sin(two_pi * x1) * (1.0 - np.cos(two_pi * x2)),
            ],
            axis=-1,
        )

    def p(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.cos(np.pi * x1) + np.cos(np.pi * x2)

    def stress(x):
        # sigma_d = nu * (2 grad_s u) since div u = 0
        x1, x2 = x[..., 0], x[..., 1]
        s11 = 2.0 * nu * two_pi * np.sin(two_pi * x1) * np.sin(two_pi * x2)
        s12 = nu * two_pi * (
            (1.0 - np.cos(two_pi * x1)) * np.cos(two_pi * x2)
            - np.cos(two_pi * x1) * (1.0 - np.cos(two_pi * x2))
        )
        return np.stack([s11, -s11, s12], axis=-1)

    def body_force(x):
        # s = grad p - nu * lap u
        x1, x2 = x[..., 0], x[..., 1]
        lap1 = 4.0 * np.pi**2 * np.sin(two_pi * x2) * (2.0 * np.cos(two_pi * x1) - 1.0)
        lap2 = 4.0 * np.pi**2 * np.sin(two_pi * x1) * (1.0 - 2.0 * np.cos(two_pi * x2))
        return np.stack(
            [
                -np.pi * np.sin(np.pi * x1) - nu * lap1,
                -np.pi * np.sin(np.pi * x2) - nu * lap2,
            ],
            axis=-1,
        )

    def traction(x):
        # g = sigma n on the bottom boundary, n = (0, -1)
        x1 = x[..., 0]
        s12 = 2.0 * nu * np.pi * (1.0 - np.cos(two_pi * x1))
        return np.stack([-s12, np.cos(np.pi * x1) + 1.0], axis=-1)

    tol = 1e-12
    rules: list[TagRule] = [
        (lambda b: abs(b[1]) <= tol, BoundaryKind.NEUMANN),
        (lambda b: abs(b[1]) > tol, BoundaryKind.DIRICHLET),
    ]
    return CaseDefinition(
        name="stokes-synthetic",
        nu=nu,
        convection=False,
        tag_rules=rules,
        u_dirichlet=u,
        neumann_traction=traction,
        body_force=body_force,
        exact_velocity=u,
        exact_pressure=p,
        exact_stress=stress,
        pure_dirichlet=False,
    )


def couette(
    r_inner: float = 1.0,
    r_outer: float = 2.0,
    omega_inner: float = 0.0,
    omega_outer: float = 0.5,
) -> CaseDefinition:
    """Co-axial Couette flow on the annulus, an exact Navier-Stokes solution.

    The azimuthal velocity is C1 r + C2 / r and the centripetal term is
    balanced by the pressure gradient, so the body force is zero. The
    pressure constant is fixed so p(r_outer) = 1; nu = 1 (Re = 1 with the
    gap width and outer speed as reference scales).
    """
    if not (0.0 < r_inner < r_outer):
        raise ValueError("radii must satisfy 0 < r_inner < r_outer")
    nu = 1.0
    c1 = (omega_outer * r_outer**2 - omega_inner * r_inner**2) / (
        r_outer**2 - r_inner**2
    )
    c2 = (omega_inner - omega_outer) * r_inner**2 * r_outer**2 / (
        r_outer**2 - r_inner**2
    )

    def p_raw(r):
        return c1**2 * r**2 / 2.0 + 2.0 * c1 * c2 * np.log(r) - c2**2 / (2.0 * r**2)

    c0 = 1.0 - p_raw(np.asarray(r_outer))

    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        r2 = x1**2 + x2**2
        # u = u_phi(r) * (-x2, x1)/r with u_phi = c1 r + c2 / r
        fac = c1 + c2 / r2
        return np.stack([-fac * x2, fac * x1], axis=-1)

    def p(x):
        r = np.hypot(x[..., 0], x[..., 1])
        return p_raw(r) + c0

    def stress(x):
        x1, x2 = x[..., 0], x[..., 1]
        r4 = (x1**2 + x2**2) ** 2
        e11 = 4.0 * c2 * x1 * x2 / r4
        e12 = -2.0 * c2 * (x1**2 - x2**2) / r4
        return nu * np.stack([e11, -e11, e12], axis=-1)

    r_mid = 0.5 * (r_inner + r_outer)
    rules: list[TagRule] = [
        (lambda b: np.hypot(b[0], b[1]) < r_mid, BoundaryKind.DIRICHLET),
        (lambda b: np.hypot(b[0], b[1]) >= r_mid, BoundaryKind.DIRICHLET),
    ]
    return CaseDefinition(
        name="couette",
        nu=nu,
        convection=True,
        tag_rules=rules,
        u_dirichlet=u,
        exact_velocity=u,
        exact_pressure=p,
        exact_stress=stress,
        pure_dirichlet=True,
    )


def cavity(reynolds: float) -> CaseDefinition:
    """Lid-driven cavity on the unit square: u = (1, 0) on the top lid,
    no-slip on the other walls, nu = 1/Re, no exact solution."""
    if reynolds <= 0.0:
        raise ValueError("Reynolds number must be positive")
    tol = 1e-9

    def u(x):
        out = np.zeros_like(np.asarray(x, dtype=float))
        out[..., 0] = np.where(x[..., 1] > 1.0 - tol, 1.0, 0.0)
        return out

    rules: list[TagRule] = [(lambda b: True, BoundaryKind.DIRICHLET)]
    return CaseDefinition(
        name="cavity",
        nu=1.0 / reynolds,
        convection=True,
        tag_rules=rules,
        u_dirichlet=u,
        pure_dirichlet=True,
    )


def _graded_coords(n: int, first_layer: float) -> np.ndarray:
    """Symmetric point distribution on [0, 1]: n intervals, geometric
    grading from both walls with the given first-layer height."""
    if n % 2 != 0:
        raise ValueError("interval count must be even for symmetric grading")
    m = n // 2
    if first_layer * m >= 0.5:
        raise ValueError("first layer too thick for this count (ratio <= 1)")

    def gap(ratio):
        return first_layer * (ratio**m - 1.0) / (ratio - 1.0) - 0.5

    lo, hi = 1.0 + 1e-12, 1.5
    if gap(hi) < 0.0:
        raise ValueError("grading ratio out of (1, 1.5): first layer too thin")
    ratio = brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16)
    steps = first_layer * ratio ** np.arange(m)
    half = np.concatenate([[0.0], np.cumsum(steps)])
    half[-1] = 0.5
    return np.concatenate([half, 1.0 - half[-2::-1]])


def graded_cavity_mesh(level: int) -> Mesh:
    """Boundary-graded triangular cavity mesh.

    Level i has (24*2^i)^2 * 2 triangles with first-layer height 1e-2/i
    toward all four walls and a geometric interior growth.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 24 * 2**level
    coords = _graded_coords(n, 1e-2 / level)
    return structured_tris_from_coords(coords, coords)


def mesh_for_case(
    case: CaseDefinition,
    level: int,
    cell_type: CellType = CellType.QUAD,
) -> Mesh:
    """Paper mesh family for a case: unit-square 8*2^i per side for the
    synthetic Stokes flow, 4:1 annulus for Couette, graded cavity mesh."""
    if case.name == "stokes-synthetic":
        n = 8 * 2**level
        gen = (
            generate_structured_quads
            if cell_type is CellType.QUAD
            else generate_structured_tris
        )
        return case.tag(gen(n, n))
    if case.name == "couette":
        return case.tag(generate_annulus(16 * 2**level, 4 * 2**level, 1.0, 2.0, cell_type))
    if case.name == "cavity":
        return case.tag(graded_cavity_mesh(level))
    raise ValueError(f"no mesh family for case {case.name!r}")


def case_by_name(name: str, reynolds: float | None = None) -> CaseDefinition:
    if name == "stokes-synthetic":
        return synthetic_stokes()
    if name == "couette":
        return couette()
    if name == "cavity":
        return cavity(reynolds if reynolds is not None else 1000.0)
    raise ValueError(f"unknown case {name!r}")
