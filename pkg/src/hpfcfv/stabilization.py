"""Face stabilization coefficients and solver configuration.

All stabilizations are isotropic: they are stored as scalars and applied as
scalar multiples of the identity. The convective coefficient comes from a
Riemann-solver choice (Lax-Friedrichs or HLL) with a cut-off floor; it is
evaluated with the hybrid velocity from the previous nonlinear iterate
(lagged), which keeps the Jacobian consistent with the residual.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np


class RiemannSolver(Enum):
    LF = "lf"
    HLL = "hll"


class PressureConstraint(Enum):
    NONE = "none"
    ZERO_MEAN_LAGRANGE = "zero_mean"


@dataclass(frozen=True)
class SolverConfig:
    """Numerical parameters of a solve.

    nu is the kinematic viscosity (1/Re for unit reference scales); beta
    scales the viscous stabilization; xi is the convective cut-off; tau_p
    penalizes the face/cell pressure mismatch in the mass flux.
    """

    nu: float
    beta: float = 10.0
    xi: float = 5e-2
    tau_p: float = 1e-1
    riemann: RiemannSolver = RiemannSolver.HLL
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    pressure_constraint: PressureConstraint = PressureConstraint.NONE

    def __post_init__(self) -> None:
        for name in ("nu", "beta", "xi", "tau_p"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")

    def with_(self, **kwargs) -> "SolverConfig":
        return replace(self, **kwargs)


def tau_diffusive(config: SolverConfig) -> float:
    """Viscous stabilization beta * nu (applied as a multiple of I)."""
    return config.beta * config.nu


def tau_convective(config: SolverConfig, u_hat: np.ndarray, n: np.ndarray):
    """Convective stabilization at a face.

    LF: max(2|u_hat.n|, xi). HLL: max(2(u_hat.n), xi). Both are bounded
    below by the cut-off xi. Accepts batched u_hat/n of shape (..., 2) and
    returns the matching scalar batch.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    un = np.sum(u_hat * n, axis=-1)
    if config.riemann is RiemannSolver.LF:
        val = np.maximum(2.0 * np.abs(un), config.xi)
    else:
        val = np.maximum(2.0 * un, config.xi)
    return val if val.ndim else float(val)


def tau_total(config: SolverConfig, u_hat: np.ndarray, n: np.ndarray):
    """Total stabilization tau = tau_diffusive + tau_convective."""
    return tau_diffusive(config) + tau_convective(config, u_hat, n)


_CONFIG_KEYS = {
    "nu",
    "beta",
    "xi",
    "tau_p",
    "riemann",
    "newton_tol",
    "newton_max_iter",
    "pressure_constraint",
}


def load_config(path: str | Path, **overrides) -> SolverConfig:
    """Load a SolverConfig from a JSON file.

    Recognized keys: nu, beta, xi, tau_p, riemann (lf|hll), newton_tol,
    newton_max_iter, pressure_constraint (none|zero_mean). Keyword
    overrides win over file values.
    """
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    raw.update(overrides)
    if "riemann" in raw and not isinstance(raw["riemann"], RiemannSolver):
        raw["riemann"] = RiemannSolver(str(raw["riemann"]).lower())
    if "pressure_constraint" in raw and not isinstance(
        raw["pressure_constraint"], PressureConstraint
    ):
        raw["pressure_constraint"] = PressureConstraint(
            str(raw["pressure_constraint"]).lower()
        )
    return SolverConfig(**raw)
