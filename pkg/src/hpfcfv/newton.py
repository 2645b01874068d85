"""Newton-Raphson driver on the condensed global system.

Each iteration freezes the stabilization at the current iterate, evaluates
the residual and the consistent Jacobian with that same tau, solves the
condensed face system and recovers the cell increments. The residual of
record for the new iterate is evaluated with the tau that produced it (one
iterate behind), so the recorded sequence shows the plain-Newton quadratic
contraction; the stabilization refreshes before the next step. Plain
Newton, no line search; a step-halving safeguard triggers only on
non-finite residuals.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from ._celldata import build_cell_face_data, evaluate_case_data
from .cases import CaseDefinition
from .mesh import Mesh
from .ns import (
    SolutionState,
    assemble_newton_system,
    cell_blocks,
    gather_face_increments,
    lagged_tau,
    recover_cell_increments,
    residuals,
)
from .stabilization import PressureConstraint, SolverConfig
from .stokes import (
    append_zero_mean_constraint,
    assemble_stokes,
    recover_stokes_cells,
    solve_linear,
)

logger = logging.getLogger(__name__)


class InitialGuess(Enum):
    ZERO = "zero"
    STOKES_SOLVE = "stokes"


@dataclass
class NewtonReport:
    """History of one nonlinear solve.

    residual_norms[m] is the norm of all five residual families at iterate
    m, evaluated with the stabilization lagged one iterate behind (the tau
    of the step that produced the iterate); entry 0 uses the initial state
    for both. uhat_lag stores that lagged hybrid velocity so the final
    residual can be re-evaluated from scratch.
    """

    residual_norms: list[float] = field(default_factory=list)
    linear_residuals: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    uhat_lag: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        """Number of linear solves performed."""
        return len(self.linear_residuals)

    def tail_exponent(self) -> float:
        """Contraction exponent of the final pair: log r_k / log r_{k-1}.

        Plain quadratic Newton gives about 2 (each step roughly squares the
        residual); meaningful once the tail norms are below one.
        """
        if len(self.residual_norms) < 2:
            return float("nan")
        r_prev, r_last = self.residual_norms[-2:]
        if not (0.0 < r_last < r_prev < 1.0):
            return float("nan")
        return float(np.log(r_last) / np.log(r_prev))

    def write_csv(self, path: str | Path) -> None:
        lines = ["iter,residual_norm"]
        lines += [f"{k},{r:.17g}" for k, r in enumerate(self.residual_norms)]
        Path(path).write_text("\n".join(lines) + "\n")


def _constraint_target(config: SolverConfig, case: CaseDefinition, mesh: Mesh):
    if config.pressure_constraint is PressureConstraint.NONE:
        return None
    return case.pressure_mean_target(mesh)


def solve_stokes_case(
    mesh: Mesh,
    config: SolverConfig,
    case: CaseDefinition,
    tau_p_faces=None,
) -> SolutionState:
    """One-shot linear solve through the direct Stokes path, lifted into a
    SolutionState."""
    system = assemble_stokes(mesh, config, case, tau_p_faces)
    target = _constraint_target(config, case, mesh)
    if target is not None:
        system = append_zero_mean_constraint(system, mesh, target)
    x = solve_linear(system)
    L, u, p = recover_stokes_cells(mesh, config, case, x, tau_p_faces)
    dofmap = system.dofmap
    n_ub = dofmap.n_ub
    return SolutionState(
        L=L,
        u=u,
        p=p,
        uhat=x[: 2 * n_ub].reshape(n_ub, 2).copy(),
        phat=x[2 * n_ub : 2 * n_ub + dofmap.n_faces].copy(),
        lam=float(x[-1]) if system.bordered else 0.0,
    )


def initial_guess(
    mesh: Mesh,
    config: SolverConfig,
    case: CaseDefinition,
    strategy: InitialGuess,
) -> SolutionState:
    """Zero state, or the Stokes solution of the same boundary-value data."""
    if strategy is InitialGuess.ZERO:
        data = build_cell_face_data(mesh)
        return SolutionState.zeros(data)
    return solve_stokes_case(mesh, config, case)


def default_strategy(config: SolverConfig, case: CaseDefinition) -> InitialGuess:
    """Stokes initialization once convection is strong (Re >= 100)."""
    if case.convection and 1.0 / config.nu >= 100.0:
        return InitialGuess.STOKES_SOLVE
    return InitialGuess.ZERO


def newton_solve(
    mesh: Mesh,
    config: SolverConfig,
    case: CaseDefinition,
    initial: Optional[SolutionState] = None,
    tau_p_faces=None,
) -> tuple[SolutionState, NewtonReport]:
    """Run Newton-Raphson until the lagged-tau residual norm (all five
    residual families) drops to newton_tol or max_iter is exhausted.

    Raises on linear-solve failure; non-finite residuals trigger step
    halving on the last increment before giving up.
    """
    t0 = time.perf_counter()
    data = build_cell_face_data(mesh)
    cased = evaluate_case_data(data, case)
    target = _constraint_target(config, case, mesh)

    state = initial.copy() if initial is not None else initial_guess(
        mesh, config, case, default_strategy(config, case)
    )
    report = NewtonReport(uhat_lag=state.uhat.copy())
    n_ub = data.dofmap.n_ub
    nf = data.dofmap.n_faces

    tau = lagged_tau(data, cased, config, case, state)
    res = residuals(data, cased, config, case, state, tau, tau_p_faces)
    rnorm = res.norm()
    report.residual_norms.append(rnorm)

    while True:
        if not np.isfinite(rnorm):
            report.wall_time = time.perf_counter() - t0
            logger.error("non-finite residual; returning last state")
            return state, report
        if rnorm <= config.newton_tol:
            report.converged = True
            break
        if report.iterations >= config.newton_max_iter:
            break

        blocks = cell_blocks(data, cased, config, case, state, tau, tau_p_faces)
        A, b = assemble_newton_system(
            blocks, config, res, state, target, tau_p_faces
        )
        try:
            x = spla.splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            raise RuntimeError(
                f"Newton linear solve failed at iteration "
                f"{report.iterations}: {exc}"
            ) from exc
        report.linear_residuals.append(float(np.linalg.norm(A @ x - b)))

        dlam = gather_face_increments(blocks, x)
        dL, du, dp = recover_cell_increments(blocks, dlam)
        duh = x[: 2 * n_ub].reshape(n_ub, 2)
        dph = x[2 * n_ub : 2 * n_ub + nf]
        report.uhat_lag = state.uhat.copy()

        def apply(scale: float) -> None:
            state.L += scale * dL
            state.u += scale * du
            state.p += scale * dp
            state.uhat += scale * duh
            state.phat += scale * dph

        apply(1.0)
        if target is not None:
            state.lam = float(x[-1])
        net = 1.0
        for _ in range(8):
            # residual of record: new iterate, the tau that produced it
            res_rec = residuals(
                data, cased, config, case, state, tau, tau_p_faces
            )
            if np.isfinite(res_rec.norm()):
                break
            # retreat to half of the currently applied step
            apply(-net / 2.0)
            net /= 2.0
            logger.warning("non-finite residual; halving the Newton step")
        else:
            res_rec = residuals(
                data, cased, config, case, state, tau, tau_p_faces
            )
        rnorm = res_rec.norm()
        report.residual_norms.append(rnorm)
        logger.debug("newton iter %d residual %.3e", report.iterations, rnorm)

        # refresh the stabilization for the next step; residual and
        # Jacobian of that step both use this tau (consistent pair)
        tau = lagged_tau(data, cased, config, case, state)
        res = residuals(data, cased, config, case, state, tau, tau_p_faces)

    report.wall_time = time.perf_counter() - t0
    return state, report
