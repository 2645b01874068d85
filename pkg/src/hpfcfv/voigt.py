"""Voigt-notation kernels for the symmetric mixed variable.

A symmetric 2x2 tensor is stored as the 3-vector [T11, T22, T12]. Symmetry
is structural: there is no redundant component that could violate it. The
normal matrix maps a velocity-like vector onto face-normal tensor
contributions, and the deviatoric operator removes the trace part with the
2/3 compressibility factor kept (incompressibility is enforced weakly).

Only two spatial dimensions are supported; the three-dimensional variants
are rejected at runtime.
"""
from __future__ import annotations

import numpy as np

#: Number of spatial dimensions handled by these kernels.
N_SD = 2
#: Stored components of a symmetric 2x2 tensor: [11, 22, 12].
M_SD = 3

#: Quadratic weights making the Voigt dot product Frobenius-consistent
#: (the off-diagonal component appears twice in the dense tensor).
FROBENIUS_WEIGHTS = np.array([1.0, 1.0, 2.0])

_UNIT_TOL = 1e-10


def _check_unit_normal(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape[-1] != 2:
        raise ValueError(f"expected 2-vectors, got shape {n.shape}")
    norm = np.sqrt(np.sum(n * n, axis=-1))
    if not np.all(np.abs(norm - 1.0) <= _UNIT_TOL):
        raise ValueError("normal vector is not unit length within 1e-10")
    return n


def pack(tensor: np.ndarray) -> np.ndarray:
    """Pack a symmetric 2x2 tensor (or batch) into [T11, T22, T12]."""
    tensor = np.asarray(tensor, dtype=float)
    return np.stack(
        [tensor[..., 0, 0], tensor[..., 1, 1], tensor[..., 0, 1]], axis=-1
    )


def unpack(v: np.ndarray) -> np.ndarray:
    """Expand [T11, T22, T12] (or batch) back to a dense symmetric tensor."""
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2), dtype=float)
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 1]
    out[..., 0, 1] = v[..., 2]
    out[..., 1, 0] = v[..., 2]
    return out


def normal_matrix(n: np.ndarray) -> np.ndarray:
    """Normal matrix N(n): 3x2 with rows [n1, 0], [0, n2], [n2, n1].

    Requires |n| = 1 within 1e-10. Accepts a batch of normals with shape
    (..., 2) and returns (..., 3, 2).
    """
    n = _check_unit_normal(n)
    out = np.zeros(n.shape[:-1] + (3, 2), dtype=float)
    out[..., 0, 0] = n[..., 0]
    out[..., 1, 1] = n[..., 1]
    out[..., 2, 0] = n[..., 1]
    out[..., 2, 1] = n[..., 0]
    return out


def deviatoric_operator(n_sd: int = 2) -> np.ndarray:
    """Constant deviatoric operator D, exactly
    [[4/3, -2/3, 0], [-2/3, 4/3, 0], [0, 0, 1]].

    The top-left block is 2*I - (2/3)*J acting on the direct-strain
    components; the rotation component passes through unchanged.
    """
    if n_sd != N_SD:
        raise ValueError(f"only n_sd = 2 is supported, got {n_sd}")
    four3, two3 = 4.0 / 3.0, 2.0 / 3.0
    return np.array(
        [
            [four3, -two3, 0.0],
            [-two3, four3, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )


_DEV = deviatoric_operator()


def strain_rate_contribution(n: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Voigt image of v n^T + n v^T - (2/3)(n.v) I, computed as D N(n) v.

    The unpacked result is symmetric and trace-free. Batched over leading
    dimensions of matching shape.
    """
    N = normal_matrix(n)
    v = np.asarray(v, dtype=float)
    return np.einsum("ab,...bj,...j->...a", _DEV, N, v)


def traction(L_voigt: np.ndarray, n: np.ndarray, nu: float) -> np.ndarray:
    """Viscous traction nu * N(n)^T L for a Voigt-packed symmetric L.

    Equals nu * (dense L) @ n. Requires nu > 0 and |n| = 1.
    """
    if nu <= 0.0:
        raise ValueError("viscosity must be positive")
    N = normal_matrix(n)
    L_voigt = np.asarray(L_voigt, dtype=float)
    return nu * np.einsum("...ai,...a->...i", N, L_voigt)
