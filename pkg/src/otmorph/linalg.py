"""Jacobi-preconditioned conjugate gradient for sparse SPD(semi-definite) systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverDivergenceError


@dataclass
class CGInfo:
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def pcg(A: sp.spmatrix, b: np.ndarray, tol: float, max_iter: int, x0=None) -> tuple[np.ndarray, CGInfo]:
    """Solve ``A x = b`` to relative residual ``||b - Ax|| / ||b|| <= tol``.

    Works for consistent singular systems too, provided ``b`` lies in the
    range of ``A``. Raises :class:`SolverDivergenceError` after ``max_iter``
    iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    info = CGInfo()
    if bnorm == 0.0 and x0 is None:
        return x, info
    scale = bnorm if bnorm > 0.0 else 1.0

    diag = A.diagonal()
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 1.0)

    r = b - A @ x if x0 is not None else b.copy()
    rel = float(np.linalg.norm(r)) / scale
    info.history.append(rel)
    if rel <= tol:
        info.residual = rel
        return x, info
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = A @ p
        curv = float(p @ Ap)
        if curv <= 0.0:
            info.iterations = it
            info.residual = rel
            raise SolverDivergenceError(
                f"non-positive curvature {curv:.3e} at CG iteration {it}", rel, info.history
            )
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / scale
        info.history.append(rel)
        if rel <= tol:
            info.iterations = it
            info.residual = rel
            return x, info
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    info.iterations = max_iter
    info.residual = rel
    raise SolverDivergenceError(
        f"CG did not converge in {max_iter} iterations", rel, info.history
    )
