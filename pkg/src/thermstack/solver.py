"""Steady-state solve of G·T = P.

The working solver is Jacobi-preconditioned conjugate gradients started
from T = ambient.  ``solve_dense`` is an independent Cholesky solve used to
check it on small systems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesher import SparseSystem

DEFAULT_REL_TOL = 1e-10
DENSE_LIMIT = 5000


class SolverError(RuntimeError):
    pass


class NonConvergence(SolverError):
    def __init__(self, iterations: int, residual: float, target: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"CG did not converge in {iterations} iterations: residual {residual:.3e} > target {target:.3e}"
        )


@dataclass(frozen=True, eq=False)
class TemperatureField:
    values: np.ndarray
    iterations: int
    residual: float
    method: str = "pcg"

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise SolverError("temperature field contains non-finite values")


def default_max_iter(n: int) -> int:
    return max(10, int(50 * math.sqrt(n)))


def residual_norm(system: SparseSystem, field: TemperatureField | np.ndarray) -> float:
    T = field.values if isinstance(field, TemperatureField) else np.asarray(field, dtype=float)
    if T.shape != (system.n,):
        raise ValueError(f"field has {T.shape} values, system has {system.n} unknowns")
    return float(np.linalg.norm(system.G @ T - system.P))


def solve_steady(system: SparseSystem, rel_tol: float = DEFAULT_REL_TOL, max_iter: int | None = None,
                 x0: np.ndarray | None = None) -> TemperatureField:
    """Preconditioned CG until ``||G·T - P|| <= rel_tol * ||P||``.

    Raises :class:`NonConvergence` when ``max_iter`` (default 50·sqrt(N))
    is exhausted.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    G, b = system.G, system.P
    n = system.n
    max_iter = default_max_iter(n) if max_iter is None else max_iter
    inv_diag = 1.0 / G.diagonal()
    if not np.all(np.isfinite(inv_diag)) or np.any(inv_diag <= 0):
        raise SolverError("matrix diagonal must be positive")

    x = np.full(n, system.ambient) if x0 is None else np.array(x0, dtype=float)
    target = rel_tol * float(np.linalg.norm(b))
    r = b - G @ x
    rnorm = float(np.linalg.norm(r))
    if rnorm <= target:
        return TemperatureField(x, 0, rnorm)
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        q = G @ p
        pq = float(p @ q)
        if not pq > 0:
            if math.isnan(pq):
                raise SolverError("NaN encountered in CG; the system is invalid")
            raise SolverError("non-positive curvature in CG; matrix is not positive definite")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        rnorm = float(np.linalg.norm(r))
        if math.isnan(rnorm):
            raise SolverError("NaN encountered in CG; the system is invalid")
        if rnorm <= target:
            # recompute against drift of the recursive residual
            rnorm = residual_norm(system, x)
            if rnorm <= target:
                return TemperatureField(x, it, rnorm)
            r = b - G @ x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(max_iter, rnorm, target)


def solve_dense(system: SparseSystem) -> TemperatureField:
    if system.n > DENSE_LIMIT:
        raise ValueError(f"dense solve limited to {DENSE_LIMIT} unknowns, system has {system.n}")
    A = system.G.toarray()
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"matrix is not positive definite: {exc}") from exc
    T = scipy.linalg.cho_solve(factor, system.P)
    return TemperatureField(T, 0, residual_norm(system, T), method="cholesky")
