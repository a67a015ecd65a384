"""Reference values from the adjoint (Heisenberg) master equation.

    d tau / dt = G^* tau + tau G + sum_k L_k^* tau L_k,   tau_0 = A,

and the exact observable mean is ``<z0, tau_t z0>``. Two independent
backends are provided: the exponential of the vectorized generator (default)
and an adaptive Runge-Kutta integration of the matrix ODE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ReferenceSolverError
from .linalg import adjoint, expm
from .sse import SSEProblem

__all__ = [
    "ReferenceSolution",
    "lindblad_generator_apply",
    "solve_reference",
    "superoperator",
]

RK_RTOL = 1e-11
RK_ATOL = 1e-13
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class ReferenceSolution:
    times: np.ndarray
    tau: np.ndarray
    expectation: np.ndarray


def lindblad_generator_apply(p: SSEProblem, tau) -> np.ndarray:
    """Right-hand side ``G^* tau + tau G + sum_k L_k^* tau L_k``."""
    tau = np.asarray(tau, dtype=complex)
    if tau.shape != (p.dim, p.dim):
        raise ValueError(f"tau must have shape {(p.dim, p.dim)}, got {tau.shape}")
    out = adjoint(p.g) @ tau + tau @ p.g
    for lk in p.lindblads:
        out = out + adjoint(lk) @ tau @ lk
    return out


def superoperator(p: SSEProblem) -> np.ndarray:
    """Matrix of the generator acting on row-major ``tau.ravel()``.

    Uses ``vec(X Y Z) = (X kron Z^T) vec(Y)`` for row-major flattening.
    """
    d = p.dim
    eye = np.eye(d, dtype=complex)
    s = np.kron(adjoint(p.g), eye) + np.kron(eye, p.g.T)
    for lk in p.lindblads:
        s = s + np.kron(adjoint(lk), lk.T)
    return s


def _check_times(times, horizon):
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if np.any(t < 0) or np.any(t > horizon * (1 + 1e-12)) or np.any(np.diff(t) < 0):
        raise ValueError("times must be non-decreasing and lie in [0, horizon]")
    return t


def _superop_backend(p, t):
    d = p.dim
    s = superoperator(p)
    v = p.observable.ravel().copy()
    cache: dict[float, np.ndarray] = {}
    taus = []
    prev = 0.0
    for tj in t:
        h = float(tj - prev)
        if h > 0:
            key = round(h, 12)
            if key not in cache:
                cache[key] = expm(s * h)
            v = cache[key] @ v
        taus.append(v.reshape(d, d).copy())
        prev = float(tj)
    return np.array(taus)


def _rk_backend(p, t):
    d = p.dim

    def rhs(_, y):
        return lindblad_generator_apply(p, y.reshape(d, d)).ravel()

    if t[-1] == 0.0:
        return np.array([p.observable.copy() for _ in t])
    grid, where = np.unique(t, return_inverse=True)
    sol = solve_ivp(
        rhs,
        (0.0, float(t[-1])),
        p.observable.ravel().astype(complex),
        method="RK45",
        t_eval=grid,
        rtol=RK_RTOL,
        atol=RK_ATOL,
    )
    if not sol.success:
        raise ReferenceSolverError(f"RK integration failed: {sol.message}")
    return sol.y.T.reshape(len(grid), d, d)[where]


def solve_reference(p: SSEProblem, horizon: float, times, backend: str = "superop") -> ReferenceSolution:
    """Evolve ``tau`` from the observable and evaluate ``<z0, tau_t z0>``.

    Parameters
    ----------
    backend
        ``"superop"`` exponentiates the ``d^2 x d^2`` generator once per
        distinct output spacing; ``"rk"`` integrates with adaptive RK45 at
        ``rtol=1e-9``, ``atol=1e-12``.
    """
    t = _check_times(times, horizon)
    if backend == "superop":
        taus = _superop_backend(p, t)
    elif backend == "rk":
        taus = _rk_backend(p, t)
    else:
        raise ValueError(f"unknown backend {backend!r}; expected 'superop' or 'rk'")
    if not np.all(np.isfinite(taus)):
        raise ReferenceSolverError("reference solution has non-finite entries")
    z0 = p.z0
    vals = np.einsum("i,tij,j->t", np.conj(z0), taus, z0)
    if p.observable_is_hermitian():
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.max(np.abs(vals.imag)) > IMAG_TOL * scale:
            raise ReferenceSolverError(
                f"expectation has imaginary part {np.max(np.abs(vals.imag)):.3e}"
            )
        vals = vals.real
    return ReferenceSolution(times=t, tau=taus, expectation=vals)
