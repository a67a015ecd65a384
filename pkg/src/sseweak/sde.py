"""Euler-exponential weak schemes for real SDEs ``dX = b(t, X) dt + sigma(t, X) dW``.

States are handled in batches: a state array has shape ``(B, d)``, and the
user-supplied coefficient functions must accept such batches::

    drift(t, x)      -> (B, d)
    jacobian(t, x)   -> (B, d, d)
    diffusion(t, x)  -> (B, d, n)

Single states of shape ``(d,)`` are accepted by the one-step functions and
promoted internally.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng
from .errors import StepError
from .linalg import expm, solve
from .montecarlo import DEFAULT_BATCHES, batch_means_ci, fixed_order_mean

__all__ = [
    "SDEProblem",
    "SDEScheme",
    "WeakEstimate",
    "check_jacobian",
    "euler_exp_step",
    "explicit_step",
    "finite_difference_jacobian",
    "implicit_exp_step",
    "richardson",
    "run_weak",
]


class SDEScheme(str, enum.Enum):
    SCHEME1 = "scheme1"
    IMPLICIT_V1 = "implicit_v1"


@dataclass(frozen=True)
class SDEProblem:
    """Coefficients of a real Itô SDE.

    ``jacobian`` may be omitted, in which case a central finite difference of
    ``drift`` is used. Set ``constant_jacobian`` when the drift is affine so
    the propagator is computed once per run instead of once per step.
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    jacobian: Callable | None = None
    constant_jacobian: bool = False

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ValueError("dim and noise_dim must be positive")

    def jb(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.jacobian is not None:
            return np.asarray(self.jacobian(t, x), dtype=float)
        return finite_difference_jacobian(self.drift, t, x)


def finite_difference_jacobian(drift: Callable, t: float, x: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + |x_j|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    b, d = x.shape
    jac = np.empty((b, d, d))
    for j in range(d):
        h = 1e-6 * (1.0 + np.abs(x[:, j]))
        up = x.copy()
        down = x.copy()
        up[:, j] += h
        down[:, j] -= h
        jac[:, :, j] = (np.asarray(drift(t, up)) - np.asarray(drift(t, down))) / (2.0 * h[:, None])
    return jac


def check_jacobian(problem: SDEProblem, t: float, x, rtol: float = 1e-5) -> float:
    """Return the max relative deviation between the analytic and FD Jacobians.

    Raises ``ValueError`` if it exceeds ``rtol``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if problem.jacobian is None:
        return 0.0
    analytic = np.asarray(problem.jacobian(t, x), dtype=float)
    fd = finite_difference_jacobian(problem.drift, t, x)
    dev = float(np.max(np.abs(analytic - fd)) / (1.0 + np.max(np.abs(fd))))
    if dev > rtol:
        raise ValueError(f"analytic Jacobian deviates from finite differences by {dev:.3e}")
    return dev


def _increment(problem, t, x, dt, xi, jb):
    drift = np.asarray(problem.drift(t, x), dtype=float)
    sigma = np.asarray(problem.diffusion(t, x), dtype=float)
    lin = np.einsum("bij,bj->bi", jb, x)
    return x + dt * (drift - lin) + np.sqrt(dt) * np.einsum("bij,bj->bi", sigma, xi)


def _batched(fn):
    # Lift a batch-only step to also accept one state of shape (d,).
    def wrapper(problem, t, x, dt, xi, *args, **kwargs):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if x.ndim == 1:
            return fn(problem, t, x[None, :], dt, xi[None, :], *args, **kwargs)[0]
        return fn(problem, t, x, dt, xi, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _check_step_args(problem, dt, xi):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if xi.shape[-1] != problem.noise_dim:
        raise ValueError(f"expected {problem.noise_dim} noise entries, got {xi.shape[-1]}")


def _apply(propagator, y):
    if propagator.ndim == 2:
        return y @ propagator.T
    return np.einsum("bij,bj->bi", propagator, y)


def _finite_or_raise(y, what):
    if not np.all(np.isfinite(y)):
        bad = np.flatnonzero(~np.all(np.isfinite(y), axis=-1))
        raise StepError(f"non-finite {what}", trajectory=int(bad[0]))
    return y


@_batched
def euler_exp_step(problem: SDEProblem, t, x, dt, xi, propagator=None):
    """One step of the Euler-exponential scheme.

    ``exp(Jb dt) (x + dt (b - Jb x) + sqrt(dt) sigma xi)`` with ``Jb`` the
    drift Jacobian at ``(t, x)``. A precomputed ``propagator`` (``(d, d)``)
    replaces the per-step exponential for affine drifts.
    """
    _check_step_args(problem, dt, xi)
    jb = _finite_or_raise(problem.jb(t, x), "drift Jacobian")
    y = _finite_or_raise(_increment(problem, t, x, dt, xi, jb), "increment")
    if propagator is None:
        propagator = expm(jb * dt).real
    out = _apply(propagator, y)
    return _finite_or_raise(out, "state")


@_batched
def implicit_exp_step(problem: SDEProblem, t, x, dt, xi, propagator=None):
    """Linearly implicit variant: ``(I - dt Jb)^{-1}`` replaces ``exp(Jb dt)``.

    Raises `SingularMatrixError` when ``I - dt Jb`` is singular.
    """
    _check_step_args(problem, dt, xi)
    jb = _finite_or_raise(problem.jb(t, x), "drift Jacobian")
    y = _finite_or_raise(_increment(problem, t, x, dt, xi, jb), "increment")
    if propagator is not None:
        out = _apply(propagator, y)
    else:
        eye = np.eye(problem.dim)
        out = solve(eye - dt * jb, y).real
    return _finite_or_raise(out, "state")


@_batched
def explicit_step(problem: SDEProblem, t, x, dt, xi):
    """Plain Euler-Maruyama step, kept as the ``Jb = 0`` baseline."""
    _check_step_args(problem, dt, xi)
    drift = np.asarray(problem.drift(t, x), dtype=float)
    sigma = np.asarray(problem.diffusion(t, x), dtype=float)
    return x + dt * drift + np.sqrt(dt) * np.einsum("bij,bj->bi", sigma, xi)


def richardson(e_m: float, e_2m: float) -> float:
    """Extrapolate estimates at ``M`` and ``2M`` steps: ``2 e_2M - e_M``."""
    return 2.0 * e_2m - e_m


@dataclass(frozen=True)
class WeakEstimate:
    mean: float
    ci_halfwidth: float
    n: int


def _cached_propagator(problem, scheme, x0_row, dt):
    if not problem.constant_jacobian:
        return None
    jb = problem.jb(0.0, x0_row[None, :])[0]
    if scheme is SDEScheme.SCHEME1:
        return expm(jb * dt).real
    return solve(np.eye(problem.dim) - dt * jb, np.eye(problem.dim)).real


def _chunk_values(problem, x0, horizon, steps, law, scheme, payoff, seed, start, stop, propagator):
    idx = np.arange(start, stop)
    keys = rng.trajectory_keys(seed, idx)
    x = np.array(x0(idx) if callable(x0) else np.broadcast_to(x0, (len(idx), problem.dim)), dtype=float)
    dt = horizon / steps
    step = euler_exp_step if scheme is SDEScheme.SCHEME1 else implicit_exp_step
    for m in range(steps):
        xi = rng.noise(keys, m, problem.noise_dim, law)
        try:
            x = step(problem, m * dt, x, dt, xi, propagator=propagator)
        except StepError as exc:
            raise StepError(
                f"trajectory {start + exc.trajectory} failed at step {m}: {exc}",
                trajectory=start + exc.trajectory,
                step=m,
            ) from exc
    return np.asarray(payoff(x), dtype=float).reshape(len(idx))


def run_weak(
    problem: SDEProblem,
    x0,
    horizon: float,
    steps: int,
    law: rng.NoiseLaw | str = rng.NoiseLaw.GAUSSIAN,
    scheme: SDEScheme | str = SDEScheme.SCHEME1,
    payoff: Callable = lambda x: x[:, 0],
    trajectories: int = 10_000,
    seed: int = 0,
    batches: int = DEFAULT_BATCHES,
    chunk_size: int = 100_000,
    workers: int = 1,
) -> WeakEstimate:
    """Monte Carlo estimate of ``E f(X_T)`` under Scheme 1 or its implicit variant.

    ``x0`` is either a fixed initial state or a callable mapping an array of
    trajectory indices to a ``(B, d)`` batch of initial states. ``payoff``
    maps a ``(B, d)`` batch to ``B`` values. Trajectories are processed in
    chunks of ``chunk_size``; the chunking, not ``workers``, fixes the
    arithmetic, so results do not depend on the worker count.
    """
    scheme = SDEScheme(scheme)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if trajectories < 2:
        raise ValueError("trajectories must be >= 2")
    if not callable(x0):
        x0 = np.asarray(x0, dtype=float).reshape(problem.dim)
    dt = horizon / steps
    first = x0(np.arange(1))[0] if callable(x0) else x0
    propagator = _cached_propagator(problem, scheme, np.asarray(first, dtype=float), dt)

    bounds = [(s, min(s + chunk_size, trajectories)) for s in range(0, trajectories, chunk_size)]

    def job(b):
        return _chunk_values(problem, x0, horizon, steps, law, scheme, payoff, seed, b[0], b[1], propagator)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    values = np.concatenate(parts)
    return WeakEstimate(
        mean=fixed_order_mean(values),
        ci_halfwidth=batch_means_ci(values, batches=batches),
        n=trajectories,
    )
