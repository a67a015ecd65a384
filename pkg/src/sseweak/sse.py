"""Nonlinear stochastic Schrödinger equation and its projected weak steppers.

The equation is

    dZ = (G Z + D(Z)) dt + sum_k E_k(Z) dW^k,
    G = -i H - 1/2 sum_k L_k^* L_k,
    D(z) = sum_k (Re<z, L_k z> L_k z - 1/2 Re<z, L_k z>^2 z),
    E_k(z) = L_k z - Re<z, L_k z> z,

whose solutions stay on the unit sphere. States are row vectors: a single
state has shape ``(d,)`` and a batch has shape ``(B, d)``; operators act as
``z @ L.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

from . import rng
from .config import SSE_SCHEMES, Scheme, SchemeConfig
from .errors import DegenerateStepError
from .linalg import adjoint, as_matrix, as_vector, expm, inner, solve

__all__ = [
    "SSEProblem",
    "SSEStepContext",
    "TrajectoryResult",
    "assemble_g",
    "diffusion_E",
    "drift_D",
    "evolve",
    "explicit_euler_step",
    "make_context",
    "project",
    "run_trajectory",
    "sandwich",
    "scheme2_step",
    "scheme3_step",
]

HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-12
UNIT_INPUT_TOL = 1e-10


def assemble_g(hamiltonian: np.ndarray, lindblads) -> np.ndarray:
    """``G = -i H - 1/2 sum_k L_k^* L_k``."""
    g = -1j * hamiltonian
    for lk in lindblads:
        g = g - 0.5 * (adjoint(lk) @ lk)
    return g


@dataclass(frozen=True)
class SSEProblem:
    """Hamiltonian, Lindblad operators, observable and initial state.

    ``g`` is derived on construction and never supplied by the caller.
    """

    hamiltonian: np.ndarray
    lindblads: tuple
    observable: np.ndarray
    z0: np.ndarray
    g: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = as_matrix(self.hamiltonian)
        d = h.shape[0]
        h = as_matrix(h, (d, d))
        ls = tuple(as_matrix(lk, (d, d)) for lk in self.lindblads)
        a = as_matrix(self.observable, (d, d))
        z0 = as_vector(self.z0, d)
        scale = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - adjoint(h))) > HERMITIAN_TOL * scale:
            raise ValueError("Hamiltonian is not self-adjoint")
        if abs(np.linalg.norm(z0) - 1.0) > NORM_TOL:
            raise ValueError(f"initial state must have unit norm, got {np.linalg.norm(z0)!r}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "lindblads", ls)
        object.__setattr__(self, "observable", a)
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "g", assemble_g(h, ls))
        # Transposes are cached for the row-vector convention used in the kernels.
        object.__setattr__(self, "_lindblads_t", tuple(np.ascontiguousarray(lk.T) for lk in ls))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def noise_dim(self) -> int:
        return len(self.lindblads)

    def observable_is_hermitian(self) -> bool:
        a = self.observable
        return bool(np.max(np.abs(a - adjoint(a))) <= HERMITIAN_TOL * max(1.0, float(np.max(np.abs(a)))))


def _check_dim(p: SSEProblem, z: np.ndarray):
    if z.shape[-1] != p.dim:
        raise ValueError(f"state has dimension {z.shape[-1]}, problem has {p.dim}")


def _lindblad_terms(p: SSEProblem, z: np.ndarray):
    lz = [z @ lt for lt in p._lindblads_t]
    re = [inner(z, v).real for v in lz]
    return lz, re


def drift_D(p: SSEProblem, z) -> np.ndarray:
    """Nonlinear drift ``D(z)``."""
    z = np.asarray(z, dtype=complex)
    _check_dim(p, z)
    out = np.zeros_like(z)
    for v, r in zip(*_lindblad_terms(p, z)):
        r = r[..., None]
        out += r * v - 0.5 * r**2 * z
    return out


def diffusion_E(p: SSEProblem, k: int, z) -> np.ndarray:
    """Diffusion coefficient ``E_k(z)`` of channel ``k`` (zero-based)."""
    if not 0 <= k < p.noise_dim:
        raise IndexError(f"channel {k} out of range for {p.noise_dim} Lindblad operators")
    z = np.asarray(z, dtype=complex)
    _check_dim(p, z)
    v = z @ p._lindblads_t[k]
    return v - inner(z, v).real[..., None] * z


def project(z) -> np.ndarray:
    """Radial projection onto the unit sphere, with ``p(0) = 0``."""
    z = np.asarray(z, dtype=complex)
    nrm = np.linalg.norm(z, axis=-1, keepdims=True)
    safe = np.where(nrm == 0.0, 1.0, nrm)
    return np.where(nrm == 0.0, 0.0, z / safe)


def sandwich(a: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``<z, A z>`` over the last axis."""
    return inner(z, z @ a.T)


@dataclass(frozen=True)
class SSEStepContext:
    """Step size, scheme and the state-independent propagator of a run.

    ``propagator`` is ``exp(G dt)`` for Scheme 2, ``(I - G dt)^{-1}`` for
    Scheme 3 and ``None`` for the projected explicit Euler scheme.
    """

    dt: float
    scheme: Scheme
    propagator: np.ndarray | None
    noise: rng.NoiseLaw = rng.NoiseLaw.RADEMACHER


def make_context(p: SSEProblem, scheme, dt: float, noise=rng.NoiseLaw.RADEMACHER) -> SSEStepContext:
    """Build the per-run context; the propagator is computed here, once."""
    scheme = Scheme(scheme)
    if scheme not in SSE_SCHEMES:
        raise ValueError(f"{scheme.value} is not an SSE scheme; use one of {[s.value for s in SSE_SCHEMES]}")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if scheme is Scheme.SCHEME2:
        prop = expm(p.g * dt)
    elif scheme is Scheme.SCHEME3:
        prop = solve(np.eye(p.dim) - p.g * dt, np.eye(p.dim, dtype=complex))
    else:
        prop = None
    return SSEStepContext(dt=dt, scheme=scheme, propagator=prop, noise=rng.NoiseLaw(noise))


SPARSE_DENSITY = 0.3


class _Kernel:
    """Operator data for the batched step.

    Inside the kernel a batch is stored column-wise, shape ``(d, B)``. The
    Lindblad operators are stacked into one ``(n d, d)`` matrix, kept sparse
    when that pays off, so all ``L_k z`` come from a single product.
    """

    def __init__(self, p: SSEProblem, ctx: SSEStepContext):
        stacked = np.concatenate(p.lindblads, axis=0) if p.lindblads else np.zeros((0, p.dim), complex)
        density = np.count_nonzero(stacked) / max(stacked.size, 1)
        self.lmul = sparse.csr_matrix(stacked) if density < SPARSE_DENSITY else stacked
        self.n = p.noise_dim
        self.d = p.dim
        self.dt = ctx.dt
        self.sq = np.sqrt(ctx.dt)
        self.euler = ctx.scheme is Scheme.EXPLICIT_EULER
        self.g = p.g
        self.prop = ctx.propagator

    def step(self, zt: np.ndarray, xi: np.ndarray):
        """Advance a column batch; ``xi`` has shape ``(B, n)``.

        Returns ``(new_states, pre_projection_norms)``. The increment
        ``z + D dt + sqrt(dt) sum E_k xi_k`` is assembled as
        ``s z + sum_k c_k L_k z`` with ``r_k = Re<z, L_k z>``,
        ``c_k = r_k dt + xi_k sqrt(dt)`` and
        ``s = 1 - sum_k (r_k^2 dt / 2 + xi_k r_k sqrt(dt))``.
        """
        dt, sq = self.dt, self.sq
        b = zt.shape[1]
        if self.n:
            lz = np.asarray(self.lmul @ zt).reshape(self.n, self.d, b)
            r = np.einsum("db,kdb->kb", np.conj(zt), lz).real
            xt = xi.T
            c = dt * r + sq * xt
            s = 1.0 - np.sum(0.5 * dt * r * r + sq * xt * r, axis=0)
            phi = s * zt
            for k in range(self.n):
                phi += c[k] * lz[k]
        else:
            phi = zt.copy()
        if self.euler:
            phi = phi + dt * (self.g @ zt)
        else:
            phi = self.prop @ phi
        with np.errstate(over="ignore", invalid="ignore"):
            nrm = np.sqrt(np.sum(phi.real**2 + phi.imag**2, axis=0))
        ok = np.isfinite(nrm) & (nrm > 0.0)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise DegenerateStepError(f"pre-projection vector has norm {nrm[bad]!r}", trajectory=bad)
        return phi / nrm, nrm


def _advance(ctx: SSEStepContext, p: SSEProblem, z: np.ndarray, xi: np.ndarray):
    """One projected step on a row batch ``(B, d)``; returns ``(states, norms)``."""
    zt, nrm = _Kernel(p, ctx).step(np.ascontiguousarray(z.T), xi)
    return zt.T, nrm


def _single_step(ctx, p, z, xi, expected):
    if ctx.scheme is not expected:
        raise ValueError(f"context was built for {ctx.scheme.value}, not {expected.value}")
    z = np.asarray(z, dtype=complex)
    xi = np.asarray(xi, dtype=float)
    _check_dim(p, z)
    if xi.shape[-1] != p.noise_dim:
        raise ValueError(f"expected {p.noise_dim} noise entries, got {xi.shape[-1]}")
    single = z.ndim == 1
    zb = z[None, :] if single else z
    xb = xi[None, :] if single else xi
    if np.max(np.abs(np.linalg.norm(zb, axis=1) - 1.0)) > UNIT_INPUT_TOL:
        raise ValueError("input state must have unit norm")
    out, _ = _advance(ctx, p, zb, xb)
    return out[0] if single else out


def scheme2_step(ctx: SSEStepContext, p: SSEProblem, z, xi) -> np.ndarray:
    """Projected Euler-exponential step:
    ``p(exp(G dt)(z + D(z) dt + sqrt(dt) sum_k E_k(z) xi_k))``.
    """
    return _single_step(ctx, p, z, xi, Scheme.SCHEME2)


def scheme3_step(ctx: SSEStepContext, p: SSEProblem, z, xi) -> np.ndarray:
    """As `scheme2_step` with the resolvent ``(I - G dt)^{-1}`` as propagator."""
    return _single_step(ctx, p, z, xi, Scheme.SCHEME3)


def explicit_euler_step(p: SSEProblem, z, dt: float, xi) -> np.ndarray:
    """Projected explicit Euler: ``p(z + (G z + D(z)) dt + sqrt(dt) sum_k E_k(z) xi_k)``."""
    ctx = SSEStepContext(dt=dt, scheme=Scheme.EXPLICIT_EULER, propagator=None)
    return _single_step(ctx, p, z, xi, Scheme.EXPLICIT_EULER)


def evolve(
    p: SSEProblem,
    ctx: SSEStepContext,
    z: np.ndarray,
    steps: int,
    noise_for_step: Callable[[int], np.ndarray],
    record_every: int,
    record: Callable[[np.ndarray], object],
):
    """Advance a row batch ``z`` of shape ``(B, d)`` for ``steps`` steps.

    ``record`` is called with the column-wise batch ``(d, B)`` at step 0 and
    after every ``record_every`` steps. Returns
    ``(records, min_pre_norm, max_pre_norm)``.
    """
    kernel = _Kernel(p, ctx)
    zt = np.ascontiguousarray(np.asarray(z, dtype=complex).T)
    records = [record(zt)]
    lo, hi = np.inf, -np.inf
    for m in range(steps):
        try:
            zt, nrm = kernel.step(zt, noise_for_step(m))
        except DegenerateStepError as exc:
            exc.step = m
            raise
        lo = min(lo, float(nrm.min()))
        hi = max(hi, float(nrm.max()))
        if (m + 1) % record_every == 0:
            records.append(record(zt))
    return records, lo, hi


@dataclass(frozen=True)
class TrajectoryResult:
    times: list
    states: np.ndarray
    min_pre_norm: float
    max_pre_norm: float


def _grid_indices(output_times, dt, steps, horizon):
    idx = []
    for t in output_times:
        j = round(t / dt)
        if abs(j * dt - t) > 1e-9 * horizon or not 0 <= j <= steps:
            raise ValueError(f"output time {t} is not on the step grid (dt = {dt})")
        idx.append(j)
    return idx


def run_trajectory(
    p: SSEProblem,
    cfg: SchemeConfig,
    output_times=None,
    trajectory: int = 0,
    noise: np.ndarray | None = None,
) -> TrajectoryResult:
    """Iterate the configured one-step map ``cfg.steps`` times from ``p.z0``.

    ``noise`` optionally fixes the increments as an ``(steps, n)`` array;
    otherwise they come from the counter-based stream of ``trajectory``.
    """
    if output_times is None:
        output_times = cfg.output_times()
    wanted = _grid_indices(output_times, cfg.dt, cfg.steps, cfg.horizon)
    ctx = make_context(p, cfg.scheme, cfg.dt, cfg.noise)
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (cfg.steps, p.noise_dim):
            raise ValueError(f"noise must have shape {(cfg.steps, p.noise_dim)}, got {noise.shape}")

        def noise_for_step(m):
            return noise[m][None, :]
    else:
        keys = rng.trajectory_keys(cfg.seed, [trajectory])

        def noise_for_step(m):
            return rng.noise(keys, m, p.noise_dim, cfg.noise)

    records, lo, hi = evolve(p, ctx, p.z0[None, :].copy(), cfg.steps, noise_for_step, 1, lambda zt: zt[:, 0].copy())
    states = np.array([records[j] for j in wanted])
    return TrajectoryResult(times=list(output_times), states=states, min_pre_norm=lo, max_pre_norm=hi)
