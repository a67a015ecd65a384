"""Ensemble execution, batch-means confidence intervals and error metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats

from . import rng
from .config import SSE_SCHEMES, SchemeConfig
from .errors import DegenerateStepError, NumericalError

__all__ = [
    "DEFAULT_BATCHES",
    "EnsembleStats",
    "batch_means_ci",
    "epsilon_J",
    "estimate_observable",
    "fixed_order_mean",
    "loglog_slope",
]

DEFAULT_BATCHES = 20
DEFAULT_LEVEL = 0.90
IMAG_TOL = 1e-10


def _fsum_columns(values: np.ndarray) -> np.ndarray:
    v = values.reshape(values.shape[0], -1)
    return np.array([math.fsum(v[:, j].tolist()) for j in range(v.shape[1])]).reshape(values.shape[1:])


def fixed_order_mean(values) -> np.ndarray | float:
    """Correctly rounded mean over axis 0 (exact summation, order independent)."""
    v = np.asarray(values, dtype=float)
    out = _fsum_columns(v) / v.shape[0]
    return float(out) if out.ndim == 0 else out


def batch_means_ci(samples, batches: int = DEFAULT_BATCHES, level: float = DEFAULT_LEVEL):
    """Half-width of the batch-means confidence interval for the mean.

    The samples (axis 0) are split into ``batches`` consecutive groups of
    equal size; the half-width is ``t_{(1+level)/2, batches-1} * s / sqrt(batches)``
    with ``s`` the sample standard deviation of the group means. Extra
    axes are treated independently.
    """
    x = np.asarray(samples, dtype=float)
    if batches < 2:
        raise ValueError("need at least 2 batches")
    n = x.shape[0]
    if n < batches or n % batches:
        raise ValueError(f"{n} samples cannot be split into {batches} equal batches")
    size = n // batches
    grouped = x.reshape((batches, size) + x.shape[1:])
    means = np.stack([fixed_order_mean(grouped[b]) for b in range(batches)])
    out = _ci_from_batch_means(means, level)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EnsembleStats:
    """Per-output-time Monte Carlo means of ``<z, A z>`` and their 90% CI half-widths."""

    times: np.ndarray
    mean: np.ndarray
    ci_halfwidth: np.ndarray
    trajectories: int
    min_pre_norm: float
    max_pre_norm: float

    @property
    def max_halfwidth(self) -> float:
        return float(np.max(self.ci_halfwidth))


def _batch_sums(values: np.ndarray, start: int, batch_size: int) -> dict[int, tuple[np.ndarray, int]]:
    """Exact column sums of ``values`` grouped by the batch of each trajectory."""
    out = {}
    idx = np.arange(start, start + values.shape[0]) // batch_size
    for b in np.unique(idx):
        rows = values[idx == b]
        out[int(b)] = (_fsum_columns(rows), rows.shape[0])
    return out


def _ensemble_chunk(p, cfg: SchemeConfig, start: int, stop: int):
    # Imported here to keep montecarlo importable from sde without a cycle.
    from .sse import evolve, make_context

    idx = np.arange(start, stop)
    keys = rng.trajectory_keys(cfg.seed, idx)
    ctx = make_context(p, cfg.scheme, cfg.dt, cfg.noise)
    n = p.noise_dim
    a = p.observable

    def noise_for_step(m):
        return rng.noise(keys, m, n, cfg.noise)

    def record(zt):
        return np.sum(np.conj(zt) * (a @ zt), axis=0)

    z = np.broadcast_to(p.z0, (len(idx), p.dim))
    try:
        records, lo, hi = evolve(p, ctx, z, cfg.steps, noise_for_step, cfg.record_every, record)
    except DegenerateStepError as exc:
        traj = start + (exc.trajectory or 0)
        raise DegenerateStepError(
            f"trajectory {traj}, step {exc.step}: {exc}", trajectory=traj, step=exc.step
        ) from exc
    vals = np.stack(records, axis=1)
    scale = max(1.0, float(np.max(np.abs(vals.real))))
    worst = float(np.max(np.abs(vals.imag)))
    if worst > IMAG_TOL * scale:
        raise NumericalError(f"observable sandwich has imaginary part {worst:.3e}")
    return _batch_sums(vals.real, start, cfg.trajectories // cfg.batches), lo, hi


def _ci_from_batch_means(means: np.ndarray, level: float):
    batches = means.shape[0]
    centre = fixed_order_mean(means)
    dev = means - centre
    s = np.sqrt(_fsum_columns(dev * dev) / (batches - 1))
    q = _stats.t.ppf(0.5 * (1.0 + level), batches - 1)
    return q * s / math.sqrt(batches)


def estimate_observable(p, cfg: SchemeConfig, workers: int = 1) -> EnsembleStats:
    """Monte Carlo means of the observable at the ``output_points + 1`` output times.

    Trajectories are split into chunks of ``cfg.chunk_size``; each chunk is a
    pure function of ``(p, cfg, chunk bounds)`` and returns exact per-batch
    sums, which are reduced in chunk order. ``workers`` therefore only
    affects speed, never the result.
    """
    if cfg.scheme not in SSE_SCHEMES:
        raise ValueError(
            f"{cfg.scheme.value} applies to general SDEs (see sde.run_weak); "
            f"SSE schemes are {[s.value for s in SSE_SCHEMES]}"
        )
    if not p.observable_is_hermitian():
        raise ValueError("observable must be self-adjoint")
    bounds = [
        (s, min(s + cfg.chunk_size, cfg.trajectories)) for s in range(0, cfg.trajectories, cfg.chunk_size)
    ]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_ensemble_chunk, p, cfg, a, b) for a, b in bounds]
            parts = [f.result() for f in futures]
    else:
        parts = [_ensemble_chunk(p, cfg, a, b) for a, b in bounds]

    partials: dict[int, list] = {}
    counts: dict[int, int] = {}
    for sums, _, _ in parts:
        for b, (col, cnt) in sums.items():
            partials.setdefault(b, []).append(col)
            counts[b] = counts.get(b, 0) + cnt
    batch_sums = np.stack([_fsum_columns(np.stack(partials[b])) for b in range(cfg.batches)])
    size = cfg.trajectories // cfg.batches
    assert all(counts[b] == size for b in range(cfg.batches))
    means = batch_sums / size
    return EnsembleStats(
        times=np.array(cfg.output_times()),
        mean=_fsum_columns(batch_sums) / cfg.trajectories,
        ci_halfwidth=np.asarray(_ci_from_batch_means(means, DEFAULT_LEVEL)),
        trajectories=cfg.trajectories,
        min_pre_norm=min(lo for _, lo, _ in parts),
        max_pre_norm=max(hi for _, _, hi in parts),
    )


def _same_grid(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return False
    scale = max(1.0, float(np.max(np.abs(a))))
    return bool(np.all(np.abs(a - b) <= 1e-12 * scale))


def epsilon_J(stats: EnsembleStats, ref, J: int = 0) -> float:
    """``max_{j=J..J_max} |estimate_j - reference_j|`` on a shared output grid."""
    if not _same_grid(stats.times, ref.times):
        raise ValueError("estimate and reference use different output grids")
    jmax = len(stats.times) - 1
    if not 0 <= J <= jmax:
        raise ValueError(f"J must lie in 0..{jmax}")
    diff = np.abs(np.asarray(stats.mean)[J:] - np.asarray(ref.expectation)[J:])
    return float(np.max(diff))


def loglog_slope(step_sizes, errors) -> tuple[float, float]:
    """Least-squares fit ``log(err) = slope * log(h) + c``; returns ``(slope, c)``."""
    h = np.asarray(step_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3 or h.shape != e.shape:
        raise ValueError("need at least 3 (step size, error) pairs")
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValueError("step sizes and errors must be positive for a log-log fit")
    slope, c = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope), float(c)
