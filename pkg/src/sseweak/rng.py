"""Counter-based noise streams.

Every draw is a pure function of ``(seed, trajectory, step, channel)``: the
key is pushed through the SplitMix64 finalizer, so any subset of trajectories
can be generated independently, in any order, on any worker, and the values
never change. This is what makes ensemble results independent of how the
trajectories are chunked or scheduled.
"""

from __future__ import annotations

import enum

import numpy as np

__all__ = ["NoiseLaw", "noise", "trajectory_keys"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STEP_MUL = np.uint64(0xD6E8FEB86659FD93)
_MASK64 = (1 << 64) - 1


class NoiseLaw(str, enum.Enum):
    """Law of the i.i.d. increments driving a weak scheme."""

    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def trajectory_keys(seed: int, trajectories) -> np.ndarray:
    """Per-trajectory 64-bit keys derived from the run seed."""
    idx = np.asarray(trajectories, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(int(seed) & _MASK64) + _GOLDEN)
        return _mix(base ^ ((idx + np.uint64(1)) * _GOLDEN))


def _words(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix(keys[:, None] ^ ((counters[None, :] + np.uint64(1)) * _STEP_MUL))


def _unit_interval(w: np.ndarray) -> np.ndarray:
    # 53 high bits, offset by half an ulp so the result lies in (0, 1).
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def noise(keys: np.ndarray, step: int, channels: int, law: NoiseLaw | str) -> np.ndarray:
    """Increments for one step: an array of shape ``(len(keys), channels)``.

    Parameters
    ----------
    keys
        Output of `trajectory_keys` for the trajectories being advanced.
    step
        Zero-based step index ``m``.
    channels
        Number of independent noise channels ``n``.
    law
        ``"rademacher"`` gives ``+-1`` with probability 1/2 each;
        ``"gaussian"`` gives standard normals (Box-Muller on two words).
    """
    law = NoiseLaw(law)
    keys = np.asarray(keys, dtype=np.uint64)
    if law is NoiseLaw.RADEMACHER:
        counters = np.uint64(step * channels) + np.arange(channels, dtype=np.uint64)
        w = _words(keys, counters)
        return np.where((w >> np.uint64(63)) == 1, 1.0, -1.0)
    base = np.uint64(2 * step * channels)
    counters = base + np.arange(2 * channels, dtype=np.uint64)
    w = _words(keys, counters)
    u1 = _unit_interval(w[:, 0::2])
    u2 = _unit_interval(w[:, 1::2])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
