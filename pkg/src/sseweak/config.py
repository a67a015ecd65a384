"""Run configuration shared by the trajectory runner and the ensemble driver."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .rng import NoiseLaw

__all__ = ["Scheme", "SchemeConfig", "SSE_SCHEMES"]


class Scheme(str, enum.Enum):
    SCHEME2 = "scheme2"
    SCHEME3 = "scheme3"
    EXPLICIT_EULER = "explicit_euler"
    SCHEME1 = "scheme1"
    IMPLICIT_V1 = "implicit_v1"


SSE_SCHEMES = (Scheme.SCHEME2, Scheme.SCHEME3, Scheme.EXPLICIT_EULER)


@dataclass(frozen=True)
class SchemeConfig:
    """Parameters of one ensemble run.

    ``steps`` must be a multiple of ``output_points`` so every output time
    ``j * horizon / output_points`` lies on the step grid. ``chunk_size`` is
    the number of trajectories advanced together; it is part of the
    configuration (not of the scheduling) so that results are identical for
    any worker count.
    """

    scheme: Scheme = Scheme.SCHEME2
    horizon: float = 100.0
    steps: int = 2000
    trajectories: int = 500
    noise: NoiseLaw = NoiseLaw.RADEMACHER
    seed: int = 0
    output_points: int = 100
    batches: int = 20
    chunk_size: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "noise", NoiseLaw(self.noise))
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1 or self.output_points < 1:
            raise ValueError("steps and output_points must be >= 1")
        if self.steps % self.output_points:
            raise ValueError(
                f"steps ({self.steps}) must be divisible by output_points ({self.output_points})"
            )
        if self.batches < 2:
            raise ValueError("batches must be >= 2")
        if self.trajectories < 2 * self.batches:
            raise ValueError(
                f"trajectories ({self.trajectories}) must be at least 2 * batches ({self.batches})"
            )
        if self.trajectories % self.batches:
            raise ValueError(
                f"trajectories ({self.trajectories}) must be divisible by batches ({self.batches})"
            )
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def record_every(self) -> int:
        return self.steps // self.output_points

    def output_times(self) -> list[float]:
        return [j * self.horizon / self.output_points for j in range(self.output_points + 1)]
