"""Truncated harmonic-oscillator operators and the forced, damped oscillator model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import adjoint
from .sse import SSEProblem

__all__ = [
    "FockTruncation",
    "annihilation",
    "basis_state",
    "creation",
    "example1_problem",
    "number",
]


@dataclass(frozen=True)
class FockTruncation:
    """Levels ``0..d`` are kept, so the state space has dimension ``d + 1``."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"highest retained level must be >= 1, got {self.d}")

    @property
    def dim(self) -> int:
        return self.d + 1


def annihilation(tr: FockTruncation) -> np.ndarray:
    """``a phi_m = sqrt(m) phi_{m-1}``, ``a phi_0 = 0``."""
    return np.diag(np.sqrt(np.arange(1, tr.dim, dtype=float)), k=1).astype(complex)


def creation(tr: FockTruncation) -> np.ndarray:
    """Adjoint of the truncated annihilation operator; ``a^+ phi_d = 0``."""
    return adjoint(annihilation(tr))


def number(tr: FockTruncation) -> np.ndarray:
    """``N = a^+ a`` built as ``diag(0, ..., d)`` so the eigenvalues are exact."""
    return np.diag(np.arange(tr.dim, dtype=float)).astype(complex)


def basis_state(tr: FockTruncation, m: int) -> np.ndarray:
    if not 0 <= m <= tr.d:
        raise ValueError(f"level {m} outside 0..{tr.d}")
    e = np.zeros(tr.dim, dtype=complex)
    e[m] = 1.0
    return e


def example1_problem(tr: FockTruncation, initial_level: int = 6) -> SSEProblem:
    """Forced, damped oscillator observed through the number operator.

    ``H = i(a^+ - a) + N`` with ``L = (0.2 a, 0.01 a^2, 0.1 N, 0.1 a^+)``,
    observable ``N`` and initial state ``phi_6``.
    """
    if tr.d < initial_level:
        raise ValueError(f"truncation level {tr.d} must be >= {initial_level} to hold the initial state")
    a = annihilation(tr)
    ad = creation(tr)
    n = number(tr)
    h = 1j * (ad - a) + n
    h = 0.5 * (h + adjoint(h))
    lindblads = (0.2 * a, 0.01 * (a @ a), 0.1 * n, 0.1 * ad)
    return SSEProblem(hamiltonian=h, lindblads=lindblads, observable=n, z0=basis_state(tr, initial_level))
