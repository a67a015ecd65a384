"""Dense complex linear algebra used by the steppers and the reference solver.

Vectors and matrices are plain ``numpy`` arrays of ``complex128``. Every
routine here accepts stacks of matrices (leading batch axes) so that an
ensemble of trajectories can be advanced with one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import SingularMatrixError

__all__ = [
    "LUFactors",
    "adjoint",
    "as_matrix",
    "as_vector",
    "expm",
    "inner",
    "lu_factor",
    "lu_solve",
    "solve",
]

PADE_DEGREE = 8
# Scaled 1-norm bound before the Padé kernel is applied.
SCALED_NORM_BOUND = 0.5
PIVOT_RTOL = 1e-13


def as_vector(x, dim=None) -> np.ndarray:
    """Validate ``x`` as a finite 1-D complex vector."""
    v = np.asarray(x, dtype=complex)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_matrix(m, shape=None) -> np.ndarray:
    """Validate ``m`` as a finite 2-D complex matrix."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def adjoint(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(m, -1, -2))


def inner(x, y):
    """Scalar product ``sum(conj(x) * y)``, conjugate-linear in ``x``.

    Works over the last axis, so stacked vectors give a stack of products.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[-1:] != y.shape[-1:]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return np.sum(np.conj(x) * y, axis=-1)


def _pade_coefficients(m: int) -> list[float]:
    return [
        factorial(2 * m - j) * factorial(m) / (factorial(2 * m) * factorial(j) * factorial(m - j))
        for j in range(m + 1)
    ]


_PADE = _pade_coefficients(PADE_DEGREE)


def expm(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Padé kernel.

    The argument is scaled by ``2**-s`` so that its 1-norm is at most 0.5,
    the degree-8 diagonal Padé approximant is evaluated, and the result is
    squared ``s`` times. Stacks share the largest ``s`` of their members.
    """
    a = np.asarray(m, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expm needs square matrices, got shape {a.shape}")
    n = a.shape[-1]
    norm = np.max(np.sum(np.abs(a), axis=-2), axis=-1)
    norm = float(np.max(norm)) if np.ndim(norm) else float(norm)
    if not np.isfinite(norm):
        raise ValueError("expm argument has non-finite entries")
    s = 0
    if norm > SCALED_NORM_BOUND:
        s = int(np.ceil(np.log2(norm / SCALED_NORM_BOUND)))
    x = a / (2.0**s)

    eye = np.broadcast_to(np.eye(n, dtype=complex), a.shape)
    c = _PADE
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    x8 = x4 @ x4
    even = c[8] * x8 + c[6] * x6 + c[4] * x4 + c[2] * x2 + c[0] * eye
    odd = x @ (c[7] * x6 + c[5] * x4 + c[3] * x2 + c[1] * eye)
    r = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        r = r @ r
    return r


@dataclass(frozen=True)
class LUFactors:
    """Packed ``P A = L U`` factors; ``perm[i]`` is the source row of row ``i``."""

    lu: np.ndarray
    perm: np.ndarray


def lu_factor(m, pivot_rtol: float = PIVOT_RTOL) -> LUFactors:
    """LU factorization with partial pivoting.

    Raises `SingularMatrixError` when a pivot magnitude drops below
    ``pivot_rtol * max|entry|`` of its matrix.
    """
    a = np.array(m, dtype=complex, copy=True)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"LU needs square matrices, got shape {a.shape}")
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    lu = a.reshape(-1, n, n)
    nb = lu.shape[0]
    rows = np.arange(nb)
    perm = np.tile(np.arange(n), (nb, 1))
    threshold = pivot_rtol * np.max(np.abs(lu), axis=(1, 2))

    for k in range(n):
        p = k + np.argmax(np.abs(lu[:, k:, k]), axis=1)
        swap = p != k
        if np.any(swap):
            r, pk = rows[swap], p[swap]
            tmp = lu[r, k, :].copy()
            lu[r, k, :] = lu[r, pk, :]
            lu[r, pk, :] = tmp
            tmp = perm[r, k].copy()
            perm[r, k] = perm[r, pk]
            perm[r, pk] = tmp
        pivot = lu[:, k, k]
        bad = (np.abs(pivot) < threshold) | (pivot == 0)
        if np.any(bad):
            raise SingularMatrixError(
                f"pivot {np.abs(pivot[bad][0]):.3e} at column {k} below threshold"
            )
        if k + 1 < n:
            lu[:, k + 1 :, k] /= pivot[:, None]
            lu[:, k + 1 :, k + 1 :] -= lu[:, k + 1 :, k, None] * lu[:, k, None, k + 1 :]

    return LUFactors(lu.reshape(batch_shape + (n, n)), perm.reshape(batch_shape + (n,)))


def lu_solve(factors: LUFactors, b) -> np.ndarray:
    """Solve ``A x = b`` from `lu_factor` output.

    ``b`` is either a vector stack ``(..., n)`` or a matrix stack ``(..., n, k)``.
    """
    lu, perm = factors.lu, factors.perm
    n = lu.shape[-1]
    b = np.asarray(b, dtype=complex)
    vector_rhs = b.ndim == lu.ndim - 1
    if vector_rhs:
        b = b[..., None]
    if b.shape[-2] != n:
        raise ValueError(f"right-hand side has {b.shape[-2]} rows, matrix has {n}")
    batch = np.broadcast_shapes(lu.shape[:-2], b.shape[:-2])
    lu = np.broadcast_to(lu, batch + (n, n))
    perm = np.broadcast_to(perm, batch + (n,))
    b = np.broadcast_to(b, batch + b.shape[-2:])

    x = np.take_along_axis(b, perm[..., None], axis=-2).copy()
    for i in range(1, n):
        x[..., i, :] -= np.einsum("...j,...jk->...k", lu[..., i, :i], x[..., :i, :])
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[..., i, :] -= np.einsum("...j,...jk->...k", lu[..., i, i + 1 :], x[..., i + 1 :, :])
        x[..., i, :] /= lu[..., i, i, None]
    return x[..., 0] if vector_rhs else x


def solve(m, b) -> np.ndarray:
    """Solve ``m x = b`` by LU with partial pivoting.

    Dimension mismatches raise ``ValueError``; numerically singular input
    raises `SingularMatrixError`.
    """
    m = np.asarray(m, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"solve needs square matrices, got shape {m.shape}")
    if b.ndim not in (m.ndim - 1, m.ndim):
        raise ValueError(f"dimension mismatch: matrix {m.shape}, rhs {b.shape}")
    rows = b.shape[-1] if b.ndim == m.ndim - 1 else b.shape[-2]
    if rows != m.shape[-1]:
        raise ValueError(f"dimension mismatch: matrix {m.shape}, rhs {b.shape}")
    return lu_solve(lu_factor(m), b)
