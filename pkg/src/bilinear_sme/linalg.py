"""Dense matrix helpers: Kronecker products, vectorization, spectral radius."""

from __future__ import annotations

import math

import numpy as np

# Shared numerical tolerances.
LP_FEAS_TOL = 1e-9
EQ_TOL = 1e-8
SPECTRAL_TOL = 1e-4


def kron(a, b) -> np.ndarray:
    """Kronecker product of two 2-D arrays (1-D inputs are treated as columns)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    return np.kron(a, b)


def vec(a) -> np.ndarray:
    """Column-stacking vectorization, so ``vec(M X N) == kron(N.T, M) @ vec(X)``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"vec expects a 2-D array, got shape {a.shape}")
    return a.reshape(-1, order="F")


def unvec(v, rows: int, cols: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`."""
    cols = rows if cols is None else cols
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape vector of length {v.size} to {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def spectral_radius(a, iters: int = 64, tol: float = SPECTRAL_TOL) -> float:
    """Estimate the spectral radius with Gelfand's formula.

    Computes ``||a^(2^k)||_2^(1/2^k)`` by repeated squaring, renormalizing the
    iterate after every squaring and accumulating the log-scale separately so
    nothing under- or overflows. At least six squarings (``2^k >= 64``) are
    always performed; iteration stops once successive estimates differ by less
    than ``tol * max(1, rho) / 10``. The returned value then satisfies
    ``|estimate - rho| <= tol * max(1, rho)`` for diagonalizable inputs and for
    defective ones whose Jordan blocks are small compared to ``2^iters``.

    Raises
    ------
    ValueError
        If ``a`` is not square.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {a.shape}")
    if a.size == 0:
        return 0.0
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")

    norm = np.linalg.norm(a, 2)
    if norm == 0.0:
        return 0.0
    log_scale = math.log(norm)  # log of ||a^(2^k)|| up to the unit-norm iterate
    cur = a / norm
    estimate = norm
    for k in range(1, iters + 1):
        sq = cur @ cur
        s = np.linalg.norm(sq, 2)
        if s == 0.0 or not math.isfinite(s):
            # nilpotent (or numerically so): higher powers vanish
            return 0.0
        log_scale = 2.0 * log_scale + math.log(s)
        cur = sq / s
        new = math.exp(log_scale / 2.0**k)
        if k >= 6 and abs(new - estimate) <= 0.1 * tol * max(1.0, new):
            return new
        estimate = new
        if estimate < 1e-300:
            return 0.0
    return estimate
