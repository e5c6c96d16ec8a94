"""Bilinear system model ``x+ = A x + sum_i u[i] B_i x + w``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import kron, spectral_radius


class DimensionError(ValueError):
    pass


class NoiseBoundError(ValueError):
    pass


@dataclass(frozen=True)
class BilinearSystem:
    """Parameters of a discrete-time bilinear system.

    ``A`` is ``(n, n)`` and ``B`` is a stack of ``m`` matrices of shape
    ``(n, n)``. ``w_max`` and ``u_max`` are infinity-norm bounds on the noise
    and the input.
    """

    A: np.ndarray
    B: np.ndarray
    w_max: float = 1.0
    u_max: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((0, n, n))
        if B.ndim == 2:
            B = B[None]
        if B.ndim != 3 or B.shape[1:] != (n, n):
            raise DimensionError(f"B must have shape (m, {n}, {n}), got {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")
        if not (np.isfinite(self.w_max) and self.w_max >= 0):
            raise ValueError(f"w_max must be finite and >= 0, got {self.w_max}")
        if not (np.isfinite(self.u_max) and self.u_max > 0):
            raise ValueError(f"u_max must be finite and > 0, got {self.u_max}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "w_max", float(self.w_max))
        object.__setattr__(self, "u_max", float(self.u_max))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def n_features(self) -> int:
        return self.n + self.n * self.m

    def theta_star(self) -> np.ndarray:
        """The ``(n, n + n m)`` parameter matrix ``[A, B_1, ..., B_m]``."""
        return np.hstack([self.A, *self.B])

    @classmethod
    def from_theta(cls, theta, m: int, w_max: float = 1.0, u_max: float = 1.0):
        theta = np.asarray(theta, dtype=float)
        n = theta.shape[0]
        if theta.shape[1] != n + n * m:
            raise DimensionError(f"theta has {theta.shape[1]} columns, expected {n + n * m}")
        B = np.stack([theta[:, n + i * n:n + (i + 1) * n] for i in range(m)]) if m else np.zeros((0, n, n))
        return cls(theta[:, :n], B, w_max, u_max)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "A": self.A.reshape(-1).tolist(),
            "B": [Bi.reshape(-1).tolist() for Bi in self.B],
            "w_max": self.w_max,
            "u_max": self.u_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BilinearSystem":
        try:
            n, m = int(data["n"]), int(data["m"])
            A = np.asarray(data["A"], dtype=float).reshape(n, n)
            B = np.asarray(data["B"], dtype=float).reshape(m, n, n)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"malformed system description: {exc}") from exc
        return cls(A, B, data.get("w_max", 1.0), data.get("u_max", 1.0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "BilinearSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Trajectory:
    """States ``x[0..T]``, inputs ``u[0..T-1]`` and (optionally) the noises."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.asarray(self.u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        T = x.shape[0] - 1
        if u.shape[0] != T:
            raise DimensionError(f"{x.shape[0]} states need {T} inputs, got {u.shape[0]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        if self.w is not None:
            w = np.atleast_2d(np.asarray(self.w, dtype=float)).reshape(T, x.shape[1])
            object.__setattr__(self, "w", w)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def regressors(self) -> np.ndarray:
        """``(T, n + n m)`` array whose row t is ``z_t = [x_t; u_t (x) x_t]``."""
        return regressor_matrix(self.x[:-1], self.u)

    def targets(self) -> np.ndarray:
        return self.x[1:]

    def prefix(self, T: int) -> "Trajectory":
        if not 0 <= T <= self.T:
            raise ValueError(f"prefix length {T} outside [0, {self.T}]")
        w = None if self.w is None else self.w[:T]
        return Trajectory(self.x[: T + 1], self.u[:T], w, self.seed, dict(self.meta))


def build_regressor(x, u) -> np.ndarray:
    """Stack ``x`` with ``kron(u, x)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    return np.concatenate([x, np.kron(u, x)])


def regressor_matrix(X, U) -> np.ndarray:
    """Row-wise :func:`build_regressor` for ``X`` of shape (T, n), ``U`` (T, m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if X.shape[0] != U.shape[0]:
        raise DimensionError(f"{X.shape[0]} states but {U.shape[0]} inputs")
    T, n = X.shape
    cross = (U[:, :, None] * X[:, None, :]).reshape(T, -1)
    return np.hstack([X, cross])


def step(sys: BilinearSystem, x, u, w=None) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise DimensionError(f"state has length {x.shape[0]}, expected {sys.n}")
    if u.shape[0] != sys.m:
        raise DimensionError(f"input has length {u.shape[0]}, expected {sys.m}")
    if w is None:
        w = np.zeros(sys.n)
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != sys.n:
        raise DimensionError(f"noise has length {w.shape[0]}, expected {sys.n}")
    if np.max(np.abs(w), initial=0.0) > sys.w_max:
        raise NoiseBoundError(f"||w||_inf = {np.max(np.abs(w))} exceeds w_max = {sys.w_max}")
    M = sys.A + np.tensordot(u, sys.B, axes=1)
    return M @ x + w


def augmented_matrix(sys: BilinearSystem, input_mean=None, input_cov=None) -> np.ndarray:
    """Second-moment transition matrix of the state.

    ``vec(E[x+ x+^T]) = A_tilde vec(E[x x^T]) + vec(Sigma_w)`` with
    ``A_tilde = F (x) F + sum_{k,l} cov[k, l] B_l (x) B_k`` and
    ``F = A + sum_k mean[k] B_k``.
    """
    n, m = sys.n, sys.m
    mean = np.zeros(m) if input_mean is None else np.asarray(input_mean, dtype=float).reshape(-1)
    cov = np.eye(m) if input_cov is None else np.atleast_2d(np.asarray(input_cov, dtype=float))
    if mean.shape[0] != m or cov.shape != (m, m):
        raise DimensionError(f"input statistics do not match m = {m}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("input covariance must be symmetric")
    if m and np.min(np.linalg.eigvalsh(cov)) < -1e-12:
        raise ValueError("input covariance must be positive semidefinite")
    F = sys.A + np.tensordot(mean, sys.B, axes=1)
    out = kron(F, F)
    for k in range(m):
        for l in range(m):
            if cov[k, l] != 0.0:
                out = out + cov[k, l] * kron(sys.B[l], sys.B[k])
    return out


def generate_structured_system(
    n: int,
    m: int,
    target_radius: float = 0.98,
    seed: int = 0,
    input_var: float = 1.0,
    w_max: float = 1.0,
    u_max: float = 1.0,
    max_bisect: int = 200,
) -> BilinearSystem:
    """Random system with diagonal ``A`` and strictly lower-triangular ``B_i``.

    Raw entries are uniform on [-1, 1]. ``A`` is first scaled so that
    ``rho(A) <= 1``; then ``A`` and every ``B_i`` are multiplied by a common
    factor found by bisection so that the spectral radius of the augmented
    matrix (zero-mean input, covariance ``input_var * I``) equals
    ``target_radius``.
    """
    if not 0 < target_radius <= 1:
        raise ValueError(f"target_radius must lie in (0, 1], got {target_radius}")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, size=n)
    if np.max(np.abs(a)) > 1:
        a = a / np.max(np.abs(a))
    A0 = np.diag(a)
    B0 = np.tril(rng.uniform(-1.0, 1.0, size=(m, n, n)), k=-1)
    cov = input_var * np.eye(m)

    def radius(s):
        return spectral_radius(augmented_matrix(BilinearSystem(s * A0, s * B0, w_max, u_max),
                                                np.zeros(m), cov))

    lo, hi = 0.0, 1.0
    while radius(hi) < target_radius:
        hi *= 2.0
        if hi > 1e8:
            raise RuntimeError("could not bracket the target spectral radius")
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        r = radius(mid)
        if abs(r - target_radius) <= 1e-6 or hi - lo <= 1e-12 * hi:
            lo = hi = mid
            break
        if r < target_radius:
            lo = mid
        else:
            hi = mid
    else:
        raise RuntimeError("bisection on the system scale did not converge")
    s = 0.5 * (lo + hi)
    if abs(radius(s) - target_radius) > 1e-3:
        raise RuntimeError("bisection on the system scale did not converge")
    return BilinearSystem(s * A0, s * B0, w_max, u_max)
