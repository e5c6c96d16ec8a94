"""Seeded random streams, truncated samplers and trajectory simulation.

Random numbers come from numpy's ``PCG64`` bit generator. Independent streams
are derived with ``SeedSequence`` spawn keys, so replication ``k`` of a sweep
seeded with ``master_seed`` always uses ``SeedSequence(master_seed,
spawn_key=(k,))`` no matter how many replications run or in which order.

Truncated laws are sampled coordinate-wise by rejection. Candidates are drawn
in fixed-size blocks and accepted in order, which makes every sample stream
prefix-stable: the first ``N`` accepted values never depend on how many
values are requested in total.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import BilinearSystem, Trajectory

GENERATOR_NAME = "numpy.random.PCG64 (SeedSequence spawn-key streams)"

FAMILIES = ("truncated-gaussian", "truncated-laplace", "uniform-box")

_BLOCK = 1024


def make_rng(seed, *spawn_key: int) -> np.random.Generator:
    """A PCG64 generator for ``seed`` and an optional spawn-key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def replication_rng(master_seed: int, replication: int, purpose: int = 0) -> np.random.Generator:
    """Stream ``purpose`` of replication ``replication``."""
    return make_rng(master_seed, replication, purpose)


@dataclass(frozen=True)
class BoundedSpec:
    """A coordinate-wise i.i.d. law truncated to ``[-bound, bound]``.

    ``scale`` is the standard deviation of the Gaussian base law or the
    scale ``b`` of the Laplace base law; it is ignored for ``uniform-box``.
    """

    family: str = "truncated-gaussian"
    scale: float = 1.0
    bound: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.bound) and self.bound >= 0):
            raise ValueError(f"bound must be finite and >= 0, got {self.bound}")
        if self.family != "uniform-box" and not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.dimension < 0:
            raise ValueError(f"dimension must be >= 0, got {self.dimension}")

    def with_dimension(self, dimension: int) -> "BoundedSpec":
        return BoundedSpec(self.family, self.scale, self.bound, dimension)

    def to_dict(self) -> dict:
        return {"family": self.family, "scale": self.scale, "bound": self.bound,
                "dimension": self.dimension}

    @classmethod
    def from_dict(cls, data: dict, dimension: int | None = None) -> "BoundedSpec":
        dim = data.get("dimension", 1) if dimension is None else dimension
        return cls(data.get("family", "truncated-gaussian"), float(data.get("scale", 1.0)),
                   float(data.get("bound", 1.0)), int(dim))

    @property
    def variance(self) -> float:
        """Per-coordinate variance of the truncated law (closed form)."""
        c = self.bound
        if c == 0:
            return 0.0
        if self.family == "uniform-box":
            return c * c / 3.0
        s = self.scale
        a = c / s
        if self.family == "truncated-gaussian":
            pdf = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
            mass = math.erf(a / math.sqrt(2))
            return s * s * (1.0 - 2.0 * a * pdf / mass)
        ea = math.exp(-a)
        return s * s * (2.0 - ea * (a * a + 2 * a + 2)) / -math.expm1(-a)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def tail_probability(self, level: float) -> float:
        """``P(X >= level)`` for one coordinate, ``0 <= level <= bound``."""
        c = self.bound
        level = min(max(level, 0.0), c)
        if c == 0:
            return 1.0 if level <= 0 else 0.0
        if self.family == "uniform-box":
            return (c - level) / (2 * c)
        s = self.scale
        if self.family == "truncated-gaussian":
            phi = lambda t: 0.5 * math.erfc(-t / (s * math.sqrt(2)))  # noqa: E731
            return (phi(c) - phi(level)) / (phi(c) - phi(-c))
        return (math.exp(-level / s) - math.exp(-c / s)) / (2 * -math.expm1(-c / s))


InputSpec = BoundedSpec
NoiseSpec = BoundedSpec


def _base_draw(spec: BoundedSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    if spec.family == "truncated-gaussian":
        return rng.normal(0.0, spec.scale, size)
    if spec.family == "truncated-laplace":
        return rng.laplace(0.0, spec.scale, size)
    return rng.uniform(-spec.bound, spec.bound, size)


def sample_coordinates(spec: BoundedSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` i.i.d. truncated scalars, in stream order."""
    if spec.bound == 0:
        return np.zeros(count)
    out = np.empty(count)
    filled = 0
    while filled < count:
        cand = _base_draw(spec, rng, _BLOCK)
        cand = cand[np.abs(cand) <= spec.bound]
        take = min(cand.size, count - filled)
        out[filled:filled + take] = cand[:take]
        filled += take
    if np.max(np.abs(out), initial=0.0) > spec.bound:
        raise AssertionError("truncation violated")
    return out


def sample(spec: BoundedSpec, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One vector (``size=None``) or ``size`` row vectors of dimension ``spec.dimension``.

    Note that a single generator yields prefix-stable output only when it is
    used for one sampling call; :func:`simulate` uses separate streams for the
    input and the noise.
    """
    rows = 1 if size is None else int(size)
    vals = sample_coordinates(spec, rng, rows * spec.dimension).reshape(rows, spec.dimension)
    return vals[0] if size is None else vals


def sample_input(spec: InputSpec, rng, size=None) -> np.ndarray:
    return sample(spec, rng, size)


def sample_noise(spec: NoiseSpec, rng, size=None) -> np.ndarray:
    return sample(spec, rng, size)


def simulate(
    sys: BilinearSystem,
    x0,
    T: int,
    input_spec: InputSpec,
    noise_spec: NoiseSpec,
    seed=0,
    spawn_key: tuple[int, ...] = (),
) -> Trajectory:
    """Roll the system forward ``T`` steps with recorded noises.

    Inputs and noises use two child streams of ``SeedSequence(seed,
    spawn_key)``, so a trajectory of length ``T`` is an exact prefix of the
    trajectory of any length ``T' > T`` with the same seed.
    """
    if not math.isclose(input_spec.bound, sys.u_max):
        raise ValueError(f"input bound {input_spec.bound} != system u_max {sys.u_max}")
    if not math.isclose(noise_spec.bound, sys.w_max, abs_tol=0.0):
        raise ValueError(f"noise bound {noise_spec.bound} != system w_max {sys.w_max}")
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise ValueError(f"x0 has length {x0.shape[0]}, expected {sys.n}")
    u = sample(input_spec.with_dimension(sys.m), make_rng(seed, *spawn_key, 0), T)
    w = sample(noise_spec.with_dimension(sys.n), make_rng(seed, *spawn_key, 1), T)
    x = np.empty((T + 1, sys.n))
    x[0] = x0
    A, B = sys.A, sys.B
    for t in range(T):
        M = A + np.tensordot(u[t], B, axes=1)
        x[t + 1] = M @ x[t] + w[t]
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("trajectory diverged to non-finite values")
    return Trajectory(x, u, w, seed=seed if isinstance(seed, int) else None)


def rollout_batch(
    sys: BilinearSystem,
    horizon: int,
    input_spec: InputSpec,
    noise_spec: NoiseSpec,
    n_rollouts: int,
    seed=0,
    x0=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``n_rollouts`` independent copies of the system together.

    Returns states of shape ``(horizon + 1, n_rollouts, n)`` and inputs of
    shape ``(horizon + 1, n_rollouts, m)``; the last input slice is an extra
    draw so that the regressor at the final time is available.
    """
    n, m = sys.n, sys.m
    u = sample(input_spec.with_dimension(m), make_rng(seed, 0), (horizon + 1) * n_rollouts)
    w = sample(noise_spec.with_dimension(n), make_rng(seed, 1), horizon * n_rollouts)
    u = u.reshape(horizon + 1, n_rollouts, m)
    w = w.reshape(horizon, n_rollouts, n)
    X = np.empty((horizon + 1, n_rollouts, n))
    X[0] = 0.0 if x0 is None else np.asarray(x0, dtype=float).reshape(1, n)
    for t in range(horizon):
        M = sys.A[None] + np.einsum("rk,kij->rij", u[t], sys.B)
        X[t + 1] = np.einsum("rij,rj->ri", M, X[t]) + w[t]
    return X, u


def monte_carlo_second_moment(
    sys: BilinearSystem,
    horizon: int,
    input_spec: InputSpec,
    noise_spec: NoiseSpec,
    n_rollouts: int,
    seed=0,
    x0=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ``E||x_t||^2`` for ``t = 0..horizon`` and its standard error."""
    X, _ = rollout_batch(sys, horizon, input_spec, noise_spec, n_rollouts, seed, x0)
    sq = np.sum(X * X, axis=2)
    return sq.mean(axis=1), sq.std(axis=1, ddof=1) / math.sqrt(n_rollouts)


# -- trajectory CSV -----------------------------------------------------------

def trajectory_header(n: int, m: int, with_noise: bool = True) -> list[str]:
    cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
    if with_noise:
        cols += [f"w_{i + 1}" for i in range(n)]
    return cols


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns ``t,x_1..x_n,u_1..u_m[,w_1..w_n]``; the last row has only x."""
    with_noise = traj.w is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_header(traj.n, traj.m, with_noise))
        for t in range(traj.T + 1):
            row = [str(t)] + [_fmt(v) for v in traj.x[t]]
            if t < traj.T:
                row += [_fmt(v) for v in traj.u[t]]
                if with_noise:
                    row += [_fmt(v) for v in traj.w[t]]
            else:
                row += [""] * (traj.m + (traj.n if with_noise else 0))
            writer.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    header = rows[0]
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    us = [i for i, h in enumerate(header) if h.startswith("u_")]
    ws = [i for i, h in enumerate(header) if h.startswith("w_")]
    if header[0] != "t" or not xs:
        raise ValueError(f"{path}: header must start with t,x_1,...")
    body = rows[1:]
    x = np.array([[float(r[i]) for i in xs] for r in body])
    u = np.array([[float(r[i]) for i in us] for r in body[:-1]]).reshape(len(body) - 1, len(us))
    w = None
    if ws:
        w = np.array([[float(r[i]) for i in ws] for r in body[:-1]]).reshape(len(body) - 1, len(ws))
    return Trajectory(x, u, w)

