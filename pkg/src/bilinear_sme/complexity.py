"""Sample-complexity constants and the implicit finite-sample bound.

Everything here is a computable quantity: the second-moment recursion and
its polynomial growth certificate, the small-ball constants of the
regressor, the boundary-mass constant of the noise, covering numbers, the
two probability bounds combined by the main theorem and the smallest sample
count satisfying its implicit inequality. Logarithms are natural.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import SPECTRAL_TOL, spectral_radius, unvec, vec
from .model import BilinearSystem, augmented_matrix
from .stochastic import InputSpec, NoiseSpec, make_rng, rollout_batch, sample

LOG_BASE = "e"
EXPLOSIVE_TOL = 1e-6
_REFUSAL_SPECTRAL_TOL = 1e-9
# ratio test for "bounded over the horizon"
_GROWTH_SLACK = 1.05


class ExplosiveSystemError(ValueError):
    """The augmented matrix has spectral radius above one."""


class CoveringRangeError(ValueError):
    """A covering radius outside (0, 0.5) was requested."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, last: int):
        super().__init__(msg)
        self.last = last


# -- second-moment growth ----------------------------------------------------

@dataclass(frozen=True)
class GrowthCertificate:
    """``tr(Sigma_t) <= c_pms * (1 + t**r)`` over the checked horizon.

    ``r_lemma`` and ``r_proof`` are the two exponents quoted by the source
    analysis (``n - 1`` and ``n**2``); ``ambiguous`` is set when no exponent
    up to ``n**2`` passed the ratio test and ``r_proof`` was used instead.
    """

    A_tilde: np.ndarray
    rho: float
    r: int
    c_pms: float
    sigma_trace: list
    r_lemma: int
    r_proof: int
    ambiguous: bool = False
    sigma_limit: np.ndarray | None = field(default=None, compare=False)

    @property
    def valid(self) -> bool:
        return self.rho <= 1.0 + EXPLOSIVE_TOL

    def bound(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.c_pms * (1.0 + t ** self.r)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "r": self.r, "c_pms": self.c_pms, "r_lemma": self.r_lemma,
                "r_proof": self.r_proof, "ambiguous": self.ambiguous,
                "horizon": len(self.sigma_trace) - 1}


def _check_psd(S, name: str, n: int) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {S.shape}")
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(S)) < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return S


def matrix_recursion_step(sys: BilinearSystem, Sigma, Sigma_w, input_mean=None,
                          input_cov=None) -> np.ndarray:
    """``F S F^T + sum_{k,l} cov[k,l] B_k S B_l^T + Sigma_w`` in matrix form."""
    m = sys.m
    mean = np.zeros(m) if input_mean is None else np.asarray(input_mean, dtype=float).reshape(-1)
    cov = np.eye(m) if input_cov is None else np.atleast_2d(np.asarray(input_cov, dtype=float))
    F = sys.A + np.tensordot(mean, sys.B, axes=1)
    out = F @ Sigma @ F.T + Sigma_w
    for k in range(m):
        for l in range(m):
            out = out + cov[k, l] * sys.B[k] @ Sigma @ sys.B[l].T
    return out


def noise_covariance(noise_spec: NoiseSpec, n: int) -> np.ndarray:
    return noise_spec.variance * np.eye(n)


def _bounded_ratio(q: np.ndarray) -> bool:
    H = q.size - 1
    late = np.max(q[H // 2:])
    early = np.max(q[H // 4:H // 2 + 1])
    if late == 0:
        return True
    return bool(late <= _GROWTH_SLACK * early)


def covariance_recursion(
    sys: BilinearSystem,
    input_mean=None,
    input_cov=None,
    sigma_w=None,
    sigma_0=None,
    horizon: int = 200,
) -> GrowthCertificate:
    """Iterate ``vec(S_{t+1}) = A_tilde vec(S_t) + vec(Sigma_w)`` and certify growth.

    For ``rho(A_tilde)`` clearly below one the exponent is 0 and ``c_pms``
    also covers the limit ``(I - A_tilde)^-1 vec(Sigma_w)``. Otherwise ``r``
    is the smallest integer for which ``tr(S_t) / (1 + t**r)`` stops growing
    over the horizon.
    """
    n = sys.n
    if horizon < 4:
        raise ValueError(f"horizon must be >= 4, got {horizon}")
    Sw = _check_psd(np.eye(n) if sigma_w is None else sigma_w, "Sigma_w", n)
    S0 = _check_psd(np.zeros((n, n)) if sigma_0 is None else sigma_0, "Sigma_0", n)
    At = augmented_matrix(sys, input_mean, input_cov)
    # the refusal threshold is far below the default estimator tolerance, and
    # Jordan blocks at modulus one only converge like t^(k / t)
    rho = spectral_radius(At, tol=_REFUSAL_SPECTRAL_TOL)
    if rho > 1.0 + EXPLOSIVE_TOL:
        raise ExplosiveSystemError(f"rho(A_tilde) = {rho:.6g} > 1; no growth certificate")

    s = vec(S0)
    sw = vec(Sw)
    traces = np.empty(horizon + 1)
    traces[0] = np.trace(S0)
    for t in range(1, horizon + 1):
        s = At @ s + sw
        traces[t] = np.trace(unvec(s, n))

    t_grid = np.arange(horizon + 1, dtype=float)
    limit = None
    ambiguous = False
    if rho < 1.0 - 10 * SPECTRAL_TOL:
        r = 0
        limit = unvec(np.linalg.solve(np.eye(n * n) - At, sw), n)
        c = max(float(np.max(traces)), float(np.trace(limit)) + float(np.trace(S0)))
    else:
        for r in range(n * n + 1):
            q = traces / (1.0 + t_grid ** r)
            if _bounded_ratio(q):
                break
        else:
            r = n * n
            ambiguous = True
        c = float(np.max(traces / (1.0 + t_grid ** r)))
    return GrowthCertificate(At, float(rho), int(r), c, traces.tolist(), n - 1, n * n,
                             ambiguous, limit)


# -- small-ball constants -------------------------------------------------------

@dataclass(frozen=True)
class BmsbConstants:
    k0: float
    k1: float
    k_z: float
    p_z: float
    sigma_w: float
    sigma_u: float
    u_max: float
    m: int

    def to_dict(self) -> dict:
        return asdict(self)


def p_z_value(sigma_u: float, sigma_w: float, u_max: float, m: int, k0: float, k1: float) -> float:
    """The small-ball probability lower bound, without range checks."""
    lead = sigma_u ** 4 / (12.0 * m * m * u_max ** 4)
    return lead * (1.0 - k1 * k1 / sigma_u ** 2) ** 2 * (1.0 - k0 * k0 / sigma_w ** 2) ** 2


def theoretical_bmsb(sigma_u: float, sigma_w: float, u_max: float, m: int,
                     k0: float, k1: float) -> BmsbConstants:
    if not (sigma_u > 0 and sigma_w > 0 and u_max > 0 and m >= 1):
        raise ValueError("sigma_u, sigma_w, u_max must be > 0 and m >= 1")
    if not 0 < k0 < sigma_w:
        raise ValueError(f"k0 must lie in (0, sigma_w = {sigma_w}), got {k0}")
    if not 0 < k1 < min(1.0, sigma_u):
        raise ValueError(f"k1 must lie in (0, min(1, sigma_u) = {min(1.0, sigma_u)}), got {k1}")
    p = p_z_value(sigma_u, sigma_w, u_max, m, k0, k1)
    return BmsbConstants(float(k0), float(k1), float(k0 * k1), float(p), float(sigma_w),
                         float(sigma_u), float(u_max), int(m))


def maximize_bmsb(sigma_u: float, sigma_w: float, u_max: float, m: int, grid: int = 200,
                  k_power: int = 1) -> BmsbConstants:
    """Grid maximizer of ``k_z**k_power * p_z**3`` over admissible ``(k0, k1)``.

    ``k_power=1`` matches the factor in the sample bound's denominator.
    """
    k0s = sigma_w * np.arange(1, grid) / grid
    k1s = min(1.0, sigma_u) * np.arange(1, grid) / grid
    K0, K1 = np.meshgrid(k0s, k1s, indexing="ij")
    P = p_z_value(sigma_u, sigma_w, u_max, m, K0, K1)
    score = (K0 * K1) ** k_power * P ** 3
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)
    return theoretical_bmsb(sigma_u, sigma_w, u_max, m, float(k0s[i]), float(k1s[j]))


def regressor_samples(sys: BilinearSystem, input_spec: InputSpec, noise_spec: NoiseSpec,
                      n_traj: int, horizon: int, seed=0) -> np.ndarray:
    """Regressors ``z_1..z_horizon`` of ``n_traj`` rollouts from rest, stacked row-wise."""
    X, U = rollout_batch(sys, horizon, input_spec, noise_spec, n_traj, seed)
    X, U = X[1:], U[1:]
    cross = (U[:, :, :, None] * X[:, :, None, :]).reshape(horizon, n_traj, -1)
    return np.concatenate([X, cross], axis=2).reshape(horizon * n_traj, -1)


def empirical_bmsb(sys: BilinearSystem, input_spec: InputSpec, noise_spec: NoiseSpec,
                   k_z: float, n_traj: int = 1000, horizon: int = 100, n_directions: int = 20,
                   rng=0) -> float:
    """Smallest, over random unit directions, frequency of ``|v . z_t| >= k_z``.

    ``rng`` is a seed (or a ``Generator`` from which a seed is drawn); the
    rollouts and the directions use separate child streams. This is the
    marginal frequency across trajectories and times, not the conditional
    probability of the block small-ball definition.
    """
    if k_z < 0:
        raise ValueError(f"k_z must be >= 0, got {k_z}")
    if isinstance(rng, np.random.Generator):
        rng = int(rng.integers(2 ** 63))
    Z = regressor_samples(sys, input_spec, noise_spec, n_traj, horizon, seed=(rng, 0))
    V = make_rng((rng, 1)).standard_normal((n_directions, Z.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    freq = np.mean(np.abs(Z @ V.T) >= k_z, axis=0)
    return float(np.min(freq))


# -- boundary mass ----------------------------------------------------------------

@dataclass(frozen=True)
class CwEstimate:
    """``value`` is the minimum ratio; ``se`` its binomial standard error."""

    value: float
    se: float
    eps: float
    eps_grid: tuple
    n_samples: int

    def __float__(self) -> float:
        return self.value


def estimate_cw(noise_spec: NoiseSpec, eps_grid, n_samples: int = 100_000, rng=0) -> CwEstimate:
    """``min_{eps, j, b} P(b w[j] >= w_max - eps) / eps`` from ``n_samples`` draws."""
    grid = sorted(float(e) for e in eps_grid)
    w_max = noise_spec.bound
    if not grid or grid[0] <= 0 or grid[-1] > w_max:
        raise ValueError(f"eps grid must lie in (0, {w_max}]")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    W = sample(noise_spec, rng, n_samples)
    signed = np.concatenate([W, -W], axis=1)
    best = None
    kept = []
    for eps in grid:
        p = np.mean(signed >= w_max - eps, axis=0)
        if not kept and np.min(p) == 0:
            warnings.warn(f"no samples within {eps} of the noise boundary; dropping it from the grid",
                          RuntimeWarning, stacklevel=2)
            continue
        kept.append(eps)
        j = int(np.argmin(p))
        ratio = p[j] / eps
        if best is None or ratio < best[0]:
            best = (ratio, math.sqrt(p[j] * (1 - p[j]) / n_samples) / eps, eps)
    if best is None:
        raise ValueError("no boundary mass observed at any grid point")
    return CwEstimate(float(best[0]), float(best[1]), best[2], tuple(kept), int(n_samples))


# -- covering numbers and lemma bounds --------------------------------------------

def log_covering_number(dim: int, eps: float) -> float:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0 < eps < 0.5:
        raise CoveringRangeError(f"covering radius must lie in (0, 0.5), got {eps}")
    return (math.log(544.0) + 2.5 * math.log(dim) + math.log(math.log(dim / eps))
            + dim * math.log(1.0 / eps))


def covering_number(dim: int, eps: float) -> float:
    """``544 dim^2.5 log(dim / eps) (1/eps)^dim``; ``inf`` past float range."""
    return _safe_exp(log_covering_number(dim, eps))


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


@dataclass(frozen=True)
class LemmaTerms:
    """A bound ``exp(log_main) + tail`` with the covering radius it used."""

    log_main: float
    tail: float
    eps: float

    @property
    def value(self) -> float:
        return _safe_exp(self.log_main) + self.tail

    def to_dict(self) -> dict:
        v = self.value
        return {"value": v if math.isfinite(v) else None, "log_main": self.log_main,
                "tail": self.tail, "eps": self.eps}


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be > 0, got {v}")


def lemma5_terms(T, kappa, M, n, r, C_z, k_z, p_z) -> LemmaTerms:
    _positive(T=T, kappa=kappa, M=M, n=n, C_z=C_z, k_z=k_z, p_z=p_z)
    a1 = k_z * p_z / 4.0
    eps = a1 * a1 / (2.0 * M * M)
    log_main = math.log(T / kappa) + log_covering_number(n, eps) - kappa * p_z * p_z / 8.0
    return LemmaTerms(log_main, C_z * float(T) ** (r + 1) / M ** 2, eps)


def lemma5_bound(T, kappa, M, n, r, C_z, k_z, p_z) -> float:
    """Probability bound for the block-excitation failure event."""
    return lemma5_terms(T, kappa, M, n, r, C_z, k_z, p_z).value


def lemma6_terms(T, kappa, M, n, m, r, C_z, delta, k_z, p_z, c_w) -> LemmaTerms:
    _positive(T=T, kappa=kappa, M=M, n=n, m=m, C_z=C_z, delta=delta, k_z=k_z, p_z=p_z, c_w=c_w)
    a1 = k_z * p_z / 4.0
    eps_gamma = a1 / (4.0 * M * math.sqrt(n))
    eps_delta = a1 * delta / (4.0 * math.sqrt(n))
    # boundary-mass reading q_w(eps) = min(1, c_w eps)
    q_w = min(1.0, c_w * eps_delta)
    blocks = math.floor(T / kappa)
    dim = n * n + n * n * m
    if q_w >= 1.0:
        log_decay = -math.inf if blocks > 0 else 0.0
    else:
        log_decay = blocks * math.log1p(-q_w)
    log_main = log_covering_number(dim, eps_gamma) + log_decay
    return LemmaTerms(log_main, C_z * float(T) ** (r + 1) / M ** 2, eps_gamma)


def lemma6_bound(T, kappa, M, n, m, r, C_z, delta, k_z, p_z, c_w) -> float:
    """Probability bound for a wide feasible set surviving every block."""
    return lemma6_terms(T, kappa, M, n, m, r, C_z, delta, k_z, p_z, c_w).value


def default_kappa(T, eta: float, p_z: float) -> int:
    """Block length with per-block failure mass at most ``eta / (2T)``."""
    return max(1, math.ceil(8.0 * math.log(2.0 * T / eta) / (p_z * p_z)))


def default_truncation(T, C_z: float, r: int) -> float:
    """``M = sqrt(6 C_z T^(r+1))`` so each truncation tail equals 1/6."""
    return math.sqrt(6.0 * C_z * float(T) ** (r + 1))


# -- the implicit sample bound ------------------------------------------------------

@dataclass(frozen=True)
class ComplexityInputs:
    n: int
    m: int
    k_z: float
    p_z: float
    c_w: float
    delta: float
    eta: float
    eps_r: float
    eps: float
    r: int = 0
    C_z: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        for name in ("delta", "eta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("k_z", "p_z", "c_w", "eps_r", "eps", "C_z"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if self.p_z > 1:
            raise ValueError(f"p_z must be <= 1, got {self.p_z}")
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ComplexityInputs":
        names = cls.__dataclass_fields__
        unknown = set(data) - set(names)
        if unknown:
            raise ValueError(f"unknown input fields: {sorted(unknown)}")
        missing = [k for k in ("n", "m", "k_z", "p_z", "c_w", "delta", "eta", "eps_r", "eps")
                   if k not in data]
        if missing:
            raise ValueError(f"missing input fields: {missing}")
        kw = {k: (int(v) if k in ("n", "m", "r") else float(v)) for k, v in data.items()}
        return cls(**kw)

    def with_(self, **changes) -> "ComplexityInputs":
        return ComplexityInputs(**{**self.to_dict(), **changes})


def theorem1_log_terms(T, inp: ComplexityInputs) -> tuple[float, float]:
    """The two bracketed logarithmic factors of the sample bound."""
    n, m = inp.n, inp.m
    first = math.log(1632.0 * T / inp.eta) + 10.0 * n * n * m * math.log(n * m / inp.eps_r)
    second = 2.5 * math.log(1632.0 * n / inp.eta) + 2.0 * n * math.log(1.0 / inp.eps)
    return first, second


def theorem1_rhs(T, inp: ComplexityInputs) -> float:
    first, second = theorem1_log_terms(T, inp)
    lead = 256.0 * math.sqrt(inp.n) / (inp.k_z * inp.p_z ** 3 * inp.c_w * inp.delta)
    return lead * first * second


def theorem1_satisfied(T, inp: ComplexityInputs) -> bool:
    return T >= theorem1_rhs(T, inp)


def theorem1_min_T(inp: ComplexityInputs, max_iter: int = 10_000) -> int:
    """Smallest integer ``T`` with ``T >= RHS(T)``.

    Fixed-point iteration ``T <- ceil(RHS(T))`` from ``T = 1`` increases
    monotonically to the answer because ``RHS`` is increasing in ``T``; a
    short downward scan and a direct re-check guard against rounding.
    """
    T = 1
    for _ in range(max_iter):
        if theorem1_satisfied(T, inp):
            break
        nxt = math.ceil(theorem1_rhs(T, inp))
        T = nxt if nxt > T else 2 * T
    else:
        raise ConvergenceError(f"no fixed point after {max_iter} iterations", T)
    while T > 1 and theorem1_satisfied(T - 1, inp):
        T -= 1
    if not theorem1_satisfied(T, inp) or (T > 1 and theorem1_satisfied(T - 1, inp)):
        raise ConvergenceError("minimality re-check failed", T)
    return int(T)


def bound_report(inp: ComplexityInputs) -> dict:
    """Sample bound with both lemma bounds evaluated at ``T_min``."""
    T = theorem1_min_T(inp)
    kappa = default_kappa(T, inp.eta, inp.p_z)
    M = default_truncation(T, inp.C_z, inp.r)
    l5 = lemma5_terms(T, kappa, M, inp.n, inp.r, inp.C_z, inp.k_z, inp.p_z)
    l6 = lemma6_terms(T, kappa, M, inp.n, inp.m, inp.r, inp.C_z, inp.delta, inp.k_z, inp.p_z,
                      inp.c_w)
    return {
        "inputs": inp.to_dict(),
        "T_min": T,
        "rhs_at_T_min": theorem1_rhs(T, inp),
        "rhs_at_T_min_minus_1": theorem1_rhs(T - 1, inp) if T > 1 else None,
        "lemma5": l5.to_dict(),
        "lemma6": l6.to_dict(),
        "kappa": kappa,
        "M": M,
        "log_base": LOG_BASE,
    }
