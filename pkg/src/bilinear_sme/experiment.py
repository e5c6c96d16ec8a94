"""Seeded experiment sweeps: configuration, replications, CSV and metadata output.

Replication ``k`` of a sweep with master seed ``s`` simulates its trajectory
from ``SeedSequence(s, spawn_key=(k, 0, .))`` and draws its diameter
directions from ``SeedSequence(s, spawn_key=(k, 1))``. Every ``T`` in the
grid uses a prefix of the same trajectory and the same directions, so
results within a replication are nested and do not depend on how many
replications run or in which process.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .linalg import spectral_radius
from .lp import LPError
from .model import BilinearSystem, augmented_matrix, generate_structured_system
from .ols import RankDeficientError, ols_confidence_diameter, ols_fit_arrays
from .sme import (DEFAULT_PRIOR_R0, FeasibleSet, InfeasibleSetError, chebyshev_estimate,
                  default_n_directions, diameter, random_directions)
from .stochastic import GENERATOR_NAME, BoundedSpec, make_rng, simulate, write_trajectory_csv

SWEEP_HEADER = ["replication", "T", "sme_lower", "sme_upper", "sme_point_err_fro",
                "ols_err_fro", "ols_conf_diam", "wall_ms"]
CHECKS_HEADER = ["replication", "T", "truth_member", "prior_active", "status"]
SUMMARY_STATS = ["sme_lower", "sme_upper", "sme_point_err_fro", "ols_err_fro", "ols_conf_diam"]

STATUS_OK = "ok"
STATUS_INFEASIBLE = "infeasible"
STATUS_RANK = "rank_deficient"
STATUS_LP = "lp_failure"


class ConfigError(ValueError):
    """An invalid configuration field; the message names the field."""


@dataclass
class ExperimentConfig:
    system_file: str | None = None
    n: int = 3
    m: int = 2
    target_radius: float = 0.98
    system_seed: int = 0
    input: dict = field(default_factory=lambda: {"family": "truncated-gaussian", "scale": 1.0,
                                                 "bound": 1.0})
    noise: dict = field(default_factory=lambda: {"family": "truncated-laplace", "scale": 1.0,
                                                 "bound": 1.0})
    T_grid: list = field(default_factory=lambda: [100, 200, 500, 1000, 2000, 5000])
    replications: int = 10
    master_seed: int = 0
    prior_R0: float = DEFAULT_PRIOR_R0
    n_directions: int | None = None
    refine: int = 10
    level: float = 0.9
    ols_ridge: float = 1.0
    w_max: float | None = None
    x0: list | None = None
    out: str = "results"
    bmsb_trajectories: int = 1000
    bmsb_horizon: int = 100
    bmsb_directions: int = 20
    cw_samples: int = 100_000
    cw_eps_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    growth_horizon: int = 200

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"config field {name!r}: {msg}")

        grid = self.T_grid
        need(isinstance(grid, (list, tuple)) and len(grid) > 0, "T_grid", "must be a non-empty list")
        need(all(isinstance(t, int) and not isinstance(t, bool) and t >= 1 for t in grid),
             "T_grid", "entries must be positive integers")
        need(all(a < b for a, b in zip(grid, grid[1:])), "T_grid", "must be strictly increasing")
        need(isinstance(self.replications, int) and self.replications >= 1, "replications",
             "must be an integer >= 1")
        need(isinstance(self.master_seed, int) and self.master_seed >= 0, "master_seed",
             "must be a non-negative integer")
        need(self.n >= 1 and self.m >= 1, "n/m", "must be >= 1")
        need(0 < self.target_radius <= 1, "target_radius", "must lie in (0, 1]")
        need(self.prior_R0 > 0, "prior_R0", "must be > 0")
        need(self.n_directions is None or self.n_directions >= 0, "n_directions", "must be >= 0")
        need(self.refine >= 0, "refine", "must be >= 0")
        need(0 < self.level < 1, "level", "must lie in (0, 1)")
        need(self.ols_ridge > 0, "ols_ridge", "must be > 0")
        for name in ("input", "noise"):
            try:
                BoundedSpec.from_dict(getattr(self, name))
            except (ValueError, TypeError, AttributeError) as exc:
                raise ConfigError(f"config field {name!r}: {exc}") from exc
        need(self.w_max is None or self.w_max >= 0, "w_max", "must be >= 0")

    @property
    def input_spec(self) -> BoundedSpec:
        return BoundedSpec.from_dict(self.input, self.m)

    @property
    def noise_spec(self) -> BoundedSpec:
        return BoundedSpec.from_dict(self.noise, self.n)

    @property
    def estimator_w_max(self) -> float:
        """Noise bound assumed by the estimators (defaults to the true bound)."""
        return self.noise_spec.bound if self.w_max is None else float(self.w_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def hash(self) -> str:
        """SHA-256 of the canonical JSON config, excluding the output directory."""
        data = self.to_dict()
        data.pop("out")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def build_system(cfg: ExperimentConfig) -> BilinearSystem:
    inp, noise = cfg.input_spec, cfg.noise_spec
    if cfg.system_file is not None:
        try:
            sys = BilinearSystem.load(cfg.system_file)
        except OSError as exc:
            raise ConfigError(f"config field 'system_file': {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config field 'system_file': {exc}") from exc
        if sys.n != cfg.n or sys.m != cfg.m:
            raise ConfigError(f"config field 'system_file': dimensions ({sys.n}, {sys.m}) "
                              f"differ from n={cfg.n}, m={cfg.m}")
        return BilinearSystem(sys.A, sys.B, noise.bound, inp.bound)
    return generate_structured_system(cfg.n, cfg.m, cfg.target_radius, cfg.system_seed,
                                      input_var=inp.variance, w_max=noise.bound, u_max=inp.bound)


def system_radius(sys: BilinearSystem, input_spec: BoundedSpec) -> float:
    m = sys.m
    return spectral_radius(augmented_matrix(sys, np.zeros(m), input_spec.variance * np.eye(m)))


def trajectory_for(cfg: ExperimentConfig, sys: BilinearSystem, replication: int, T: int):
    return simulate(sys, cfg.x0, T, cfg.input_spec, cfg.noise_spec, seed=cfg.master_seed,
                    spawn_key=(replication, 0))


def directions_for(cfg: ExperimentConfig, dim: int, replication: int) -> np.ndarray:
    count = default_n_directions(dim) if cfg.n_directions is None else cfg.n_directions
    return random_directions(dim, count, make_rng(cfg.master_seed, replication, 1))


# -- one replication ------------------------------------------------------------

@dataclass
class SweepRow:
    replication: int
    T: int
    sme_lower: float = math.nan
    sme_upper: float = math.nan
    sme_point_err_fro: float = math.nan
    ols_err_fro: float = math.nan
    ols_conf_diam: float = math.nan
    wall_ms: float = math.nan
    truth_member: bool = False
    prior_active: bool = False
    status: str = STATUS_OK


def run_replication(cfg: ExperimentConfig, sys: BilinearSystem, replication: int) -> list[SweepRow]:
    """All rows of one replication, in ``T_grid`` order."""
    traj = trajectory_for(cfg, sys, replication, cfg.T_grid[-1])
    Z, Y = traj.regressors(), traj.targets()
    theta_star = sys.theta_star()
    dirs = directions_for(cfg, Z.shape[1], replication)
    w_max = cfg.estimator_w_max
    rows = []
    hints = None
    failed = None
    for T in cfg.T_grid:
        row = SweepRow(replication, T)
        rows.append(row)
        fs = FeasibleSet(Z[:T], Y[:T], w_max, cfg.prior_R0)
        row.truth_member = fs.contains(theta_star)
        if failed is not None:
            # the sets are nested, so an empty set stays empty
            row.status = failed
            continue
        start = time.perf_counter()
        try:
            rep = diameter(fs, directions=dirs, refine=cfg.refine, hints=hints)
            hints = rep.geometries
            center = chebyshev_estimate(fs)
        except InfeasibleSetError:
            failed = row.status = STATUS_INFEASIBLE
            continue
        except LPError:
            row.status = STATUS_LP
            continue
        row.sme_lower, row.sme_upper = rep.lower, rep.upper
        row.prior_active = rep.prior_active
        row.sme_point_err_fro = float(np.linalg.norm(center - theta_star))
        try:
            fit = ols_fit_arrays(Z[:T], Y[:T])
            row.ols_err_fro = float(np.linalg.norm(fit.theta_hat - theta_star))
            row.ols_conf_diam = ols_confidence_diameter(fit, cfg.level, w_max, cfg.ols_ridge).diameter
        except RankDeficientError:
            row.status = STATUS_RANK
        row.wall_ms = 1000.0 * (time.perf_counter() - start)
    return rows


def _replication_job(args):
    cfg_dict, sys_dict, k = args
    return run_replication(ExperimentConfig.from_dict(cfg_dict), BilinearSystem.from_dict(sys_dict), k)


def run_sweep(cfg: ExperimentConfig, sys: BilinearSystem | None = None,
              jobs: int = 1) -> list[SweepRow]:
    """Rows for every replication, ordered by (replication, T)."""
    sys = build_system(cfg) if sys is None else sys
    reps = range(cfg.replications)
    if jobs > 1 and cfg.replications > 1:
        args = [(cfg.to_dict(), sys.to_dict(), k) for k in reps]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_replication_job, args))
    else:
        chunks = [run_replication(cfg, sys, k) for k in reps]
    return [row for chunk in chunks for row in chunk]


# -- aggregation and output -------------------------------------------------------

def _num(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def summarize(rows: list[SweepRow], T_grid) -> list[dict]:
    """Per-T median and 5th/95th percentiles over the successful replications."""
    out = []
    for T in T_grid:
        sel = [r for r in rows if r.T == T]
        ok = [r for r in sel if r.status == STATUS_OK]
        entry = {"T": T, "n_ok": len(ok), "n_failed": len(sel) - len(ok)}
        for name in SUMMARY_STATS:
            vals = np.array([getattr(r, name) for r in ok], dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size:
                p05, med, p95 = np.percentile(vals, [5, 50, 95])
            else:
                p05 = med = p95 = math.nan
            entry[f"{name}_median"] = float(med)
            entry[f"{name}_p05"] = float(p05)
            entry[f"{name}_p95"] = float(p95)
        out.append(entry)
    return out


def summary_header() -> list[str]:
    cols = ["T", "n_ok", "n_failed"]
    for name in SUMMARY_STATS:
        cols += [f"{name}_median", f"{name}_p05", f"{name}_p95"]
    return cols


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_sweep_csv(rows: list[SweepRow], path, with_timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.replication, r.T, _num(r.sme_lower), _num(r.sme_upper),
                        _num(r.sme_point_err_fro), _num(r.ols_err_fro), _num(r.ols_conf_diam),
                        _num(r.wall_ms) if with_timing else ""])


def write_checks_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(CHECKS_HEADER)
        for r in rows:
            w.writerow([r.replication, r.T, int(r.truth_member), int(r.prior_active), r.status])


def write_timing_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["replication", "T", "wall_ms"])
        for r in rows:
            w.writerow([r.replication, r.T, _num(r.wall_ms)])


def write_summary_csv(summary: list[dict], path) -> None:
    header = summary_header()
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(header)
        for entry in summary:
            w.writerow([entry[h] if h in ("T", "n_ok", "n_failed") else _num(entry[h]) for h in header])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


GNUPLOT_SCRIPT = """\
set datafile separator ","
set logscale xy
set key top right
set xlabel "T"
set ylabel "diameter"
set terminal pngcairo size 800,600
set output "contraction.png"
plot "summary.csv" using 1:8:9 with filledcurves lc rgb "#c6dbef" title "SME upper (5-95%)", \\
     "" using 1:7 with linespoints lc rgb "#08519c" title "SME upper (median)", \\
     "" using 1:17:18 with filledcurves lc rgb "#fdd0a2" title "OLS region (5-95%)", \\
     "" using 1:16 with linespoints lc rgb "#d94801" title "OLS region (median)"
"""


def write_gnuplot(path) -> None:
    Path(path).write_text(GNUPLOT_SCRIPT)


def versions() -> dict:
    return {"bilinear_sme": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def metadata(cfg: ExperimentConfig | None, seed: int | None, **extra) -> dict:
    meta = {"generator": GENERATOR_NAME, "versions": versions(), "seed": seed}
    if cfg is not None:
        meta["config_hash"] = cfg.hash()
        meta["input_spec"] = cfg.input_spec.to_dict()
        meta["noise_spec"] = cfg.noise_spec.to_dict()
    meta.update(extra)
    return meta


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_sidecar(path, meta: dict) -> None:
    """``<path>.meta.json`` with the shared metadata and the file's SHA-256."""
    path = Path(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    write_json(path.with_name(path.name + ".meta.json"), {**meta, "file": path.name,
                                                          "sha256": digest})


def write_sweep_outputs(cfg: ExperimentConfig, rows: list[SweepRow], out_dir, sys: BilinearSystem,
                        with_timing: bool = False, plot: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows, cfg.T_grid)
    paths = {"sweep": out / "sweep.csv", "checks": out / "sweep_checks.csv",
             "summary": out / "summary.csv", "timing": out / "timing.csv"}
    write_sweep_csv(rows, paths["sweep"], with_timing)
    write_checks_csv(rows, paths["checks"])
    write_summary_csv(summary, paths["summary"])
    write_timing_csv(rows, paths["timing"])
    meta = metadata(cfg, cfg.master_seed, rho=system_radius(sys, cfg.input_spec),
                    replications=cfg.replications,
                    failed_replications=sorted({r.replication for r in rows
                                                if r.status == STATUS_INFEASIBLE}))
    for key in ("sweep", "checks", "summary"):
        write_sidecar(paths[key], meta)
    if plot:
        paths["plot"] = out / "contraction.gp"
        write_gnuplot(paths["plot"])
    return paths


def simulate_outputs(cfg: ExperimentConfig, out_dir, T: int | None = None) -> list[Path]:
    """System JSON plus one trajectory CSV per replication, each with a sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys = build_system(cfg)
    T = cfg.T_grid[-1] if T is None else T
    rho = system_radius(sys, cfg.input_spec)
    meta = metadata(cfg, cfg.master_seed, rho=rho, T=T)
    sys_path = out / "system.json"
    sys.save(sys_path)
    write_sidecar(sys_path, meta)
    written = [sys_path]
    for k in range(cfg.replications):
        p = out / f"trajectory_{k:03d}.csv"
        write_trajectory_csv(trajectory_for(cfg, sys, k, T), p)
        write_sidecar(p, {**meta, "replication": k})
        written.append(p)
    return written


def constants_report(cfg: ExperimentConfig, sys: BilinearSystem | None = None) -> dict:
    """Small-ball, boundary-mass and growth constants of the configured system.

    An explosive system still yields the small-ball and boundary-mass
    fields; the growth fields are then ``None`` and ``growth_valid`` is false.
    """
    from .complexity import (LOG_BASE, ExplosiveSystemError, covariance_recursion,
                             empirical_bmsb, estimate_cw, maximize_bmsb)

    sys = build_system(cfg) if sys is None else sys
    inp, noise = cfg.input_spec, cfg.noise_spec
    bmsb = maximize_bmsb(inp.std, noise.std, inp.bound, sys.m)
    n_z = cfg.bmsb_trajectories * cfg.bmsb_horizon
    p_hat = empirical_bmsb(sys, inp, noise, bmsb.k_z, cfg.bmsb_trajectories, cfg.bmsb_horizon,
                           cfg.bmsb_directions, rng=(cfg.master_seed, 2))
    cw = estimate_cw(noise, cfg.cw_eps_grid, cfg.cw_samples, rng=make_rng(cfg.master_seed, 3))
    report = {
        "k0": bmsb.k0, "k1": bmsb.k1, "k_z": bmsb.k_z, "p_z": bmsb.p_z,
        "sigma_u": inp.std, "sigma_w": noise.std,
        "p_hat": p_hat, "p_hat_se": math.sqrt(p_hat * (1 - p_hat) / n_z), "p_hat_samples": n_z,
        "p_hat_directions": cfg.bmsb_directions,
        "c_w_hat": cw.value, "c_w_se": cw.se, "c_w_eps": cw.eps, "c_w_samples": cw.n_samples,
        "rho": system_radius(sys, inp),
        "log_base": LOG_BASE,
    }
    try:
        cert = covariance_recursion(sys, np.zeros(sys.m), inp.variance * np.eye(sys.m),
                                    noise.variance * np.eye(sys.n), None, cfg.growth_horizon)
    except ExplosiveSystemError:
        report.update(r=None, c_pms=None, C_z=None, growth_valid=False, growth_ambiguous=None)
        return report
    C_z = cert.c_pms * (1.0 + sys.m * inp.bound ** 2)
    report.update(r=cert.r, c_pms=cert.c_pms, C_z=C_z, growth_valid=True,
                  growth_ambiguous=cert.ambiguous, growth_horizon=cfg.growth_horizon,
                  r_lemma=cert.r_lemma, r_proof=cert.r_proof)
    return report


def diam_report(traj, w_max: float, T_values, prior_R0: float = DEFAULT_PRIOR_R0,
                n_directions: int | None = None, seed: int = 0, refine: int = 10,
                theta=None) -> list[dict]:
    """Diameter bounds of the feasible set of a stored trajectory at each ``T``."""
    Z, Y = traj.regressors(), traj.targets()
    count = default_n_directions(Z.shape[1]) if n_directions is None else n_directions
    dirs = random_directions(Z.shape[1], count, make_rng(seed))
    out = []
    hints = None
    for T in T_values:
        if not 0 <= T <= traj.T:
            raise ValueError(f"T={T} outside [0, {traj.T}]")
        fs = FeasibleSet(Z[:T], Y[:T], w_max, prior_R0)
        rep = diameter(fs, directions=dirs, refine=refine, hints=hints)
        hints = rep.geometries
        entry = {"T": T, "lower": rep.lower, "upper": rep.upper, "per_row": rep.per_row,
                 "prior_active": rep.prior_active}
        if theta is not None:
            entry["contains_theta"] = fs.contains(theta)
        out.append(entry)
    return out
