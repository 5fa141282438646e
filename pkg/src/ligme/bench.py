"""Synthetic denoising benchmark for the fused-lasso family.

A sparse piecewise-constant target is generated per config, white noise is
added at an exact SNR for each seed, every model variant is solved over its
``(mu1, mu2)`` grid and the squared error ``||x* - x~||^2`` is recorded.
Everything is a pure function of the config, so repeated runs produce
identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .fused import FusedProblemSpec, build_D, build_model, build_synthesis, reconstruct, solve_fused
from .gme import DesignError, design_gme_bivariate
from .linops import DenseMatrix, Identity
from .solver import StoppingRule, objective

logger = logging.getLogger(__name__)

__all__ = [
    "SignalSpec",
    "ModelGrid",
    "SolverConfig",
    "ExperimentConfig",
    "ResultRecord",
    "RESULT_COLUMNS",
    "OUTPUT_DIR_ENV",
    "load_config",
    "dump_config",
    "gen_signal",
    "add_noise_snr",
    "make_problem",
    "run_cell",
    "run_grid",
    "best_records",
    "baseline_shift_test",
    "emit_results",
    "read_results",
]

OUTPUT_DIR_ENV = "LIGME_OUTPUT_DIR"
RESULT_COLUMNS = (
    "model", "variant", "seed", "mu1", "mu2", "se", "iterations", "fp_residual",
    "early_violation", "asym_residual", "status",
)
REFERENCE_ITERS = {"default": 600_000, "bivariate-ii": 1_400_000}


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass(frozen=True)
class SignalSpec:
    pulses: int = 4
    amplitude: tuple = (1.0, 3.0)
    width: tuple = (2, 5)
    baseline: float = 0.0
    seed: int = 2024

    def __post_init__(self):
        lo, hi = self.amplitude
        if self.pulses < 0:
            raise ValueError("pulse count must be nonnegative")
        if not 0 <= lo <= hi:
            raise ValueError("amplitude range must satisfy 0 <= lo <= hi")
        wlo, whi = self.width
        if not 1 <= wlo <= whi:
            raise ValueError("width range must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class ModelGrid:
    """One model of the experiment: a variant, its weight grid and design knobs.

    ``interval`` is ``"R"`` for the real line, a number for a singleton, or
    ``[lo, hi]``; ``None`` keeps the variant preset.  ``max_iter`` overrides
    the solver budget for this model only.
    """

    name: str
    variant: str
    mu1: tuple = (0.0,)
    mu2: tuple = (0.1,)
    theta: float = 0.99
    omega: tuple = (0.5, 0.5)
    interval: object = None
    max_iter: int | None = None

    def __post_init__(self):
        if not self.mu1 or not self.mu2:
            raise ValueError(f"model {self.name!r}: weight grids must be nonempty")

    def cells(self):
        return [(float(a), float(b)) for a in self.mu1 for b in self.mu2]


@dataclass(frozen=True)
class SolverConfig:
    kappa: float = 1.01
    rtol: float = 1e-9
    max_iter: int = 50_000
    stride: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 150
    L: int = 5
    M: int | None = None
    snr_db: float = 10.0
    signal: SignalSpec = field(default_factory=SignalSpec)
    seeds: tuple = tuple(range(10))
    models: tuple = ()
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "results"
    workers: int = 1
    operator: str = "identity"

    def __post_init__(self):
        if self.M is not None and self.operator == "identity" and self.M != self.N:
            raise ValueError("an identity operator needs M = N")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.operator not in ("identity", "gaussian"):
            raise ValueError("operator must be 'identity' or 'gaussian'")

    @property
    def rows(self) -> int:
        return self.N if self.M is None else self.M

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


def default_models() -> tuple:
    mu1_grid = tuple(round(0.1 * k, 10) for k in range(6))
    mu2_grid = tuple(round(0.1 * k, 10) for k in range(1, 13))
    return (
        ModelGrid("fused-lasso", "fused-lasso", mu1_grid, mu2_grid),
        ModelGrid("latent-fused-lasso", "latent-fused-lasso", (0.0,), mu2_grid),
        ModelGrid("bivariate-i", "bivariate-gme", (0.0,), mu2_grid, omega=(0.0, 1.0)),
        ModelGrid("bivariate-ii", "bivariate-gme", mu1_grid, mu2_grid, omega=(0.5, 0.5)),
    )


# -- config I/O --------------------------------------------------------------


def _config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    sig = data.pop("signal", {})
    solver = data.pop("solver", {})
    models = data.pop("models", None)
    if "seeds" in data:
        data["seeds"] = tuple(int(s) for s in data["seeds"])
    signal = SignalSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in sig.items()})
    grids = default_models() if models is None else tuple(
        ModelGrid(**{k: tuple(v) if isinstance(v, list) and k != "interval" else v
                     for k, v in m.items()})
        for m in models
    )
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(signal=signal, solver=SolverConfig(**solver), models=grids, **data)


def load_config(path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return _config_from_dict(data)


def _to_plain(obj):
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items() if v is not None}
    return obj


def dump_config(config: ExperimentConfig) -> str:
    """TOML text that :func:`load_config` reads back to ``config``."""
    return tomli_w.dumps(_to_plain(asdict(config)))


# -- data --------------------------------------------------------------------


def gen_signal(N: int, spec: SignalSpec = SignalSpec(), seed: int | None = None):
    """Baseline plus ``spec.pulses`` non-overlapping rectangular pulses.

    Pulses keep at least one baseline sample between each other and from
    both ends.  Widths are uniform integers in ``spec.width``, amplitudes
    uniform in ``spec.amplitude`` with a random sign.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    x = np.full(N, float(spec.baseline))
    n = spec.pulses
    if n == 0:
        return x
    widths = rng.integers(spec.width[0], spec.width[1] + 1, size=n)
    slack = N - int(widths.sum()) - (n + 1)
    if slack < 0:
        raise ValueError(f"{n} pulses of widths {widths.tolist()} do not fit in N={N}")
    gaps = 1 + rng.multinomial(slack, np.full(n + 1, 1.0 / (n + 1)))
    amps = rng.uniform(spec.amplitude[0], spec.amplitude[1], size=n)
    amps *= rng.choice([-1.0, 1.0], size=n)
    pos = 0
    for k in range(n):
        pos += int(gaps[k])
        x[pos:pos + int(widths[k])] += amps[k]
        pos += int(widths[k])
    return x


def add_noise_snr(x, snr_db: float, seed: int):
    """``x + eps`` with ``10 log10(||x||^2 / ||eps||^2) = snr_db`` exactly."""
    x = np.asarray(x, dtype=float)
    power = float(x @ x)
    if power == 0.0:
        raise ValueError("cannot set an SNR for the zero signal")
    eps = np.random.default_rng(seed).standard_normal(x.shape)
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    eps *= math.sqrt(power / 10.0 ** (snr_db / 10.0)) / np.linalg.norm(eps)
    return x + eps


def _operator(config: ExperimentConfig):
    if config.operator == "identity":
        return Identity(config.N)
    rng = np.random.default_rng(config.signal.seed + 1)
    return DenseMatrix(rng.standard_normal((config.rows, config.N)) / math.sqrt(config.rows))


def _interval(value):
    if value is None:
        return None
    if isinstance(value, str):
        if value.upper() not in ("R", "REAL"):
            raise ValueError(f"unknown interval {value!r}")
        return (-math.inf, math.inf)
    return value


_DESIGN_CACHE: dict = {}


def _design(config: ExperimentConfig, grid: ModelGrid, mu1: float, mu2: float):
    key = (config.N, config.L, config.operator, config.rows, config.signal.seed, grid.theta,
           tuple(grid.omega), mu1, mu2)
    if key not in _DESIGN_CACHE:
        N, L = config.N, config.L
        _DESIGN_CACHE[key] = design_gme_bivariate(
            _operator(config), build_D(N), build_synthesis(N, L), 1.0, mu1, mu2,
            theta=grid.theta, omega1=grid.omega[0], omega2=grid.omega[1], factor="direct",
        )
    return _DESIGN_CACHE[key]


def make_problem(config: ExperimentConfig, grid: ModelGrid, mu1: float, mu2: float, y):
    """The :class:`FusedProblemSpec` for one grid cell."""
    A = _operator(config)
    design = _design(config, grid, mu1, mu2) if grid.variant == "bivariate-gme" else None
    L = None if grid.variant == "fused-lasso" else config.L
    return FusedProblemSpec(
        N=config.N, y=y, variant=grid.variant, L=L, mu1=mu1, mu2=mu2,
        A=None if grid.variant == "latent-fused-lasso" else A,
        interval=_interval(grid.interval), design=design,
    )


# -- experiment --------------------------------------------------------------


@dataclass(frozen=True)
class ResultRecord:
    model: str
    variant: str
    seed: int
    mu1: float
    mu2: float
    se: float
    iterations: int
    fp_residual: float
    early_violation: float
    asym_residual: float
    status: str = "ok"
    wall_time: float = 0.0

    def row(self):
        return [
            self.model, self.variant, str(self.seed), _fmt(self.mu1), _fmt(self.mu2),
            _fmt(self.se), str(self.iterations), _fmt(self.fp_residual),
            _fmt(self.early_violation), _fmt(self.asym_residual), self.status,
        ]


def _observations(config: ExperimentConfig):
    x_true = gen_signal(config.N, config.signal)
    A = _operator(config)
    clean = A.apply(x_true)
    return x_true, {s: add_noise_snr(clean, config.snr_db, s) for s in config.seeds}


def _stopping(config: ExperimentConfig, grid: ModelGrid, reference_iters: bool) -> StoppingRule:
    s = config.solver
    max_iter = s.max_iter if grid.max_iter is None else int(grid.max_iter)
    if reference_iters:
        max_iter = REFERENCE_ITERS.get(grid.name, REFERENCE_ITERS["default"])
    return StoppingRule(max_iter=max_iter, rtol=s.rtol, stride=s.stride)


def run_cell(config: ExperimentConfig, grid: ModelGrid, seed: int, mu1: float, mu2: float,
             x_true, y, reference_iters: bool = False, return_estimate: bool = False):
    """Solve one cell; failures end up in ``status`` instead of raising."""
    nan = float("nan")
    try:
        spec = make_problem(config, grid, mu1, mu2, y)
        res = solve_fused(spec, stop=_stopping(config, grid, reference_iters),
                          kappa=config.solver.kappa)
    except (ValueError, DesignError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("cell %s seed=%s mu=(%s, %s) failed: %s", grid.name, seed, mu1, mu2, exc)
        rec = ResultRecord(grid.name, grid.variant, seed, mu1, mu2, nan, 0, nan, nan, nan,
                           f"error: {type(exc).__name__}: {exc}".replace("\n", " "))
        return (rec, None, None) if return_estimate else rec
    N, L = config.N, spec.resolved().L
    x_hat = reconstruct(res.x[:N], res.x[N:], N, L)
    err = x_true - x_hat
    tr = res.trace
    status = "ok" if res.converged else "max-iter"
    if not np.isfinite(res.residual):
        status = "diverged"
    rec = ResultRecord(
        grid.name, grid.variant, int(seed), mu1, mu2, float(err @ err), res.n_iter,
        res.residual, max(tr.early_violation), tr.max_asym_residual[-1], status, res.wall_time,
    )
    return (rec, x_hat, res.x) if return_estimate else rec


def _cell_job(args):
    config, grid, seed, mu1, mu2, x_true, y, reference_iters = args
    return run_cell(config, grid, seed, mu1, mu2, x_true, y, reference_iters)


def run_grid(config: ExperimentConfig, reference_iters: bool = False) -> list:
    """All cells of all models and seeds, sorted by (model, seed, mu1, mu2)."""
    x_true, ys = _observations(config)
    jobs = [
        (config, grid, seed, mu1, mu2, x_true, ys[seed], reference_iters)
        for grid in config.models for seed in config.seeds for mu1, mu2 in grid.cells()
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_cell_job, jobs, chunksize=4))
    else:
        records = [_cell_job(j) for j in jobs]
    order = {g.name: k for k, g in enumerate(config.models)}
    return sorted(records, key=lambda r: (order[r.model], r.seed, r.mu1, r.mu2))


def _se_key(r: ResultRecord):
    se = r.se if math.isfinite(r.se) else math.inf
    return (se, r.mu1, r.mu2)


def best_records(records, per_seed: bool = False) -> list:
    """Minimum-SE record per model (and per seed), ties to smaller ``(mu1, mu2)``.

    Without ``per_seed`` the cell is chosen by median SE over seeds and the
    record of its (lower) median seed is returned.
    """
    groups: dict = {}
    for r in records:
        groups.setdefault((r.model, r.seed) if per_seed else r.model, []).append(r)
    out = []
    for key, rs in groups.items():
        if per_seed:
            out.append(min(rs, key=_se_key))
            continue
        cells: dict = {}
        for r in rs:
            cells.setdefault((r.mu1, r.mu2), []).append(r)
        scored = []
        for (a, b), cell in cells.items():
            ses = [c.se if math.isfinite(c.se) else math.inf for c in cell]
            scored.append((float(np.median(ses)), a, b, cell))
        med, a, b, cell = min(scored, key=lambda t: t[:3])
        cell = sorted(cell, key=lambda c: (_se_key(c)[0], c.seed))
        out.append(cell[(len(cell) - 1) // 2])
    return out


def summarize(records) -> dict:
    """Per model: best cell by median SE and the median of per-seed best SEs."""
    per_seed = best_records(records, per_seed=True)
    summary = {}
    for best in best_records(records):
        seeds = [r.se for r in per_seed if r.model == best.model]
        summary[best.model] = {
            "variant": best.variant,
            "mu1": best.mu1,
            "mu2": best.mu2,
            "median_se": float(np.median([r.se for r in records
                                          if (r.model, r.mu1, r.mu2) == (best.model, best.mu1, best.mu2)])),
            "median_best_se_per_seed": float(np.median(seeds)),
            "n_seeds": len(seeds),
        }
    return summary


def baseline_shift_test(config: ExperimentConfig, model: str | None = None, c: float = 1.0,
                        mu1: float | None = None, mu2: float | None = None) -> dict:
    """Solve on ``y`` and on ``y + c 1`` with the baseline free and fixed at 0.

    Reports median SEs over the config seeds for the four runs and the
    largest violation of ``J_{y+c1}(b + c1, d) = J_y(b, d)`` at the free-baseline
    solutions.  Weights default to the first cell of the chosen model grid.
    """
    if config.operator != "identity":
        raise ValueError("the baseline-shift test needs A = I")
    grid = config.models[0] if model is None else next(g for g in config.models if g.name == model)
    mu1 = grid.mu1[0] if mu1 is None else float(mu1)
    mu2 = grid.mu2[0] if mu2 is None else float(mu2)
    x_true, ys = _observations(config)
    N = config.N
    ses = {"free": [], "free_shifted": [], "zero": [], "zero_shifted": []}
    identity_gap = 0.0
    for seed in config.seeds:
        y = ys[seed]
        for label, interval in (("free", "R"), ("zero", 0.0)):
            g = replace(grid, interval=interval)
            for shifted in (False, True):
                yy = y + c if shifted else y
                target = x_true + c if shifted else x_true
                rec, _, u = run_cell(config, g, seed, mu1, mu2, target, yy,
                                     return_estimate=True)
                ses[label + ("_shifted" if shifted else "")].append(rec.se)
                if label == "free" and not shifted and u is not None:
                    spec = make_problem(config, g, mu1, mu2, y)
                    u_shift = u.copy()
                    u_shift[:N] += c
                    spec_s = make_problem(config, g, mu1, mu2, y + c)
                    j0 = float(objective(build_model(spec), u))
                    j1 = float(objective(build_model(spec_s), u_shift))
                    identity_gap = max(identity_gap, abs(j1 - j0) / max(1.0, abs(j0)))
    med = {k: float(np.median(v)) for k, v in ses.items()}
    return {
        "model": grid.name,
        "variant": grid.variant,
        "mu1": mu1,
        "mu2": mu2,
        "shift": c,
        "median_se": med,
        "shift_relative_change": abs(med["free_shifted"] - med["free"]) / med["free"],
        "objective_identity_gap": identity_gap,
    }


# -- output ------------------------------------------------------------------


def emit_results(records, out_dir, x_true=None, observations=None, estimates=None) -> dict:
    """Write ``results.csv``, ``timings.csv``, ``summary.json`` and plot data.

    ``results.csv`` holds every :class:`ResultRecord` field except the wall
    time, which goes to ``timings.csv`` so the main file stays reproducible.
    Plot data are two-column ``index,value`` CSVs for the target, each
    observation and each estimate (keyed by name).
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"results": out_dir / "results.csv", "timings": out_dir / "timings.csv",
                 "summary": out_dir / "summary.json"}
        with open(paths["results"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in records:
                w.writerow(r.row())
        with open(paths["timings"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "seed", "mu1", "mu2", "wall_time"])
            for r in records:
                w.writerow([r.model, r.seed, _fmt(r.mu1), _fmt(r.mu2), _fmt(r.wall_time)])
        summary = summarize(records) if records else {}
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        series = {}
        if x_true is not None:
            series["target"] = x_true
        for name, arr in (observations or {}).items():
            series[f"observed_{name}"] = arr
        for name, arr in (estimates or {}).items():
            series[f"estimate_{name}"] = arr
        for name, arr in series.items():
            p = out_dir / f"plot_{name}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["index", "value"])
                for i, v in enumerate(np.asarray(arr, dtype=float)):
                    w.writerow([i, _fmt(v)])
            paths[f"plot_{name}"] = p
    except OSError as exc:
        raise OSError(f"writing results to {out_dir} failed: {exc}") from exc
    return paths


def read_results(path) -> list:
    """Parse a ``results.csv`` back into records (wall time is not stored)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ResultRecord(
                row["model"], row["variant"], int(row["seed"]), float(row["mu1"]),
                float(row["mu2"]), float(row["se"]), int(row["iterations"]),
                float(row["fp_residual"]), float(row["early_violation"]),
                float(row["asym_residual"]), row["status"],
            ))
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, reference_iters: bool = False) -> dict:
    """Full pipeline: grid, best cells, plot data for the best cells, files."""
    records = run_grid(config, reference_iters=reference_iters)
    x_true, ys = _observations(config)
    estimates, observed = {}, {}
    for best in best_records(records):
        if not math.isfinite(best.se):
            continue
        grid = next(g for g in config.models if g.name == best.model)
        _, x_hat, _ = run_cell(config, grid, best.seed, best.mu1, best.mu2, x_true, ys[best.seed],
                            reference_iters, return_estimate=True)
        if x_hat is not None:
            estimates[best.model] = x_hat
            observed[f"seed{best.seed}"] = ys[best.seed]
    out_dir = config.resolved_output_dir() if out_dir is None else Path(out_dir)
    paths = emit_results(records, out_dir, x_true, observed, estimates)
    return {"records": records, "paths": paths, "summary": summarize(records)}
