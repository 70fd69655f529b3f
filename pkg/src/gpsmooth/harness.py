"""Experiment runner: protocols, aggregation and result files.

Three experiments are available:

``kitagawa-step``
    One filter step on the scalar Kitagawa system from priors on a grid of
    means; every estimator is scored on the same sampled states.
``pendulum-track``
    Filtering and smoothing along simulated pendulum trajectories with a
    fresh GP training set per run.
``linear-sanity``
    The oracle suites of :mod:`gpsmooth.verification`.

All randomness derives from one master seed. Run ``r`` uses
``SeedSequence(seed, spawn_key=(1, r))`` so results do not depend on the
number of workers or on which estimators are selected.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from zlib import crc32

import numpy as np
import scipy

from . import __version__
from .errors import GPSmoothError, InputContractError
from .filters import FILTER_NAMES, STEPS, run_filter, sir_pf_step
from .metrics import MetricsRow, metric_nll, summarize
from .moments import GaussianBelief
from .smoothers import SMOOTHER_FILTER, rts_backward
from .systems import (
    KitagawaSystem,
    envelope_region,
    make_system,
    simulate,
)
from .verification import Check, linear_equivalence, moment_suite, train_learned_model

EXPERIMENTS = ("kitagawa-step", "pendulum-track", "linear-sanity")

DEFAULTS = {
    "kitagawa-step": dict(estimators=["gp-adf", "ekf", "ukf", "ckf", "sir-pf"], runs=100,
                          training_size=100),
    "pendulum-track": dict(estimators=["gp-rtss", "eks", "urtss", "cks"], runs=50,
                           training_size=250, training_region="envelope"),
    "linear-sanity": dict(estimators=[], runs=1, training_size=500),
}
PAPER_RUNS = {"kitagawa-step": 1000, "pendulum-track": 1000, "linear-sanity": 1}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``None`` fields take per-experiment defaults in :meth:`resolved`.
    ``system_overrides`` are passed to the system constructor and
    ``filter_params`` maps a filter name to keyword arguments of its step
    (e.g. ``{"ukf": {"kappa": 2.0}}``).
    """

    experiment: str
    estimators: list | None = None
    runs: int | None = None
    seed: int = 0
    out: str = "results"
    training_size: int | None = None
    training_region: object = None
    restarts: int = 10
    retrain_per_run: bool = False
    grid_points: int = 100
    grid_range: list = field(default_factory=lambda: [-3.0, 3.0])
    prior_sd: float = 0.5
    horizon: int = 30
    num_particles: int = 200
    mc_instances: int = 50
    mc_samples: int = 1_000_000
    workers: int = 1
    paper_scale: bool = False
    system_overrides: dict = field(default_factory=dict)
    filter_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InputContractError(
                f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")

    def resolved(self) -> "ExperimentConfig":
        values = {k: v for k, v in DEFAULTS[self.experiment].items()
                  if getattr(self, k) is None}
        if self.runs is None and self.paper_scale:
            values["runs"] = PAPER_RUNS[self.experiment]
        cfg = replace(self, **values)
        cfg.estimators = list(cfg.estimators)
        cfg.grid_range = [float(v) for v in cfg.grid_range]
        if cfg.runs < 1 or cfg.workers < 1 or cfg.training_size < 2:
            raise InputContractError("runs and workers must be >= 1, training_size >= 2")
        _check_estimators(cfg)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if "config" in doc and "experiment" not in doc:
            doc = doc["config"]
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


def _check_estimators(cfg: ExperimentConfig) -> None:
    if cfg.experiment == "kitagawa-step":
        allowed = FILTER_NAMES
    elif cfg.experiment == "pendulum-track":
        allowed = tuple(SMOOTHER_FILTER) + FILTER_NAMES
    else:
        allowed = ()
    bad = [e for e in cfg.estimators if e not in allowed]
    if bad:
        raise InputContractError(f"estimators {bad} not available for {cfg.experiment}")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    traces: dict = field(default_factory=dict)
    densities: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    moment_checks: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def failures(self) -> int:
        return sum(r.failures for r in self.rows) + sum(not c.passed for c in self.checks)


def run_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Seed of an independent stream identified by ``key``."""
    return np.random.SeedSequence(seed, spawn_key=key)


def _name_key(name: str) -> int:
    return crc32(name.encode())


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class RunScore:
    """Scores of one estimator in one run; a failed run is stored as ``None``."""

    rmse: float
    mae: float
    nll: float
    trace: tuple = ()

    @classmethod
    def from_errors(cls, errors, nlls, trace=()):
        errors = np.asarray(errors, dtype=float)
        return cls(float(np.sqrt(np.mean(errors ** 2))), float(np.mean(np.abs(errors))),
                   float(np.mean(nlls)), tuple(float(v) for v in trace))


def aggregate(name: str, scores) -> MetricsRow:
    """Combine per-run scores (``None`` = failed run) into a :class:`MetricsRow`."""
    done = [s for s in scores if s is not None]
    stats = {m: summarize([getattr(s, m) for s in done]) for m in ("rmse", "mae", "nll")}
    return MetricsRow(name, stats["rmse"].mean, stats["mae"].mean, stats["nll"].mean,
                      {m: stats[m].stderr95 for m in stats}, len(done),
                      len(scores) - len(done))


def mean_trace(scores):
    done = [s.trace for s in scores if s is not None and s.trace]
    if not done:
        return []
    return [math.fsum(col) / len(col) for col in zip(*done)]


# --------------------------------------------------------------------------
# kitagawa

def _kitagawa_step(name, model, system, prior, z, rng, cfg):
    params = cfg.filter_params.get(name, {})
    if name == "sir-pf":
        particles = rng.normal(prior.mean[0], math.sqrt(prior.cov[0, 0]),
                               size=(cfg.num_particles, 1))
        return sir_pf_step(system, particles, z, rng)[1].filtered
    target = model if name == "gp-adf" else system
    return STEPS[name](target, prior, z, **params).filtered


def _kitagawa_run(args):
    cfg, model, r = args
    system = make_system("kitagawa", cfg.system_overrides)
    truth_rng = np.random.default_rng(run_seed(cfg.seed, 1, r, 0))
    grid = np.linspace(*cfg.grid_range, cfg.grid_points)
    x0 = grid + cfg.prior_sd * truth_rng.standard_normal(grid.size)
    x1 = system.transition(x0[:, None])[:, 0] \
        + math.sqrt(system.process_var) * truth_rng.standard_normal(grid.size)
    z1 = system.measure(x1[:, None])[:, 0] \
        + math.sqrt(system.meas_var) * truth_rng.standard_normal(grid.size)
    out = {}
    for name in cfg.estimators:
        rng = np.random.default_rng(run_seed(cfg.seed, 1, r, 1, _name_key(name)))
        errors, nlls = [], []
        try:
            for i, mu in enumerate(grid):
                prior = GaussianBelief([mu], [[cfg.prior_sd ** 2]])
                post = _kitagawa_step(name, model, system, prior, [z1[i]], rng, cfg)
                errors.append(post.mean[0] - x1[i])
                nlls.append(metric_nll(post, [x1[i]]))
        except GPSmoothError:
            out[name] = None
            continue
        out[name] = RunScore.from_errors(errors, nlls, trace=nlls)
    return out


def _kitagawa_model(cfg, system, stream):
    region = cfg.training_region
    if region is not None:
        region = np.atleast_2d(np.asarray(region, dtype=float))
    return train_learned_model(system, cfg.training_size, run_seed(cfg.seed, *stream, 0),
                               run_seed(cfg.seed, *stream, 1), cfg.restarts, region)


def run_kitagawa(config: ExperimentConfig) -> ExperimentResult:
    """Single-step filtering on the Kitagawa system from a grid of prior means."""
    cfg = config.resolved()
    start = time.perf_counter()
    system = make_system("kitagawa", cfg.system_overrides)
    needs_gp = "gp-adf" in cfg.estimators
    if cfg.retrain_per_run:
        models = [_kitagawa_model(cfg, system, (2, r)) if needs_gp else None
                  for r in range(cfg.runs)]
    else:
        shared = _kitagawa_model(cfg, system, (0,)) if needs_gp else None
        models = [shared] * cfg.runs
    per_run = _map(_kitagawa_run, [(cfg, models[r], r) for r in range(cfg.runs)], cfg.workers)
    rows, traces = [], {}
    for name in cfg.estimators:
        scores = [run[name] for run in per_run]
        rows.append(aggregate(name, scores))
        traces[name] = mean_trace(scores)
    result = ExperimentResult(cfg, rows, traces)
    result.densities = kitagawa_densities(cfg, system, models[0])
    if not cfg.retrain_per_run and needs_gp:
        result.models = {"gp_f": models[0].gp_f, "gp_g": models[0].gp_g}
    result.wall_time = time.perf_counter() - start
    return result


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def kitagawa_densities(cfg, system: KitagawaSystem, model=None, points=801):
    """True and Gaussian-approximate densities of ``x_1`` and ``z_1`` from the prior
    ``N(0, prior_sd^2)``, by quadrature on fine grids."""
    sd = cfg.prior_sd
    x0 = np.linspace(-8 * sd, 8 * sd, 4001)
    w0 = _normal_pdf(x0, 0.0, sd ** 2) * (x0[1] - x0[0])
    fx = system.transition(x0[:, None])[:, 0]
    lo, hi = fx.min() - 5, fx.max() + 5
    xs = np.linspace(lo, hi, points)
    p_x = _normal_pdf(xs[:, None], fx[None, :], system.process_var) @ w0
    fine = np.linspace(lo, hi, 8001)
    p_fine = _normal_pdf(fine[:, None], fx[None, :], system.process_var) @ w0
    p_fine *= fine[1] - fine[0]
    gx = system.measure(fine[:, None])[:, 0]
    zs = np.linspace(gx.min() - 3, gx.max() + 3, points)
    p_z = _normal_pdf(zs[:, None], gx[None, :], system.meas_var) @ p_fine
    x_cols = {"x": xs, "true": p_x}
    z_cols = {"z": zs, "true": p_z}
    prior = GaussianBelief([0.0], [[sd ** 2]])
    for name in ("gp-adf", "ekf", "ukf", "ckf"):
        if name == "gp-adf" and model is None:
            continue
        target = model if name == "gp-adf" else system
        rec = STEPS[name](target, prior, [0.0], **cfg.filter_params.get(name, {}))
        x_cols[name] = _normal_pdf(xs, rec.predicted.mean[0], rec.predicted.cov[0, 0])
        z_cols[name] = _normal_pdf(zs, rec.predicted_meas.mean[0], rec.predicted_meas.cov[0, 0])
    return {"density_x": x_cols, "density_z": z_cols}


# --------------------------------------------------------------------------
# pendulum

def _series_scores(beliefs, states):
    nlls = [metric_nll(b, s) for b, s in zip(beliefs[1:], states[1:])]
    errors = np.array([b.mean - s for b, s in zip(beliefs[1:], states[1:])]).ravel()
    return RunScore.from_errors(errors, nlls, trace=nlls)


def _pendulum_run(args):
    cfg, r = args
    system = make_system("pendulum", cfg.system_overrides)
    prior = system.default_prior()
    traj = simulate(system, prior, cfg.horizon, seed=run_seed(cfg.seed, 1, r, 0))
    names = cfg.estimators
    model = None
    if any(n in ("gp-rtss", "gp-adf") for n in names):
        region = cfg.training_region
        if region == "envelope":
            region = envelope_region(traj)
        elif region == "box":
            region = None
        elif region is not None:
            region = np.asarray(region, dtype=float)
        try:
            model = train_learned_model(system, cfg.training_size, run_seed(cfg.seed, 1, r, 1),
                                        run_seed(cfg.seed, 1, r, 2), cfg.restarts, region)
        except GPSmoothError:
            model = None
    out = {}
    for name in names:
        smoother = name in SMOOTHER_FILTER
        filt = SMOOTHER_FILTER.get(name, name)
        target = model if filt == "gp-adf" else system
        key = (filt, name) if smoother else (name,)
        if filt == "gp-adf" and model is None:
            out.update({k: None for k in key})
            continue
        try:
            series = run_filter(filt, target, prior, traj.measurements, traj.controls,
                                seed=run_seed(cfg.seed, 1, r, 3, _name_key(filt)),
                                num_particles=cfg.num_particles,
                                **cfg.filter_params.get(filt, {}))
            out[filt] = _series_scores(series.filtered, traj.states)
            if smoother:
                series = rts_backward(series)
                out[name] = _series_scores(series.smoothed, traj.states)
        except GPSmoothError:
            out.setdefault(filt, None)
            if smoother:
                out[name] = None
    return out


def _pendulum_names(estimators):
    names = []
    for name in estimators:
        if name in SMOOTHER_FILTER:
            names += [SMOOTHER_FILTER[name], name]
        else:
            names.append(name)
    return list(dict.fromkeys(names))


def run_pendulum(config: ExperimentConfig) -> ExperimentResult:
    """Pendulum tracking; one row per filter and per smoother."""
    cfg = config.resolved()
    start = time.perf_counter()
    per_run = _map(_pendulum_run, [(cfg, r) for r in range(cfg.runs)], cfg.workers)
    rows, traces = [], {}
    for name in _pendulum_names(cfg.estimators):
        scores = [run.get(name) for run in per_run]
        rows.append(aggregate(name, scores))
        traces[name] = mean_trace(scores)
    result = ExperimentResult(cfg, rows, traces)
    result.wall_time = time.perf_counter() - start
    return result


# --------------------------------------------------------------------------
# oracle suites

def run_linear_sanity(config: ExperimentConfig) -> ExperimentResult:
    """Kalman/RTS equivalence checks and the Monte-Carlo moment suite."""
    cfg = config.resolved()
    start = time.perf_counter()
    checks = linear_equivalence(seed=run_seed(cfg.seed, 3), gp_points=cfg.training_size,
                                restarts=cfg.restarts)
    comparisons = []
    if cfg.mc_instances > 0:
        comparisons, within = moment_suite(cfg.mc_instances, cfg.mc_samples,
                                           seed=run_seed(cfg.seed, 4))
        checks.append(Check("moment-match MC fraction outside 3 SE", 1.0 - within, 0.05))
    result = ExperimentResult(cfg, [], checks=checks, moment_checks=comparisons)
    result.wall_time = time.perf_counter() - start
    return result


RUNNERS = {
    "kitagawa-step": run_kitagawa,
    "pendulum-track": run_pendulum,
    "linear-sanity": run_linear_sanity,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[config.experiment](config)


# --------------------------------------------------------------------------
# output

CSV_HEADER = ["estimator", "metric", "value", "stderr95", "runs"]


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_columns(path, columns: dict):
    names = list(columns)
    _write_csv(path, names, ([_fmt(v) for v in row] for row in zip(*columns.values())))


def emit_results(result: ExperimentResult, out_dir=None) -> list:
    """Write result files and return their paths.

    ``results.csv``, ``manifest.json`` and the plot-data files depend only on
    (config, seed); the wall time goes to ``timing.json``.
    """
    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for row in result.rows:
        for metric in ("rmse", "mae", "nll"):
            rows.append([row.estimator, metric, _fmt(getattr(row, metric)),
                         _fmt(row.stderr_95[metric]), str(row.runs)])
        rows.append([row.estimator, "completion_rate", _fmt(row.completion_rate), "nan",
                     str(row.runs)])
    path = out / "results.csv"
    _write_csv(path, CSV_HEADER, rows)
    written.append(path)

    if result.traces:
        path = out / "nll_traces.csv"
        _write_csv(path, ["estimator", "step", "nll"],
                   ([name, str(t), _fmt(v)] for name, trace in result.traces.items()
                    for t, v in enumerate(trace, start=1)))
        written.append(path)
    for key, columns in result.densities.items():
        path = out / f"{key}.csv"
        _write_columns(path, columns)
        written.append(path)
    if result.checks:
        path = out / "checks.csv"
        _write_csv(path, ["check", "error", "tolerance", "passed"],
                   ([c.name, _fmt(c.error), _fmt(c.tolerance), str(c.passed).lower()]
                    for c in result.checks))
        written.append(path)
    if result.moment_checks:
        path = out / "moment_checks.csv"
        _write_csv(path, ["instance", "quantity", "analytic", "estimate", "stderr", "z"],
                   ([str(c.instance), c.quantity, _fmt(c.analytic), _fmt(c.estimate),
                     _fmt(c.stderr), _fmt(c.z)] for c in result.moment_checks))
        written.append(path)
    for key, model in result.models.items():
        path = out / f"{key}.json"
        path.write_text(model.to_json())
        written.append(path)

    manifest = {
        "config": cfg.to_dict(),
        "seeds": {"master": cfg.seed,
                  "scheme": "numpy SeedSequence(master, spawn_key=(stream, run, ...))"},
        "version": {"gpsmooth": __version__, "numpy": np.__version__,
                    "scipy": scipy.__version__},
        "failures": {row.estimator: row.failures for row in result.rows},
        "completion_rate": {row.estimator: row.completion_rate for row in result.rows},
        "files": sorted(p.name for p in written),
        "wall_time_file": "timing.json",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(path)
    path = out / "timing.json"
    path.write_text(json.dumps({"wall_time_s": result.wall_time}) + "\n")
    written.append(path)
    return written
