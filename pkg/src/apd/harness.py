"""Experiment orchestration: config parsing, batch runs, rate fits, audits."""

from __future__ import annotations

import dataclasses
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import load_problem
from .schedule import theta_upper_bound
from .solvers import SolverConfig, make_step_rule, run_solver

# Contraction and theta-bound checks run against these slacks; an extra
# absolute floor keeps cancellation noise in tiny Lyapunov values from
# counting as violations.
CONTRACTION_SLACK = 1e-9
THETA_BOUND_SLACK = 1e-12
LYAPUNOV_NOISE_FLOOR = 5e-13


def format_value(value):
    """CSV cell formatting: 17 significant digits, round-trip exact."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def emit_csv(records, path):
    """Write dataclass records as CSV: exact header, LF endings, atomic."""
    if records:
        header = [f.name for f in dataclasses.fields(records[0])]
    else:
        raise ValueError("cannot infer a header from an empty record list")
    lines = [",".join(header)]
    for rec in records:
        lines.append(",".join(format_value(getattr(rec, name)) for name in header))
    _atomic_write(path, "\n".join(lines) + "\n")


def emit_csv_header_only(fields, path):
    _atomic_write(path, ",".join(fields) + "\n")


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path):
    """Parse a CSV written by :func:`emit_csv` into a dict of float columns."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    header = lines[0].split(",")
    columns = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(float(cell))
    return {name: np.array(vals) for name, vals in columns.items()}


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

def fit_rate(records, window=0.5, mode="power"):
    """Least-squares slope of the convergence curve over a trailing window.

    ``power`` fits ``log(obj_gap + feasibility)`` against ``log k`` (the
    sublinear regimes); ``linear`` fits against ``k`` (linear regimes).
    Entries with gap at or below 1e-15 truncate the window. Returns
    ``(slope, r_squared)``.
    """
    if mode not in ("power", "linear"):
        raise ValueError("mode must be 'power' or 'linear'")
    if not 0 < window <= 1:
        raise ValueError("window must be a fraction in (0, 1]")
    ks, gaps = [], []
    for rec in records:
        gap = rec.obj_gap + rec.feasibility
        if rec.k >= 1 and np.isfinite(gap):
            if gap <= 1e-15:
                break
            ks.append(rec.k)
            gaps.append(gap)
    start = int(len(ks) * (1.0 - window))
    ks, gaps = np.array(ks[start:], dtype=float), np.array(gaps[start:])
    if ks.size < 20:
        raise ValueError(f"need at least 20 usable records in the window, got {ks.size}")
    xs = np.log(ks) if mode == "power" else ks
    ys = np.log(gaps)
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 if ss_tot <= 1e-30 else 1.0 - ss_res / ss_tot
    return float(slope), r_squared


# ---------------------------------------------------------------------------
# certificate auditing
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    contraction_violations: int = 0
    theta_bound_violations: int = 0
    checked: int = 0

    @property
    def total(self):
        return self.contraction_violations + self.theta_bound_violations


def audit_records(records, rule=None, gamma0=None, mu_beta=0.0):
    """Re-check the contraction and decay certificates on recorded runs.

    Contraction compares consecutive Lyapunov values against the recorded
    step size; the decay bound needs the scheme's step rule and ``gamma0``.
    Lyapunov values under the noise floor are skipped (cancellation noise).
    """
    report = AuditReport()
    prev = None
    scale = max((r.lyapunov for r in records if np.isfinite(r.lyapunov)), default=1.0)
    floor = LYAPUNOV_NOISE_FLOOR * max(scale, 1.0)
    for rec in records:
        if prev is not None and np.isfinite(rec.lyapunov) and np.isfinite(prev.lyapunov):
            report.checked += 1
            bound = prev.lyapunov / (1.0 + rec.alpha) * (1.0 + CONTRACTION_SLACK)
            if rec.lyapunov > bound + floor:
                report.contraction_violations += 1
        if rule is not None and gamma0 is not None:
            gmin, gmax = min(gamma0, mu_beta), max(gamma0, mu_beta)
            bound = theta_upper_bound(rule, rec.k, gamma0, gmin, gmax)
            if rec.theta > bound * (1.0 + THETA_BOUND_SLACK):
                report.theta_bound_violations += 1
        prev = rec
    return report


# ---------------------------------------------------------------------------
# experiment configs and batch runs
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Flat key-value experiment description.

    Keys: ``problem.file``, ``schemes`` (comma list), ``gamma0``, ``beta``,
    ``max_iter``, ``stop_tol``, ``step.alpha``, ``seed``, ``out.dir``,
    ``jobs``, ``fit.window``, ``fit.mode``.
    """

    problem_file: str = ""
    schemes: tuple = ()
    gamma0: float = 1.0
    beta: float = 0.0
    max_iter: int = 1000
    stop_tol: float = 0.0
    alpha: float = 1.0
    seed: int = 0
    out_dir: str = "."
    jobs: int = 1
    fit_window: float = 0.5
    fit_mode: str = "power"


_KEY_MAP = {
    "problem.file": ("problem_file", str),
    "schemes": ("schemes", lambda v: tuple(s.strip() for s in v.split(",") if s.strip())),
    "gamma0": ("gamma0", float),
    "beta": ("beta", float),
    "max_iter": ("max_iter", int),
    "stop_tol": ("stop_tol", float),
    "step.alpha": ("alpha", float),
    "seed": ("seed", int),
    "out.dir": ("out_dir", str),
    "jobs": ("jobs", int),
    "fit.window": ("fit_window", float),
    "fit.mode": ("fit_mode", str),
}


def parse_experiment_config(path):
    cfg = ExperimentConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw.rstrip()}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _KEY_MAP:
                raise ValueError(f"unknown config key {key!r}")
            attr, conv = _KEY_MAP[key]
            setattr(cfg, attr, conv(value))
    return cfg


@dataclass
class RunSummary:
    scheme: str
    status: str
    iterations: int
    final_obj_gap: float
    final_feasibility: float
    slope: float
    r_squared: float
    violations: int
    error: str = ""


def run_experiment(cfg):
    """Run every configured scheme on the problem; emit CSVs plus a summary.

    Returns the list of :class:`RunSummary`. Sub-run failures are recorded
    per run; the caller decides the exit code (nonzero only if all fail).
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    problem = load_problem(cfg.problem_file) if cfg.problem_file else None

    def one(scheme):
        try:
            if problem is None:
                raise ValueError("no problem configured")
            solver_cfg = SolverConfig(
                scheme=scheme, gamma0=cfg.gamma0, beta=cfg.beta,
                max_iter=cfg.max_iter, stop_tol=cfg.stop_tol, alpha=cfg.alpha)
            run = run_solver(problem, solver_cfg)
            stem = os.path.splitext(os.path.basename(cfg.problem_file or "run"))[0]
            emit_csv(run.records, os.path.join(cfg.out_dir, f"{stem}_{scheme}.csv"))
            rule = make_step_rule(problem, solver_cfg)
            report = audit_records(run.records, rule, cfg.gamma0, problem.mu_beta)
            try:
                slope, r2 = fit_rate(run.records, cfg.fit_window, cfg.fit_mode)
            except ValueError:
                slope, r2 = math.nan, math.nan
            last = run.records[-1]
            return RunSummary(scheme, run.status, last.k, last.obj_gap,
                              last.feasibility, slope, r2, report.total)
        except Exception as exc:  # recorded, not raised: other runs continue
            return RunSummary(scheme, "error", 0, math.nan, math.nan,
                              math.nan, math.nan, 0, error=str(exc))

    if cfg.jobs > 1 and len(cfg.schemes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            summaries = list(pool.map(one, cfg.schemes))
    else:
        summaries = [one(s) for s in cfg.schemes]
    _write_summary(summaries, os.path.join(cfg.out_dir, "summary.csv"))
    return summaries


def _write_summary(summaries, path):
    header = ["scheme", "status", "iterations", "final_obj_gap",
              "final_feasibility", "slope", "r_squared", "violations", "error"]
    lines = [",".join(header)]
    for s in summaries:
        lines.append(",".join([
            s.scheme, s.status, str(s.iterations), format_value(s.final_obj_gap),
            format_value(s.final_feasibility), format_value(s.slope),
            format_value(s.r_squared), str(s.violations), s.error.replace(",", ";")]))
    _atomic_write(path, "\n".join(lines) + "\n")
