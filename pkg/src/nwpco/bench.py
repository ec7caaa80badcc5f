"""Monte Carlo MISE protocol: simulate, select, estimate, score."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .diffusion import ModelKind, ModelSpec, extract_pairs, simulate_ensemble
from .errors import ConfigError, DomainError, NwpcoError
from .estimators import (EstimatorGrid, EvalGrid, TruncationSpec, estimate_f, estimate_p,
                         estimate_s)
from .pco import PcoConfig, select_ell, select_h, shared_histogram
from .truth import transition_density

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantileLevels:
    x_lo: float = 0.02
    x_hi: float = 0.98
    y_lo: float = 0.01
    y_hi: float = 0.99

    def __post_init__(self):
        for lo, hi, name in ((self.x_lo, self.x_hi, "x"), (self.y_lo, self.y_hi, "y")):
            if not 0 < lo < hi < 1:
                raise ConfigError(f"quantile levels must satisfy 0 < lo < hi < 1, got "
                                  f"({lo}, {hi})", key=f"bench.quantile_{name}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec.default(ModelKind.OU))
    N: int = 100
    T: float = 10.0
    t0: float = 0.0
    t: float = 1.0
    delta: float = 0.02
    M: int = 100
    repetitions: int = 200
    quantile_levels: QuantileLevels = field(default_factory=QuantileLevels)
    pco: PcoConfig = field(default_factory=PcoConfig)
    seed: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}", key="bench.N")
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}", key="bench.M")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1", key="bench.repetitions")
        if not self.delta > 0:
            raise ConfigError("delta must be positive", key="time.delta")
        if not 0 <= self.t0 < self.T:
            raise ConfigError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}", key="time.t0")
        if not 0 < self.t <= self.T:
            raise ConfigError(f"need 0 < t <= T, got t={self.t}", key="time.t")
        for name in ("T", "t0", "t"):
            v = getattr(self, name)
            if abs(round(v / self.delta) * self.delta - v) > 1e-9 * max(1.0, v):
                raise ConfigError(f"{name}={v} is not a multiple of delta={self.delta}",
                                  key=f"time.{name}")
        if self.t + 1.0 > 2 * self.T + 1e-12:
            raise ConfigError("the y-quantile sample at time t+1 lies beyond 2T", key="time.t")
        self.pco.grid_h.check_copies(self.N, key="pco.grid_h")
        self.pco.grid_ell.check_copies(self.N, key="pco.grid_ell")

    @property
    def n_steps(self) -> int:
        return round(2 * self.T / self.delta)

    def warn_t0(self):
        if self.t0 == 0:
            warnings.warn("t0 = 0: the selection criteria are designed for t0 > 0",
                          stacklevel=2)


@dataclass
class RepRecord:
    rep: int
    mise: Optional[float]
    h: Optional[float]
    ell: Optional[float]
    bounds: Optional[tuple]
    failed: bool = False
    reason: str = ""


@dataclass
class MiseReport:
    model: str
    N: int
    records: list

    @property
    def ok(self):
        return [r for r in self.records if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.records)

    def _arr(self, name):
        return np.array([getattr(r, name) for r in self.ok], dtype=float)

    @property
    def mean_mise(self):
        return float(np.mean(self._arr("mise")))

    @property
    def std_mise(self):
        a = self._arr("mise")
        return float(np.std(a, ddof=1)) if a.size > 1 else 0.0

    @property
    def median_mise(self):
        return float(np.median(self._arr("mise")))

    @property
    def mean_h(self):
        return float(np.mean(self._arr("h")))

    @property
    def mean_ell(self):
        return float(np.mean(self._arr("ell")))

    def aggregates(self) -> dict:
        return {
            "model": self.model, "N": self.N, "repetitions": len(self.records),
            "failed": self.n_failed,
            "mean_mise": self.mean_mise, "std_mise": self.std_mise,
            "median_mise": self.median_mise,
            "mean_mise_x100": 100 * self.mean_mise, "std_mise_x100": 100 * self.std_mise,
            "median_mise_x100": 100 * self.median_mise,
            "mean_h": self.mean_h, "mean_ell": self.mean_ell,
        }

    def to_dict(self) -> dict:
        return {"aggregates": self.aggregates(), "records": [asdict(r) for r in self.records]}

    def write(self, out_dir, stem="report"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / f"{stem}.json"
        jpath.write_text(json.dumps(self.to_dict(), indent=2))
        cpath = out / f"{stem}.csv"
        write_table([self], cpath)
        return jpath, cpath


TABLE_COLUMNS = ["model", "N", "mean", "std", "median", "mean_h", "mean_ell"]


def write_table(reports, path):
    """Flat CSV, one row per (model, N), MISE columns scaled by 100."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in reports:
            a = r.aggregates()
            w.writerow([a["model"], a["N"], _g(a["mean_mise_x100"]), _g(a["std_mise_x100"]),
                        _g(a["median_mise_x100"]), _g(a["mean_h"]), _g(a["mean_ell"])])
    return path


def _g(v):
    return format(v, ".17g")


def quantile(sample, level: float) -> float:
    """Linear interpolation between order statistics at ``(n-1) * level``."""
    a = np.sort(np.asarray(sample, dtype=float).ravel())
    if a.size == 0:
        raise DomainError("quantile of an empty sample")
    if not 0 < level < 1:
        raise DomainError(f"quantile level must lie in (0, 1), got {level}")
    pos = (a.size - 1) * level
    k = int(math.floor(pos))
    if k + 1 >= a.size:
        return float(a[-1])
    return float(a[k] + (pos - k) * (a[k + 1] - a[k]))


@dataclass
class RepOutcome:
    """Everything one repetition produces, for reports and exports."""

    record: RepRecord
    grid: Optional[EvalGrid] = None
    estimate: Optional[EstimatorGrid] = None
    truth: Optional[np.ndarray] = None


def mise_grid_value(p_hat: np.ndarray, p_true: np.ndarray, bounds) -> float:
    ax, bx, ay, by = bounds
    m = p_hat.shape[0]
    return float((bx - ax) * (by - ay) / m**2 * np.sum((p_hat - p_true) ** 2))


def run_repetition(config: ExperimentConfig, rep: int) -> RepOutcome:
    ens = simulate_ensemble(config.model, config.N, config.n_steps, config.delta,
                            config.seed, stream=(rep,))
    q = config.quantile_levels
    xt = ens.column(config.t)
    yt = ens.column(config.t + 1.0)
    bounds = (quantile(xt, q.x_lo), quantile(xt, q.x_hi),
              quantile(yt, q.y_lo), quantile(yt, q.y_hi))
    if not (bounds[0] < bounds[1] and bounds[2] < bounds[3]):
        return RepOutcome(RepRecord(rep, None, None, None, bounds, True, "degenerate quantiles"))
    pairs = extract_pairs(ens, config.t0, config.T, config.t)
    binned = config.pco.resolve_penalty(pairs) == "binned"
    hist = shared_histogram(pairs, config.pco) if binned else None
    sel_ell = select_ell(pairs, config.pco, hist=hist)
    sel_h = select_h(pairs, config.pco, hist=hist)
    grid = EvalGrid.linspace(bounds[0], bounds[1], config.M, bounds[2], bounds[3], config.M)
    f = estimate_f(pairs, sel_ell.chosen, EvalGrid(grid.x))
    s = estimate_s(pairs, sel_h.chosen, grid)
    p = estimate_p(s, f, TruncationSpec.plugin(bounds[0], bounds[1]))
    truth = transition_density(config.model, config.t, grid.x[:, None], grid.y[None, :])
    mise = mise_grid_value(p.values, truth, bounds)
    rec = RepRecord(rep, mise, sel_h.chosen[0], sel_ell.chosen, bounds)
    return RepOutcome(rec, grid, p, truth)


def mise_once(config: ExperimentConfig, rep_index: int) -> RepRecord:
    try:
        return run_repetition(config, rep_index).record
    except DomainError as exc:
        return RepRecord(rep_index, None, None, None, None, True, str(exc))


def _worker(args):
    config, rep = args
    with threadpool_limits(1):
        return mise_once(config, rep)


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> MiseReport:
    """All repetitions of one (model, N) cell.

    BLAS is pinned to one thread in every mode, so the report does not
    depend on ``workers``.
    """
    jobs = [(config, k) for k in range(config.repetitions)]
    records = []
    if workers <= 1:
        for job in jobs:
            records.append(_worker(job))
            if progress:
                progress(len(records), len(jobs))
    else:
        with ProcessPoolExecutor(workers) as pool:
            for rec in pool.map(_worker, jobs):
                records.append(rec)
                if progress:
                    progress(len(records), len(jobs))
    report = MiseReport(config.model.kind.value, config.N, records)
    if not report.ok:
        raise NwpcoError(f"all {len(records)} repetitions failed")
    if report.n_failed:
        log.warning("%d of %d repetitions failed and were excluded", report.n_failed, len(records))
    return report


def export_surface(config: ExperimentConfig, out_dir, rep: int = 0, stem: Optional[str] = None):
    """Truth and estimate on the MISE grid of one repetition, plus a sidecar."""
    with threadpool_limits(1):
        out = run_repetition(config, rep)
    if out.record.failed:
        raise NwpcoError(f"repetition {rep} failed: {out.record.reason}")
    out_dir = Path(out_dir)
    stem = stem or f"{config.model.kind.value}_N{config.N}_rep{rep}"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"model": config.model.tag, "t": config.t, "N": config.N, "rep": rep,
                "seed": config.seed}
        est_path = out.estimate.to_csv(out_dir / f"{stem}_estimate.csv")
        truth_grid = EstimatorGrid(out.grid, out.truth, dict(meta, kind="truth"))
        truth_path = truth_grid.to_csv(out_dir / f"{stem}_truth.csv")
        side = {"h": out.record.h, "ell": out.record.ell, "mise": out.record.mise,
                "mise_x100": 100 * out.record.mise, "bounds": list(out.record.bounds),
                "truth_csv": truth_path.name, "estimate_csv": est_path.name, **meta}
        side_path = out_dir / f"{stem}.json"
        side_path.write_text(json.dumps(side, indent=2))
    except OSError as exc:
        raise OSError(f"cannot write surface files under {out_dir}: {exc}") from exc
    return truth_path, est_path, side_path


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
