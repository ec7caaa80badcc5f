"""Kernel smoothers of the copies and their truncated ratio.

With ``P = N * n_time`` flattened sample points ``(X_s, X_{s+t})`` and the
uniform time weights ``1 / n_time``, both smoothers are plain empirical
averages::

    f_hat(x)    = (1/P) sum_p K_ell(X_p - x)
    s_hat(x, y) = (1/P) sum_p K_h1(X_p - x) K_h2(Y_p - y)

so the surface is ``A.T @ B / P`` for two kernel matrices, accumulated
over fixed-size blocks of sample points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffusion import PairSample
from .errors import ConfigError, DomainError
from .kernels import Bandwidth

BLOCK = 32768


@dataclass(frozen=True)
class EvalGrid:
    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("x", "y"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.atleast_1d(np.asarray(a, dtype=float))
            if a.ndim != 1 or a.size < 1 or not np.all(np.isfinite(a)):
                raise DomainError(f"grid axis {name} must be a finite 1-D array")
            if np.any(np.diff(a) <= 0):
                raise DomainError(f"grid axis {name} must be strictly increasing")
            object.__setattr__(self, name, a)

    @classmethod
    def linspace(cls, x_lo, x_hi, mx, y_lo=None, y_hi=None, my=None):
        x = np.linspace(x_lo, x_hi, mx)
        y = None if y_lo is None else np.linspace(y_lo, y_hi, my or mx)
        return cls(x, y)

    @property
    def shape(self):
        return (self.x.size,) if self.y is None else (self.x.size, self.y.size)

    def same_as(self, other: "EvalGrid") -> bool:
        if not np.array_equal(self.x, other.x):
            return False
        if (self.y is None) != (other.y is None):
            return False
        return self.y is None or np.array_equal(self.y, other.y)


@dataclass
class EstimatorGrid:
    grid: EvalGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            for k, v in self.meta.items():
                fh.write(f"# {k}={v}\n")
            vals = np.atleast_2d(self.values.T).T if self.grid.y is None else self.values
            ys = ["value"] if self.grid.y is None else [_f17(v) for v in self.grid.y]
            fh.write(",".join(["x\\y"] + ys) + "\n")
            for xj, row in zip(self.grid.x, vals):
                fh.write(",".join([_f17(xj)] + [_f17(v) for v in row]) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "EstimatorGrid":
        meta, rows, header = {}, [], None
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k] = v
                elif header is None:
                    header = line.split(",")
                elif line:
                    rows.append([float(v) for v in line.split(",")])
        if header is None:
            raise ConfigError(f"{path}: missing header row")
        arr = np.array(rows)
        if header[1:] == ["value"]:
            return cls(EvalGrid(arr[:, 0]), arr[:, 1], meta)
        return cls(EvalGrid(arr[:, 0], np.array([float(v) for v in header[1:]])), arr[:, 1:], meta)


def _f17(v):
    return format(float(v), ".17g")


class TruncationSource(enum.Enum):
    FIXED = "fixed"
    PLUGIN = "plugin"


@dataclass(frozen=True)
class TruncationSpec:
    """Threshold ``m`` of the indicator ``f_hat > m/2``.

    With ``PLUGIN`` the threshold is the minimum of the marginal smoother
    over ``interval`` and ``m`` is ignored.
    """

    m: Optional[float] = None
    source: TruncationSource = TruncationSource.FIXED
    interval: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.source is TruncationSource.FIXED:
            if self.m is None or not self.m > 0:
                raise ConfigError(f"fixed truncation needs m > 0, got {self.m}", key="m")
        elif self.interval is None or not self.interval[0] < self.interval[1]:
            raise ConfigError(f"plugin truncation needs l < r, got {self.interval}", key="interval")

    @classmethod
    def plugin(cls, lo, hi):
        return cls(source=TruncationSource.PLUGIN, interval=(float(lo), float(hi)))


def _hval(h):
    return h.value if isinstance(h, Bandwidth) else Bandwidth(h).value


def _flat(pairs: PairSample):
    if pairs.start.size == 0:
        raise DomainError("no sample points")
    return pairs.start.reshape(-1), pairs.end.reshape(-1)


def _kmat(points, nodes, h):
    u = (points[:, None] - nodes[None, :]) / h
    return np.exp(-0.5 * u * u) * (1.0 / (h * math.sqrt(2.0 * math.pi)))


def _meta(pairs, **kw):
    return dict(kw, t=pairs.t, t0=pairs.t0, T=pairs.T, N=pairs.n_copies, n_time=pairs.n_time)


def estimate_f(pairs: PairSample, ell, grid: EvalGrid) -> EstimatorGrid:
    h = _hval(ell)
    xs, _ = _flat(pairs)
    acc = np.zeros(grid.x.size)
    for lo in range(0, xs.size, BLOCK):
        acc += _kmat(xs[lo:lo + BLOCK], grid.x, h).sum(axis=0)
    return EstimatorGrid(EvalGrid(grid.x), acc / xs.size, _meta(pairs, ell=h))


def estimate_s(pairs: PairSample, h, grid: EvalGrid) -> EstimatorGrid:
    h1, h2 = (_hval(v) for v in _pair(h))
    if grid.y is None:
        raise DomainError("estimate_s needs a 2-D grid")
    xs, ys = _flat(pairs)
    acc = np.zeros(grid.shape)
    for lo in range(0, xs.size, BLOCK):
        a = _kmat(xs[lo:lo + BLOCK], grid.x, h1)
        b = _kmat(ys[lo:lo + BLOCK], grid.y, h2)
        acc += a.T @ b
    return EstimatorGrid(grid, acc / xs.size, _meta(pairs, h1=h1, h2=h2))


def _pair(h):
    if isinstance(h, (tuple, list)):
        if len(h) != 2:
            raise DomainError(f"bandwidth pair expected, got {h!r}")
        return tuple(h)
    return (h, h)


def estimate_m(f_grid: EstimatorGrid, interval) -> float:
    lo, hi = interval
    inside = (f_grid.grid.x >= lo) & (f_grid.grid.x <= hi)
    if not np.any(inside):
        raise DomainError(f"no grid point inside [{lo}, {hi}]")
    return float(np.min(f_grid.values[inside]))


def estimate_p(s_grid: EstimatorGrid, f_grid: EstimatorGrid, trunc: TruncationSpec) -> EstimatorGrid:
    if f_grid.values.ndim != 1 or not np.array_equal(s_grid.grid.x, f_grid.grid.x):
        raise DomainError("numerator and denominator grids differ on the x axis")
    if trunc.source is TruncationSource.PLUGIN:
        m = estimate_m(f_grid, trunc.interval)
    else:
        m = trunc.m
    f = f_grid.values
    keep = f > 0.5 * m
    p = np.zeros_like(s_grid.values)
    p[keep] = s_grid.values[keep] / f[keep, None]
    meta = dict(s_grid.meta)
    meta.update(ell=f_grid.meta.get("ell"), m=m)
    return EstimatorGrid(s_grid.grid, p, meta)


def estimate_p_at(pairs, h, ell, trunc: TruncationSpec, x, y) -> float:
    """Pointwise convenience wrapper around the grid estimators.

    A plugin threshold is computed from the marginal smoother on
    ``linspace(l, r, 101)``.
    """
    g = EvalGrid(np.array([x]), np.array([y]))
    s = estimate_s(pairs, h, g)
    f = estimate_f(pairs, ell, g)
    if trunc.source is TruncationSource.PLUGIN:
        fm = estimate_f(pairs, ell, EvalGrid(np.linspace(*trunc.interval, 101)))
        trunc = TruncationSpec(m=estimate_m(fm, trunc.interval))
    return float(estimate_p(s, f, trunc).values[0, 0])
