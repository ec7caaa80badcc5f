"""Bandwidth selection by penalized comparison to overfitting.

For a candidate set with smallest element ``h0`` the selected bandwidth
minimizes ``||est_h - est_h0||^2 + pen(h)`` where ``pen`` is twice the
same-copy part of the inner product ``<est_h, est_h0>``.

Both ingredients reduce to sums of Gaussians over pairs of sample points,
``sum_{p,q} phi_v(X_p - X_q)`` with ``v = h^2 + h'^2``:

* the L2 term runs over all pairs (any copies).  ``l2_method="pairs"``
  sums the closed form over all pairs (small samples only); ``"grid"``
  evaluates both estimators on a rectangle and integrates numerically;
  ``"lattice"`` bins the points on a fine lattice, forms the pair-offset
  histogram by FFT autocorrelation and evaluates the Gaussian sums on it,
  which is an integral over the whole plane.
* the penalty runs over same-copy pairs only.  ``penalty_method="exact"``
  sums the closed form directly; ``"binned"`` histograms the pair
  distances once (linear binning) and reuses them for every candidate.

``"auto"`` picks the exact sums when they are cheap and the binned or
lattice forms otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy import fft as sfft

from .diffusion import PairSample
from .errors import ConfigError, DomainError
from .estimators import EstimatorGrid, EvalGrid, estimate_f, estimate_s
from .kernels import Bandwidth, BandwidthGrid, kernel_conv

L2_METHODS = ("auto", "lattice", "grid", "pairs")
PENALTY_METHODS = ("auto", "binned", "exact")
# exact sums are used by "auto" below these pair counts
AUTO_L2_PAIRS = 10**6
AUTO_PENALTY_PAIRS = 10**6


@dataclass(frozen=True)
class PcoConfig:
    grid_h: BandwidthGrid = field(default_factory=BandwidthGrid.regular)
    grid_ell: BandwidthGrid = field(default_factory=BandwidthGrid.regular)
    # (x_lo, x_hi, y_lo, y_hi); None -> derived from the data
    l2_domain: Optional[tuple[float, float, float, float]] = None
    resolution: int = 256
    pen_time_subsample: int = 1
    l2_method: str = "auto"
    penalty_method: str = "auto"
    lattice_size: int = 2048

    def __post_init__(self):
        if self.resolution < 32:
            raise ConfigError(f"resolution must be >= 32, got {self.resolution}", key="pco.resolution")
        if self.pen_time_subsample < 1:
            raise ConfigError("stride must be >= 1", key="pco.pen_time_subsample")
        if self.l2_method not in L2_METHODS:
            raise ConfigError(f"unknown l2_method {self.l2_method!r}", key="pco.l2_method")
        if self.penalty_method not in PENALTY_METHODS:
            raise ConfigError(f"unknown penalty_method {self.penalty_method!r}",
                              key="pco.penalty_method")
        if self.lattice_size < 16:
            raise ConfigError("lattice_size must be >= 16", key="pco.lattice_size")
        if self.l2_domain is not None:
            d = tuple(float(v) for v in self.l2_domain)
            if len(d) != 4 or not all(map(math.isfinite, d)) or d[0] >= d[1] or d[2] >= d[3]:
                raise ConfigError(f"bad l2_domain {self.l2_domain!r}", key="pco.l2_domain")
            object.__setattr__(self, "l2_domain", d)

    def resolve_l2(self, pairs: PairSample) -> str:
        if self.l2_method != "auto":
            return self.l2_method
        return "pairs" if pairs.start.size**2 <= AUTO_L2_PAIRS else "lattice"

    def resolve_penalty(self, pairs: PairSample) -> str:
        if self.penalty_method != "auto":
            return self.penalty_method
        n_sub = -(-pairs.n_time // self.pen_time_subsample)
        return "exact" if pairs.n_copies * n_sub**2 <= AUTO_PENALTY_PAIRS else "binned"


@dataclass
class PcoSelection:
    candidates: list
    l2_terms: np.ndarray
    penalties: np.ndarray
    chosen: object
    ties: list

    @property
    def totals(self) -> np.ndarray:
        return self.l2_terms + self.penalties

    def to_dict(self) -> dict:
        return {
            "candidates": [list(c) if isinstance(c, tuple) else c for c in self.candidates],
            "l2_term": self.l2_terms.tolist(),
            "penalty": self.penalties.tolist(),
            "total": self.totals.tolist(),
            "chosen": list(self.chosen) if isinstance(self.chosen, tuple) else self.chosen,
            "ties": [list(c) if isinstance(c, tuple) else c for c in self.ties],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _hv(h) -> float:
    return h.value if isinstance(h, Bandwidth) else Bandwidth(h).value


def _pair(h):
    if isinstance(h, (tuple, list)):
        return _hv(h[0]), _hv(h[1])
    v = _hv(h)
    return v, v


def _check(pairs: PairSample, stride: int):
    if pairs.start.size == 0:
        raise DomainError("no sample points")
    if stride < 1:
        raise ConfigError("stride must be >= 1", key="pen_time_subsample")


# -- exact penalties -------------------------------------------------------

def pen_dagger(pairs: PairSample, ell, h0, stride: int = 1) -> float:
    """Penalty of the marginal criterion, closed-form double time sum."""
    _check(pairs, stride)
    xs = pairs.start[:, ::stride]
    n_sub = xs.shape[1]
    ell, h0 = _hv(ell), _hv(h0)
    total = 0.0
    for row in xs:
        total += np.sum(kernel_conv(ell, h0, row[:, None] - row[None, :]))
    return 2.0 * total / (pairs.n_copies**2 * n_sub**2)


def pen_numerator(pairs: PairSample, h, h0, stride: int = 1) -> float:
    """Penalty of the joint criterion via the product-kernel factorization."""
    _check(pairs, stride)
    xs = pairs.start[:, ::stride]
    ys = pairs.end[:, ::stride]
    n_sub = xs.shape[1]
    (h1, h2), (g1, g2) = _pair(h), _pair(h0)
    total = 0.0
    for rx, ry in zip(xs, ys):
        total += np.sum(kernel_conv(h1, g1, rx[:, None] - rx[None, :])
                        * kernel_conv(h2, g2, ry[:, None] - ry[None, :]))
    return 2.0 * total / (pairs.n_copies**2 * n_sub**2)


# -- binned penalties ------------------------------------------------------

@njit(cache=True)
def _self_pair_histograms(xs, ys, step1, step2, nb1, nb2):
    # ordered same-copy pairs, linear binning of |dx| and of the 2-D distance
    h1 = np.zeros(nb1 + 2)
    h2 = np.zeros(nb2 + 2)
    n_copies, n = xs.shape
    for i in range(n_copies):
        h1[0] += n
        h2[0] += n
        for s in range(n):
            xa = xs[i, s]
            ya = ys[i, s]
            for u in range(s + 1, n):
                dx = xa - xs[i, u]
                dy = ya - ys[i, u]
                r = abs(dx) / step1
                k = int(r)
                f = r - k
                h1[k] += 2.0 * (1.0 - f)
                h1[k + 1] += 2.0 * f
                r = math.sqrt(dx * dx + dy * dy) / step2
                k = int(r)
                f = r - k
                h2[k] += 2.0 * (1.0 - f)
                h2[k + 1] += 2.0 * f
    return h1, h2


@dataclass(frozen=True)
class SelfPairHistogram:
    """Distances of same-copy time pairs, binned once per sample."""

    step1: float
    step2: float
    hist1: np.ndarray
    hist2: np.ndarray
    n_copies: int
    n_sub: int

    @classmethod
    def build(cls, pairs: PairSample, h0: float, stride: int = 1, resolution: float = 0.01):
        _check(pairs, stride)
        xs = np.ascontiguousarray(pairs.start[:, ::stride])
        ys = np.ascontiguousarray(pairs.end[:, ::stride])
        rx = float(np.ptp(xs)) or h0
        ry = float(np.ptp(ys)) or h0
        step = resolution * h0
        nb1 = int(math.ceil(rx / step)) + 1
        nb2 = int(math.ceil(math.hypot(rx, ry) / step)) + 1
        h1, h2 = _self_pair_histograms(xs, ys, step, step, nb1, nb2)
        return cls(step, step, h1, h2, pairs.n_copies, xs.shape[1])

    def _scale(self):
        return 2.0 / (self.n_copies**2 * self.n_sub**2)

    def pen_dagger(self, ell, h0) -> float:
        v = _hv(ell) ** 2 + _hv(h0) ** 2
        r = self.step1 * np.arange(self.hist1.size)
        g = np.exp(-r * r / (2 * v)) / math.sqrt(2 * math.pi * v)
        return self._scale() * float(self.hist1 @ g)

    def pen_numerator(self, h, h0) -> float:
        (h1, h2), (g1, g2) = _pair(h), _pair(h0)
        v = h1 * h1 + g1 * g1
        if abs(v - (h2 * h2 + g2 * g2)) > 1e-15:
            raise DomainError("binned penalty requires isotropic bandwidths")
        r = self.step2 * np.arange(self.hist2.size)
        g = np.exp(-r * r / (2 * v)) / (2 * math.pi * v)
        return self._scale() * float(self.hist2 @ g)


# -- L2 distances -----------------------------------------------------------

def _cell_weights(x: np.ndarray) -> np.ndarray:
    return np.gradient(x) if x.size > 1 else np.ones(1)


def l2_distance_sq(est_a: EstimatorGrid, est_b: EstimatorGrid) -> float:
    """Squared L2 distance by Riemann sum, weights = local grid mesh."""
    if not est_a.grid.same_as(est_b.grid):
        raise DomainError("estimator grids differ")
    diff2 = (est_a.values - est_b.values) ** 2
    wx = _cell_weights(est_a.grid.x)
    if est_a.grid.y is None:
        return float(diff2 @ wx)
    return float(wx @ diff2 @ _cell_weights(est_a.grid.y))


def _linear_bin(points, lo, step, size):
    pos = (points - lo) / step
    k = np.minimum(np.floor(pos).astype(np.int64), size - 2)
    f = pos - k
    return k, f


def _lattice_autocorr_1d(xs, size):
    lo = float(xs.min())
    span = float(np.ptp(xs))
    step = span / (size - 1) if span > 0 else 1.0
    k, f = _linear_bin(xs, lo, step, size)
    c = np.bincount(k, 1 - f, minlength=size) + np.bincount(k + 1, f, minlength=size)
    c /= xs.size
    n = sfft.next_fast_len(2 * size - 1)
    fc = sfft.rfft(c, n)
    r = sfft.irfft(fc.real**2 + fc.imag**2, n)
    off = np.arange(n)
    off = np.where(off < size, off, off - n) * step
    return r, off, step


def _lattice_autocorr_2d(xs, ys, size):
    lox, loy = float(xs.min()), float(ys.min())
    spx, spy = float(np.ptp(xs)), float(np.ptp(ys))
    sx = spx / (size - 1) if spx > 0 else 1.0
    sy = spy / (size - 1) if spy > 0 else 1.0
    kx, fx = _linear_bin(xs, lox, sx, size)
    ky, fy = _linear_bin(ys, loy, sy, size)
    c = np.zeros(size * size)
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            c += np.bincount((kx + dx) * size + ky + dy, wx * wy, minlength=size * size)
    c = c.reshape(size, size) / xs.size
    n = sfft.next_fast_len(2 * size - 1, real=True)
    fc = sfft.rfft2(c, (n, n))
    r = sfft.irfft2(fc.real**2 + fc.imag**2, (n, n))
    off = np.arange(n)
    off = np.where(off < size, off, off - n)
    return r, off * sx, off * sy, sx, sy


def _lattice_gauss(off, var, step):
    # linear binning of both ends widens pair offsets by step^2/3 on average
    v = var - step * step / 3.0
    return np.exp(-off * off / (2 * v)) / math.sqrt(2 * math.pi * v)


def _lattice_size(span, h0, cap):
    return int(min(cap, max(64, math.ceil(4 * span / h0) + 1)))


class _MarginalL2:
    """``||f_ell - f_h0||^2`` for all candidates from one lattice."""

    def __init__(self, pairs, grid: BandwidthGrid, config: PcoConfig):
        xs = pairs.start.reshape(-1)
        self.h0 = grid.h0
        self.method = config.resolve_l2(pairs)
        if self.method == "pairs":
            self.d2 = (xs[:, None] - xs[None, :]) ** 2
            self.s00 = self._inner(self.h0, self.h0)
        elif self.method == "lattice":
            size = _lattice_size(np.ptp(xs), grid.h0, 8 * config.lattice_size)
            self.r, self.off, self.step = _lattice_autocorr_1d(xs, size)
            self.s00 = self._inner(self.h0, self.h0)
        else:
            lo, hi = _domain(pairs, grid, config)[:2]
            self.egrid = EvalGrid(np.linspace(lo, hi, config.resolution))
            self.pairs = pairs
            self.ref = estimate_f(pairs, self.h0, self.egrid)

    def _inner(self, a, b):
        v = a * a + b * b
        if self.method == "pairs":
            return float(np.mean(np.exp(-self.d2 / (2 * v)))) / math.sqrt(2 * math.pi * v)
        return float(self.r @ _lattice_gauss(self.off, v, self.step))

    def __call__(self, ell) -> float:
        if ell == self.h0:
            return 0.0
        if self.method != "grid":
            s11 = self._inner(ell, ell)
            s10 = self._inner(ell, self.h0)
            return max((s11 - s10) + (self.s00 - s10), 0.0)
        return l2_distance_sq(estimate_f(self.pairs, ell, self.egrid), self.ref)


class _JointL2:
    """``||s_h - s_h0||^2`` for all candidates from one lattice."""

    def __init__(self, pairs, grid: BandwidthGrid, config: PcoConfig):
        xs, ys = pairs.start.reshape(-1), pairs.end.reshape(-1)
        self.h0 = (grid.h0, grid.h0)
        self.method = config.resolve_l2(pairs)
        if self.method == "pairs":
            self.dx2 = (xs[:, None] - xs[None, :]) ** 2
            self.dy2 = (ys[:, None] - ys[None, :]) ** 2
            self.s00 = self._inner(self.h0, self.h0)
        elif self.method == "lattice":
            span = max(np.ptp(xs), np.ptp(ys))
            size = _lattice_size(span, grid.h0, config.lattice_size)
            self.r, self.offx, self.offy, self.sx, self.sy = _lattice_autocorr_2d(xs, ys, size)
            self.s00 = self._inner(self.h0, self.h0)
        else:
            d = _domain(pairs, grid, config)
            self.egrid = EvalGrid.linspace(d[0], d[1], config.resolution, d[2], d[3])
            self.pairs = pairs
            self.ref = estimate_s(pairs, self.h0, self.egrid)

    def _inner(self, a, b):
        v1, v2 = a[0] ** 2 + b[0] ** 2, a[1] ** 2 + b[1] ** 2
        if self.method == "pairs":
            e = np.exp(-self.dx2 / (2 * v1) - self.dy2 / (2 * v2))
            return float(np.mean(e)) / (2 * math.pi * math.sqrt(v1 * v2))
        gx = _lattice_gauss(self.offx, v1, self.sx)
        gy = _lattice_gauss(self.offy, v2, self.sy)
        return float(gx @ (self.r @ gy))

    def __call__(self, h) -> float:
        if h == self.h0:
            return 0.0
        if self.method != "grid":
            s11 = self._inner(h, h)
            s10 = self._inner(h, self.h0)
            return max((s11 - s10) + (self.s00 - s10), 0.0)
        return l2_distance_sq(estimate_s(self.pairs, h, self.egrid), self.ref)


def default_l2_domain(pairs: PairSample, widen: float):
    """Central 99.8% of each axis, widened by ``3 * widen``."""
    qx = np.quantile(pairs.start, [0.001, 0.999])
    qy = np.quantile(pairs.end, [0.001, 0.999])
    w = 3.0 * widen
    return (qx[0] - w, qx[1] + w, qy[0] - w, qy[1] + w)


def _domain(pairs, grid, config):
    if config.l2_domain is not None:
        return config.l2_domain
    return default_l2_domain(pairs, max(grid.values))


# -- selection ---------------------------------------------------------------

def _argmin(candidates, totals):
    best = np.min(totals)
    ties = [c for c, v in zip(candidates, totals) if v == best]
    # candidates are increasing, so the first tie is the smallest bandwidth
    return ties[0], ties


def shared_histogram(pairs: PairSample, config: PcoConfig) -> SelfPairHistogram:
    """One histogram serving both criteria of a sample."""
    h0 = min(config.grid_h.h0, config.grid_ell.h0)
    return SelfPairHistogram.build(pairs, h0, config.pen_time_subsample)


def select_ell(pairs: PairSample, config: PcoConfig,
               hist: Optional[SelfPairHistogram] = None) -> PcoSelection:
    grid = config.grid_ell
    h0 = grid.h0
    l2 = _MarginalL2(pairs, grid, config)
    if config.resolve_penalty(pairs) == "binned":
        hist = hist or SelfPairHistogram.build(pairs, h0, config.pen_time_subsample)
        pen = lambda ell: hist.pen_dagger(ell, h0)  # noqa: E731
    else:
        pen = lambda ell: pen_dagger(pairs, ell, h0, config.pen_time_subsample)  # noqa: E731
    cands = list(grid.values)
    l2_terms = np.array([l2(c) for c in cands])
    penalties = np.array([pen(c) for c in cands])
    chosen, ties = _argmin(cands, l2_terms + penalties)
    assert l2_terms[0] + penalties[0] == penalties[0]
    return PcoSelection(cands, l2_terms, penalties, chosen, ties)


def select_h(pairs: PairSample, config: PcoConfig, t: Optional[float] = None,
             candidates: Optional[list] = None,
             hist: Optional[SelfPairHistogram] = None) -> PcoSelection:
    """Select the joint bandwidth on the isotropic diagonal ``(h, h)``.

    ``candidates`` may list arbitrary pairs from the product grid; the
    binned penalty only supports isotropic ones.
    """
    if t is not None and abs(t - pairs.t) > 1e-12:
        raise DomainError(f"pairs were extracted at lag {pairs.t}, not {t}")
    grid = config.grid_h
    h0 = (grid.h0, grid.h0)
    cands = candidates or [(h, h) for h in grid.values]
    cands = [tuple(float(v) for v in c) for c in cands]
    if h0 not in cands:
        raise ConfigError("candidate list must contain the overfitting pair (h0, h0)")
    l2 = _JointL2(pairs, grid, config)
    if config.resolve_penalty(pairs) == "binned":
        hist = hist or SelfPairHistogram.build(pairs, grid.h0, config.pen_time_subsample)
        pen = lambda h: hist.pen_numerator(h, h0)  # noqa: E731
    else:
        pen = lambda h: pen_numerator(pairs, h, h0, config.pen_time_subsample)  # noqa: E731
    l2_terms = np.array([l2(c) for c in cands])
    penalties = np.array([pen(c) for c in cands])
    chosen, ties = _argmin(cands, l2_terms + penalties)
    i0 = cands.index(h0)
    assert l2_terms[i0] + penalties[i0] == penalties[i0]
    return PcoSelection(cands, l2_terms, penalties, chosen, ties)
