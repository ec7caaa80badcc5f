"""Closed-form transition and stationary densities of the benchmark models."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .diffusion import ModelKind, ModelSpec
from .errors import DomainError

SERIES_CUTOFF = 20.0


def _bessel_series(order: float, x: np.ndarray) -> np.ndarray:
    # all terms positive; stop when the next term is below 1e-17 of the sum
    half = 0.5 * x
    term = np.exp(order * np.log(np.where(half > 0, half, 1.0)) - gammaln(order + 1.0))
    term = np.where(half > 0, term, 1.0 if order == 0 else 0.0)
    total = term.copy()
    q = half * half
    for k in range(1, 200):
        term = term * q / (k * (k + order))
        total += term
        if np.all(term <= 1e-17 * total):
            break
    return total


def _bessel_asymptotic_scaled(order: float, x: np.ndarray) -> np.ndarray:
    """``exp(-x) I_order(x)`` from the large-argument expansion."""
    mu = 4.0 * order * order
    term = np.ones_like(x)
    total = term.copy()
    prev = np.full_like(x, np.inf)
    for k in range(1, 60):
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        # asymptotic series: stop at the smallest term
        grow = np.abs(nxt) >= np.abs(prev)
        nxt = np.where(grow, 0.0, nxt)
        total += nxt
        prev = np.where(grow, 0.0, term)
        term = nxt
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_i_scaled(order, x):
    """``exp(-x) * I_order(x)`` for ``x >= 0``; finite for every ``x``."""
    if order < 0:
        raise DomainError(f"order must be >= 0, got {order}")
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0)):
        raise DomainError("bessel_i requires x >= 0")
    out = np.empty_like(x)
    small = x <= SERIES_CUTOFF
    if np.any(small):
        xs = x[small]
        out[small] = _bessel_series(order, xs) * np.exp(-xs)
    if np.any(~small):
        out[~small] = _bessel_asymptotic_scaled(order, x[~small])
    return float(out) if out.ndim == 0 else out


def bessel_i(order, x):
    """Modified Bessel function of the first kind ``I_order(x)``.

    Power series up to ``x = 20``, large-argument asymptotic expansion
    beyond.  Overflows to ``inf`` past ``x ~ 713``; use
    :func:`bessel_i_scaled` there.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        out = np.asarray(bessel_i_scaled(order, x)) * np.exp(x)
    return float(out) if out.ndim == 0 else out


def _check_t(t):
    if not t > 0:
        raise DomainError(f"transition lag must be positive, got {t}")


def ou_transition(r, gamma, t, x, y):
    _check_t(t)
    decay = math.exp(-0.5 * r * t)
    var = gamma**2 * -math.expm1(-r * t) / (4.0 * r)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = y - x * decay
    out = np.exp(-z * z / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return float(out) if out.ndim == 0 else out


def tanh_ou_transition(r, gamma, t, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~(np.abs(x) < 1)) or np.any(~(np.abs(y) < 1)):
        raise DomainError("tanh_ou_transition requires |x| < 1 and |y| < 1")
    out = ou_transition(r, gamma, t, np.arctanh(x), np.arctanh(y)) / (1.0 - y * y)
    return out


def cir_transition(d, r, gamma, t, x, y):
    """Transition density of the squared norm of a d-dimensional OU process.

    Evaluated in log space with the exponentially scaled Bessel function.
    """
    _check_t(t)
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("cir_transition requires x > 0")
    if np.any(~(y >= 0)):
        raise DomainError("cir_transition requires y >= 0")
    x, y = np.broadcast_arrays(x, y)
    e = math.exp(-r * t)
    c = 2.0 * r / (gamma**2 * -math.expm1(-r * t))
    nu = 0.5 * d - 1.0
    xe = x * e
    out = np.zeros(x.shape)
    pos = y > 0
    z = 2.0 * c * np.sqrt(xe[pos] * y[pos])
    logp = (math.log(c) - c * (xe[pos] + y[pos])
            + (0.5 * nu) * np.log(y[pos] / xe[pos])
            + np.log(bessel_i_scaled(nu, z)) + z)
    out[pos] = np.exp(logp)
    if d == 2:
        out[~pos] = c * np.exp(-c * xe[~pos])
    return float(out) if out.ndim == 0 else out


def transition_density(model: ModelSpec, t, x, y):
    p = model.params
    if model.kind is ModelKind.OU:
        return ou_transition(p.r, p.gamma, t, x, y)
    if model.kind is ModelKind.TANH_OU:
        return tanh_ou_transition(p.r, p.gamma, t, x, y)
    return cir_transition(p.d, p.r, p.gamma, t, x, y)


def stationary_density(model: ModelSpec, x):
    p = model.params
    x = np.asarray(x, dtype=float)
    var = p.stationary_variance
    if model.kind is ModelKind.OU:
        out = np.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)
    elif model.kind is ModelKind.TANH_OU:
        if np.any(~(np.abs(x) < 1)):
            raise DomainError("tanh_ou stationary density requires |x| < 1")
        u = np.arctanh(x)
        out = np.exp(-u * u / (2 * var)) / math.sqrt(2 * math.pi * var) / (1 - x * x)
    else:
        # Gamma(shape d/2, scale 2 * var)
        k, scale = 0.5 * p.d, 2.0 * var
        out = np.zeros(x.shape)
        pos = x > 0
        xp = x[pos]
        out[pos] = np.exp((k - 1) * np.log(xp) - xp / scale - gammaln(k) - k * math.log(scale))
        if p.d == 2:
            out[x == 0] = 1.0 / scale
    return float(out) if out.ndim == 0 else out
