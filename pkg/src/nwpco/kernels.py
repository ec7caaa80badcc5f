"""Gaussian kernel primitives and bandwidth containers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelSpec(enum.Enum):
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, order=True)
class Bandwidth:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v <= 1.0) or not math.isfinite(v):
            raise DomainError(f"bandwidth must lie in (0, 1], got {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class BandwidthGrid:
    """Strictly increasing finite set of candidate bandwidths.

    The smallest element ``h0`` is the overfitting anchor of the
    comparison criteria.
    """

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(Bandwidth(v)) for v in self.values)
        if not vals:
            raise ConfigError("bandwidth grid must be nonempty", key="grid")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("bandwidth grid must be strictly increasing", key="grid")
        object.__setattr__(self, "values", vals)

    @property
    def h0(self) -> float:
        return self.values[0]

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @classmethod
    def regular(cls, step: float = 0.02, count: int = 30) -> "BandwidthGrid":
        """``{step * k ; k = 1..count}``, rounded to kill float drift."""
        return cls(tuple(round(step * k, 12) for k in range(1, count + 1)))

    def check_copies(self, n_copies: int, key: str = "grid"):
        if n_copies * self.h0 < 1.0 - 1e-12:
            raise ConfigError(
                f"smallest bandwidth {self.h0} violates N*h0 >= 1 for N={n_copies}",
                key=key,
            )


def _h(h) -> float:
    return h.value if isinstance(h, Bandwidth) else float(Bandwidth(h))


def kernel_eval(u, spec: KernelSpec = KernelSpec.GAUSSIAN):
    """Standard normal density. Accepts scalars or arrays."""
    if spec is not KernelSpec.GAUSSIAN:
        raise DomainError(f"unsupported kernel {spec!r}")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("kernel argument must be finite")
    out = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return float(out) if out.ndim == 0 else out


def kernel_scaled(h, u, spec: KernelSpec = KernelSpec.GAUSSIAN):
    """``K_h(u) = K(u / h) / h``."""
    hv = _h(h)
    u = np.asarray(u, dtype=float)
    return kernel_eval(u / hv, spec) / hv


def kernel_conv(h1, h2, x):
    """Closed form of ``(K_h1 * K_h2)(x)`` for the Gaussian kernel."""
    var = _h(h1) ** 2 + _h(h2) ** 2
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)
    return float(out) if out.ndim == 0 else out


def product_kernel(h: Sequence, dx, dy):
    """``Q_h(dx, dy) = K_h1(dx) * K_h2(dy)``."""
    h1, h2 = h
    return kernel_scaled(h1, dx) * kernel_scaled(h2, dy)


def gaussian_with_variance(x, var):
    """Centered normal density with variance ``var``; no validation, hot path."""
    return np.exp(-x * x / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)
