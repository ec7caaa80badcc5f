"""Exact simulation of the benchmark diffusions.

Every model is driven by a d-dimensional Ornstein-Uhlenbeck process

    dU = -(r/2) U dt + (gamma/2) dW,   U_0 ~ N(0, gamma^2/(4r) I_d),

sampled exactly on a regular mesh, then mapped to the observed process:
identity (OU), ``tanh`` (TANH_OU) or the squared Euclidean norm (CIR).

Gaussian draws use the inverse-CDF method on 53-bit uniforms from a
Philox counter-based generator keyed on ``(seed, *stream, copy)``; the
stream of a copy never depends on how many copies are drawn or in which
order.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import AlignmentError, ConfigError, DataFileError, DomainError


class ModelKind(enum.Enum):
    OU = "ou"
    TANH_OU = "tanh_ou"
    CIR = "cir"


@dataclass(frozen=True)
class OuParams:
    r: float
    gamma: float
    d: int = 1

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ConfigError(f"r must be positive, got {self.r}", key="model.r")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be positive, got {self.gamma}", key="model.gamma")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}", key="model.d")

    @property
    def stationary_variance(self) -> float:
        return self.gamma**2 / (4.0 * self.r)


MODEL_DEFAULTS = {
    ModelKind.OU: OuParams(r=2.0, gamma=2.0, d=1),
    ModelKind.TANH_OU: OuParams(r=4.0, gamma=1.0, d=1),
    ModelKind.CIR: OuParams(r=1.0, gamma=1.0, d=6),
}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    params: OuParams

    def __post_init__(self):
        d = self.params.d
        if self.kind in (ModelKind.OU, ModelKind.TANH_OU) and d != 1:
            raise ConfigError(f"{self.kind.value} requires d=1, got d={d}", key="model.d")
        if self.kind is ModelKind.CIR and d < 2:
            raise ConfigError(f"cir requires d>=2, got d={d}", key="model.d")

    @classmethod
    def default(cls, kind) -> "ModelSpec":
        kind = ModelKind(kind)
        return cls(kind, MODEL_DEFAULTS[kind])

    @property
    def tag(self) -> str:
        p = self.params
        return f"{self.kind.value}:r={p.r!r}:gamma={p.gamma!r}:d={p.d}"

    @classmethod
    def from_tag(cls, tag: str) -> "ModelSpec":
        kind, *rest = tag.split(":")
        kv = dict(item.split("=", 1) for item in rest)
        return cls(ModelKind(kind), OuParams(float(kv["r"]), float(kv["gamma"]), int(kv["d"])))

    def observe(self, u: np.ndarray) -> np.ndarray:
        """Map OU states with trailing axis of length d to observed values."""
        if self.kind is ModelKind.OU:
            return u[..., 0]
        if self.kind is ModelKind.TANH_OU:
            return np.tanh(u[..., 0])
        return np.einsum("...k,...k->...", u, u)


@dataclass(frozen=True)
class PathEnsemble:
    """``N`` discretized copies on ``[0, n_steps * delta]``."""

    model: ModelSpec
    delta: float
    seed: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 3:
            raise ConfigError(f"ensemble values must be N x (n+1) with n>=2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("ensemble contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_copies(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.delta

    def time_index(self, time: float, name: str = "time") -> int:
        """Mesh index of ``time``; raises if it is not a mesh point."""
        j = round(time / self.delta)
        if abs(j * self.delta - time) > 1e-9 * max(1.0, abs(time)):
            raise AlignmentError(f"{name}={time!r} is not a multiple of delta={self.delta!r}")
        if not 0 <= j <= self.n_steps:
            raise AlignmentError(f"{name}={time!r} lies outside [0, {self.horizon!r}]")
        return j

    def column(self, time: float) -> np.ndarray:
        return self.values[:, self.time_index(time)]

    # -- persistence -----------------------------------------------------
    def save(self, path):
        """Write ``.npz`` (binary) or CSV, chosen by suffix."""
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(path, values=self.values, delta=self.delta, seed=self.seed,
                     model=self.model.tag)
            return path
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "n", "delta", "seed", "model"])
            w.writerow([self.n_copies, self.n_steps, _fmt(self.delta), self.seed, self.model.tag])
            for row in self.values:
                w.writerow([_fmt(x) for x in row])
        return path

    @classmethod
    def load(cls, path) -> "PathEnsemble":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                return cls(ModelSpec.from_tag(str(z["model"])), float(z["delta"]),
                           int(z["seed"]), z["values"])
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3 or rows[0] != ["N", "n", "delta", "seed", "model"]:
            raise DataFileError(f"{path}: not an ensemble CSV")
        try:
            n_copies, n_steps, delta, seed, tag = rows[1]
            values = np.array([[float(x) for x in r] for r in rows[2:]])
        except ValueError as exc:
            raise DataFileError(f"{path}: {exc}") from None
        if values.shape != (int(n_copies), int(n_steps) + 1):
            raise DataFileError(f"{path}: header says {n_copies}x{int(n_steps) + 1}, "
                                f"body is {values.shape[0]}x{values.shape[1]}")
        return cls(ModelSpec.from_tag(tag), float(delta), int(seed), values)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def copy_generator(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed on ``(seed, *stream)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    """Inverse-CDF normals from uniforms on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return ndtri((k + 0.5) * 2.0**-53)


def ou_innovation_std(params: OuParams, delta: float) -> float:
    return 0.5 * params.gamma * math.sqrt(-math.expm1(-params.r * delta) / params.r)


def simulate_ou_step(params: OuParams, state, delta: float, noise):
    """Advance OU states one mesh step of length ``delta`` exactly."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    decay = math.exp(-0.5 * params.r * delta)
    return decay * np.asarray(state, dtype=float) + ou_innovation_std(params, delta) * np.asarray(noise)


def simulate_ensemble(model: ModelSpec, n_copies: int, n_steps: int, delta: float,
                      seed: int, stream: tuple[int, ...] = ()) -> PathEnsemble:
    """Draw ``n_copies`` independent stationary paths with ``n_steps`` steps.

    ``stream`` prefixes the per-copy key, so repetition ``k`` of an
    experiment uses ``stream=(k,)`` and never collides with another.
    """
    if int(n_copies) != n_copies or n_copies < 1:
        raise ConfigError(f"n_copies must be >= 1, got {n_copies}", key="N")
    if int(n_steps) != n_steps or n_steps < 2:
        raise ConfigError(f"n_steps must be >= 2, got {n_steps}", key="n_steps")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}", key="delta")
    p = model.params
    noise = np.empty((n_steps + 1, n_copies, p.d))
    for i in range(n_copies):
        rng = copy_generator(seed, *stream, i)
        noise[:, i, :] = standard_normals(rng, (n_steps + 1, p.d))
    u = np.empty_like(noise)
    u[0] = math.sqrt(p.stationary_variance) * noise[0]
    for j in range(1, n_steps + 1):
        u[j] = simulate_ou_step(p, u[j - 1], delta, noise[j])
    values = np.ascontiguousarray(model.observe(u).T)
    return PathEnsemble(model, float(delta), int(seed), values)


@dataclass(frozen=True)
class PairSample:
    """Observation pairs ``(X_s, X_{s+t})`` for mesh times ``s`` in ``[t0, T]``.

    ``start`` and ``end`` are ``N x n_time`` arrays; row ``i`` belongs to
    copy ``i`` and column ``k`` to time ``t0 + k * delta``.
    """

    start: np.ndarray = field(repr=False)
    end: np.ndarray = field(repr=False)
    t0: float
    T: float
    t: float
    delta: float

    @property
    def n_copies(self) -> int:
        return self.start.shape[0]

    @property
    def n_time(self) -> int:
        return self.start.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.n_time)

    def subsample(self, stride: int) -> "PairSample":
        if stride == 1:
            return self
        return PairSample(self.start[:, ::stride], self.end[:, ::stride],
                          self.t0, self.T, self.t, self.delta)


def extract_pairs(ensemble: PathEnsemble, t0: float, T: float, t: float) -> PairSample:
    if not 0 <= t0 < T:
        raise DomainError(f"need 0 <= t0 < T, got t0={t0}, T={T}")
    if not 0 < t <= T:
        raise DomainError(f"need 0 < t <= T, got t={t}, T={T}")
    j0 = ensemble.time_index(t0, "t0")
    j1 = ensemble.time_index(T, "T")
    lag = ensemble.time_index(t, "t")
    ensemble.time_index(T + t, "T+t")
    v = ensemble.values
    return PairSample(v[:, j0:j1 + 1], v[:, j0 + lag:j1 + lag + 1],
                      float(t0), float(T), float(t), ensemble.delta)
