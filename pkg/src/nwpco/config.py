"""TOML experiment files: parsing, overrides and echo."""

from __future__ import annotations

import math
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bench import ExperimentConfig, QuantileLevels
from .diffusion import MODEL_DEFAULTS, ModelKind, ModelSpec, OuParams
from .errors import ConfigError, NwpcoError
from .kernels import BandwidthGrid
from .pco import PcoConfig

SCHEMA = {
    "model": {"kind", "r", "gamma", "d"},
    "time": {"T", "t0", "t", "delta"},
    "pco": {"grid_h", "grid_ell", "l2_method", "penalty_method", "resolution",
            "pen_time_subsample", "lattice_size", "l2_domain"},
    "bench": {"N", "M", "repetitions", "seed", "quantile_x", "quantile_y"},
}


def _key_line(text: str, dotted: str):
    """1-based line where ``section.key`` is assigned, if it can be found."""
    section, _, key = dotted.partition(".")
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if not key and current == section:
                return no
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*=", s):
            return no
    return None


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _resolve_override(key: str) -> str:
    if "." in key:
        section, _, name = key.partition(".")
        if section in SCHEMA and name in SCHEMA[section]:
            return key
        raise ConfigError("unknown key", key=key)
    hits = [f"{s}.{key}" for s, names in SCHEMA.items() if key in names]
    if len(hits) != 1:
        raise ConfigError("unknown key" if not hits else f"ambiguous key, use one of {hits}",
                          key=key)
    return hits[0]


def apply_overrides(data: dict, overrides) -> dict:
    data = {s: dict(v) for s, v in data.items()}
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        section, _, name = _resolve_override(key.strip()).partition(".")
        data.setdefault(section, {})[name] = _parse_value(raw.strip())
    return data


def _grid(value, key):
    if isinstance(value, dict):
        return BandwidthGrid.regular(float(value.get("step", 0.02)), int(value.get("count", 30)))
    if isinstance(value, list):
        return BandwidthGrid(tuple(float(v) for v in value))
    raise ConfigError("expected a list of bandwidths or {step, count}", key=key)


def build_config(data: dict, text: str = "") -> ExperimentConfig:
    """Validated config from parsed TOML; per-model defaults fill the gaps."""
    for section, body in data.items():
        if section not in SCHEMA or not isinstance(body, dict):
            raise ConfigError("unknown section", key=section, line=_key_line(text, section))
        for name in body:
            if name not in SCHEMA[section]:
                dotted = f"{section}.{name}"
                raise ConfigError("unknown key", key=dotted, line=_key_line(text, dotted))
    current = None
    try:
        m = data.get("model", {})
        current = "model.kind"
        kind = ModelKind(m.get("kind", "ou"))
        base = MODEL_DEFAULTS[kind]
        current = "model"
        model = ModelSpec(kind, OuParams(float(m.get("r", base.r)), float(m.get("gamma", base.gamma)),
                                         int(m.get("d", base.d))))
        t = data.get("time", {})
        p = data.get("pco", {})
        current = "pco"
        pco_kw = {k: p[k] for k in ("l2_method", "penalty_method", "resolution",
                                    "pen_time_subsample", "lattice_size") if k in p}
        if "l2_domain" in p:
            pco_kw["l2_domain"] = tuple(p["l2_domain"])
        for k in ("grid_h", "grid_ell"):
            if k in p:
                current = f"pco.{k}"
                pco_kw[k] = _grid(p[k], current)
        current = "pco"
        pco = PcoConfig(**pco_kw)
        b = data.get("bench", {})
        current = "bench"
        qx = b.get("quantile_x", [0.02, 0.98])
        qy = b.get("quantile_y", [0.01, 0.99])
        q = QuantileLevels(float(qx[0]), float(qx[1]), float(qy[0]), float(qy[1]))
        return ExperimentConfig(
            model=model, N=int(b.get("N", 100)), T=float(t.get("T", 10.0)),
            t0=float(t.get("t0", 0.0)), t=float(t.get("t", 1.0)),
            delta=float(t.get("delta", 0.02)), M=int(b.get("M", 100)),
            repetitions=int(b.get("repetitions", 200)), quantile_levels=q, pco=pco,
            seed=int(b.get("seed", 0)))
    except ConfigError as exc:
        key = exc.key or current
        msg = str(exc).split("] ", 1)[-1]
        if "N*h0" in msg and _key_line(text, key) is None:
            # the grid is the default one; the copy count is what the user set
            key = "bench.N"
        raise ConfigError(msg, key=key, line=_key_line(text, key) if key else None) from None
    except (ValueError, TypeError, NwpcoError) as exc:
        raise ConfigError(str(exc), key=current, line=_key_line(text, current or "")) from None


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return build_config(apply_overrides(data, overrides), text)


def _toml(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """TOML text that parses back to ``cfg``."""
    p = cfg.model.params
    q = cfg.quantile_levels
    sections = {
        "model": {"kind": cfg.model.kind.value, "r": p.r, "gamma": p.gamma, "d": p.d},
        "time": {"T": cfg.T, "t0": cfg.t0, "t": cfg.t, "delta": cfg.delta},
        "pco": {"grid_h": list(cfg.pco.grid_h.values), "grid_ell": list(cfg.pco.grid_ell.values),
                "l2_method": cfg.pco.l2_method, "penalty_method": cfg.pco.penalty_method,
                "resolution": cfg.pco.resolution,
                "pen_time_subsample": cfg.pco.pen_time_subsample,
                "lattice_size": cfg.pco.lattice_size},
        "bench": {"N": cfg.N, "M": cfg.M, "repetitions": cfg.repetitions, "seed": cfg.seed,
                  "quantile_x": [q.x_lo, q.x_hi], "quantile_y": [q.y_lo, q.y_hi]},
    }
    if cfg.pco.l2_domain is not None:
        sections["pco"]["l2_domain"] = list(cfg.pco.l2_domain)
    out = []
    for name, body in sections.items():
        out.append(f"[{name}]")
        out += [f"{k} = {_toml(v)}" for k, v in body.items()]
        out.append("")
    return "\n".join(out)
