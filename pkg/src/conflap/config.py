"""INI run configuration with strict key checking and line-numbered errors."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .optimizer import DEFAULT_SCHEDULE, OptimizerSettings

__all__ = [
    "ConfigError",
    "ManifoldConfig",
    "SolverConfig",
    "OptimizerConfig",
    "VerifyConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "GENERATORS",
]

GENERATORS = ("product", "circle", "nodal", "mesh")


class ConfigError(ValueError):
    """Invalid configuration; the message names the line when known."""


@dataclass
class ManifoldConfig:
    """Which test manifold to build.

    ``product`` uses ``n_circle``, ``n_factor``, ``shift``, ``factor_radius``,
    ``factor_dim``; ``circle`` uses ``radius``, ``nodes``, ``dim``,
    ``potential``; ``nodal`` uses ``nodes``, ``dim``, ``amplitude``; ``mesh``
    reads ``mesh``.
    """

    generator: str = "product"
    n_circle: int = 256
    n_factor: int = 128
    shift: float = -2.0
    factor_radius: float = 0.5
    factor_dim: int = 2
    radius: float = 1.0
    nodes: int = 512
    dim: int = 3
    potential: float = 0.0
    amplitude: float = 1.0
    mesh: str = ""


@dataclass
class SolverConfig:
    solver_tol: float = 1e-8
    cluster_tol: float = 1e-6
    null_tol: float = 1e-8
    method: str = "auto"
    count: int = 6


@dataclass
class OptimizerConfig:
    schedule: tuple = DEFAULT_SCHEDULE
    eul_tol: float = 1e-6
    c_drop_tol: float = 1e-4
    max_iters: int = 400
    backtrack_tol: float = 1e-12
    blowup_factor: float = 10.0
    fit_window: float = 0.1
    window_gain: float = 3.0
    min_step: float = 1e-10
    identity_tol: float = 1e-3
    residual_tol: float = 1e-4
    harmonic_tol: float = 1e-2
    start_amplitude: float = 0.3
    polish_iters: int = 60
    polish_tol: float = 1e-10


@dataclass
class VerifyConfig:
    trials: int = 200
    tol: float = 1e-8
    near_cv_tol: float = 1e-2
    workers: int = 1
    fd_pairs: int = 5
    fd_amplitude: float = 0.3
    key_samples: int = 50
    sweep_tol: float = 1e-8


@dataclass
class RunConfig:
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    seed: int = 0
    out: str = "out"
    source: Optional[str] = None

    def optimizer_settings(self) -> OptimizerSettings:
        o, s = self.optimizer, self.solver
        return OptimizerSettings(eul_tol=o.eul_tol, max_iters=o.max_iters,
                                 backtrack_tol=o.backtrack_tol, c_drop_tol=o.c_drop_tol,
                                 cluster_tol=s.cluster_tol, solver_tol=s.solver_tol,
                                 fit_window=o.fit_window, window_gain=o.window_gain,
                                 min_step=o.min_step, blowup_factor=o.blowup_factor,
                                 method=s.method, identity_tol=o.identity_tol,
                                 residual_tol=o.residual_tol, harmonic_tol=o.harmonic_tol)


_SECTIONS = {"manifold": ManifoldConfig, "solver": SolverConfig,
             "optimizer": OptimizerConfig, "verify": VerifyConfig}
_RUN_KEYS = {"seed": int, "out": str}

# must be > 0
_POSITIVE = {
    "solver": ("solver_tol", "cluster_tol", "null_tol", "count"),
    "optimizer": ("eul_tol", "c_drop_tol", "max_iters", "backtrack_tol", "fit_window",
                  "window_gain", "min_step", "identity_tol", "residual_tol", "harmonic_tol",
                  "polish_iters", "polish_tol"),
    "verify": ("trials", "near_cv_tol", "workers", "fd_pairs", "fd_amplitude",
               "key_samples", "sweep_tol"),
    "manifold": ("n_circle", "n_factor", "factor_radius", "factor_dim", "radius", "nodes", "dim"),
}


def _line_map(text: str) -> dict:
    """``(section, key) -> line number`` and ``(section, None) -> header line``."""
    out = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        mh = re.match(r"^\[([^\]]+)\]", s)
        if mh:
            section = mh.group(1).strip()
            out[(section, None)] = no
            continue
        mk = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if mk and section is not None:
            out.setdefault((section, mk.group(1).strip().lower()), no)
    return out


def _where(src: str, lines: dict, section: str, key: Optional[str]) -> str:
    no = lines.get((section, key))
    return f"{src}:{no}" if no is not None else src


def _convert(kind, raw: str):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        vals = tuple(float(x) for x in re.split(r"[,\s]+", raw.strip()) if x)
        if not vals:
            raise ValueError("empty list")
        return vals
    return raw.strip()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                   default_section="__defaults_unused__")
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        loc = f"{source}:{lineno}" if lineno is not None else source
        raise ConfigError(f"{loc}: {exc.message if hasattr(exc, 'message') else exc}") from None
    lines = _line_map(text)
    cfg = RunConfig(source=source)
    for section in cp.sections():
        if section == "run":
            for key, raw in cp.items(section):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"{_where(source, lines, section, key)}: unknown key "
                                      f"{key!r} in [run]")
                try:
                    setattr(cfg, key, _convert(_RUN_KEYS[key], raw))
                except ValueError:
                    raise ConfigError(f"{_where(source, lines, section, key)}: bad value "
                                      f"{raw!r} for {key}") from None
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"{_where(source, lines, section, None)}: unknown section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in fields(target)}
        defaults = {f.name: getattr(target, f.name) for f in fields(target)}
        for key, raw in cp.items(section):
            loc = _where(source, lines, section, key)
            if key not in types:
                raise ConfigError(f"{loc}: unknown key {key!r} in [{section}]")
            kind = type(defaults[key])
            try:
                setattr(target, key, _convert(kind, raw))
            except ValueError:
                raise ConfigError(f"{loc}: bad value {raw!r} for {key}") from None
    _validate(cfg, source, lines)
    return cfg


def _validate(cfg: RunConfig, source: str, lines: dict) -> None:
    for section, keys in _POSITIVE.items():
        target = getattr(cfg, section)
        for key in keys:
            if not getattr(target, key) > 0:
                raise ConfigError(f"{_where(source, lines, section, key)}: {key} must be positive")
    sched = cfg.optimizer.schedule
    loc = _where(source, lines, "optimizer", "schedule")
    if any(e <= 0 for e in sched):
        raise ConfigError(f"{loc}: schedule entries must be positive")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ConfigError(f"{loc}: schedule must be strictly decreasing")
    if not cfg.optimizer.blowup_factor > 1:
        raise ConfigError(f"{_where(source, lines, 'optimizer', 'blowup_factor')}: "
                          "blowup_factor must exceed 1")
    if cfg.verify.tol < 0:
        raise ConfigError(f"{_where(source, lines, 'verify', 'tol')}: tol must be nonnegative")
    if cfg.manifold.generator not in GENERATORS:
        raise ConfigError(f"{_where(source, lines, 'manifold', 'generator')}: unknown generator "
                          f"{cfg.manifold.generator!r}; expected one of {', '.join(GENERATORS)}")
    if cfg.manifold.generator == "mesh" and not cfg.manifold.mesh:
        raise ConfigError(f"{_where(source, lines, 'manifold', 'generator')}: "
                          "generator = mesh needs a mesh path")
    if cfg.solver.method not in ("auto", "dense", "sparse"):
        raise ConfigError(f"{_where(source, lines, 'solver', 'method')}: unknown method "
                          f"{cfg.solver.method!r}")


def load_config(path) -> RunConfig:
    """Read and validate an INI file; relative mesh paths resolve against its folder."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
    cfg = parse_config(text, source=str(p))
    if cfg.manifold.mesh and not Path(cfg.manifold.mesh).is_absolute():
        cfg.manifold.mesh = str(p.parent / cfg.manifold.mesh)
    return cfg
