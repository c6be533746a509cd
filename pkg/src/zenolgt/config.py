"""Run configuration: schema, JSON parsing and per-protocol validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dps import NoiseSpec, ScheduleParams
from .models import ModelSpec

SCHEMA_VERSION = 1
PROTOCOLS = ("dps", "dps_corrected", "continuous", "liouvillian", "master_eq")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field {field_name!r}: {message}")


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    save_trajectories: bool = False
    save_excitations: bool = False
    detail: str = "scalar"


@dataclass(frozen=True)
class RunConfig:
    protocol: str
    model: ModelSpec
    schedule: ScheduleParams | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_trajectories: int = 0
    master_seed: int = 0
    workers: int = 1
    gamma: float | None = None
    dt_int: float | None = None
    t_final: float | None = None
    n_output: int = 200
    gamma_grid: tuple[float, ...] | None = None
    fidelity: float = 1.0
    output: OutputSpec = field(default_factory=OutputSpec)
    stop_on_violation: bool = False
    schema_version: int = SCHEMA_VERSION


def _build(section: str, cls, payload: dict):
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(section, f"unexpected or missing keys ({exc})") from None
    except ValueError as exc:
        raise ConfigError(section, str(exc)) from None


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config document must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    protocol = raw.get("protocol")
    if protocol not in PROTOCOLS:
        raise ConfigError("protocol", f"must be one of {PROTOCOLS}, got {protocol!r}")
    if "model" not in raw:
        raise ConfigError("model", "missing section")
    model = _build("model", ModelSpec, raw["model"])
    schedule = None
    if raw.get("schedule") is not None:
        schedule = _build("schedule", ScheduleParams, raw["schedule"])
    noise = _build("noise", NoiseSpec, raw.get("noise", {}))
    output = _build("output", OutputSpec, raw.get("output", {}))
    if output.detail not in ("none", "scalar", "full"):
        raise ConfigError("output.detail", f"unknown detail {output.detail!r}")

    cfg = RunConfig(
        protocol=protocol,
        model=model,
        schedule=schedule,
        noise=noise,
        n_trajectories=int(raw.get("n_trajectories", 0)),
        master_seed=int(raw.get("master_seed", 0)),
        workers=int(raw.get("workers", 1)),
        gamma=None if raw.get("gamma") is None else float(raw["gamma"]),
        dt_int=None if raw.get("dt_int") is None else float(raw["dt_int"]),
        t_final=None if raw.get("t_final") is None else float(raw["t_final"]),
        n_output=int(raw.get("n_output", 200)),
        gamma_grid=None
        if raw.get("gamma_grid") is None
        else tuple(float(g) for g in raw["gamma_grid"]),
        fidelity=float(raw.get("fidelity", 1.0)),
        output=output,
        stop_on_violation=bool(raw.get("stop_on_violation", False)),
        schema_version=version,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.workers < 1:
        raise ConfigError("workers", f"must be >= 1, got {cfg.workers}")
    if cfg.protocol in ("dps", "dps_corrected", "continuous"):
        if cfg.n_trajectories < 1:
            raise ConfigError(
                "n_trajectories", f"must be >= 1 for {cfg.protocol}, got "
                f"{cfg.n_trajectories}"
            )
    if cfg.protocol in ("dps", "dps_corrected"):
        if cfg.schedule is None:
            raise ConfigError("schedule", f"required for protocol {cfg.protocol}")
        if cfg.protocol == "dps_corrected" and not cfg.schedule.correction_enabled:
            raise ConfigError(
                "schedule.correction_enabled",
                "must be true for protocol dps_corrected",
            )
        if cfg.noise.p_err > 0 and cfg.model.group != "Z2":
            raise ConfigError("noise.p_err", "bit-flip channel requires group Z2")
        if cfg.noise.sigma > 0 and cfg.model.group != "Z2":
            raise ConfigError("noise.sigma", "noisy measurements require group Z2")
    if cfg.protocol == "continuous":
        for name in ("gamma", "dt_int", "t_final"):
            if getattr(cfg, name) is None:
                raise ConfigError(name, "required for protocol continuous")
        if cfg.n_output < 1:
            raise ConfigError("n_output", "must be >= 1")
    if cfg.protocol == "liouvillian":
        if not cfg.gamma_grid:
            raise ConfigError("gamma_grid", "required for protocol liouvillian")
        if any(g < 0 for g in cfg.gamma_grid):
            raise ConfigError("gamma_grid", "rates must be >= 0")
        if not 0.0 < cfg.fidelity <= 1.0:
            raise ConfigError("fidelity", f"must be in (0, 1], got {cfg.fidelity}")
    if cfg.protocol == "master_eq":
        for name in ("gamma", "t_final"):
            if getattr(cfg, name) is None:
                raise ConfigError(name, "required for protocol master_eq")
        if not 0.0 < cfg.fidelity <= 1.0:
            raise ConfigError("fidelity", f"must be in (0, 1], got {cfg.fidelity}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)
    if cfg.gamma_grid is not None:
        out["gamma_grid"] = list(cfg.gamma_grid)
    return out
