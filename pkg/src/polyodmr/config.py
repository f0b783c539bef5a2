"""Run configuration: JSON or TOML file to a validated ``RunConfig``.

Every section is optional and falls back to the defaults of the owning module.
Unknown keys and bad values are rejected with the dotted key path.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from dataclasses import field as _field
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_BETA, DEFAULT_DRIVE_MT, LAB_Y
from .ensemble import EnsembleSpec
from .errors import InvalidInputError
from .spin import SpinParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV_VAR = "POLYODMR_CONFIG"
MODES = ("fid", "cw")
WINDOWS = ("hann", "none")
SHAPES = ("lorentzian", "gaussian")


class ConfigError(InvalidInputError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class FieldConfig:
    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz])


@dataclass(frozen=True)
class DriveConfig:
    b_mw_mt: float = DEFAULT_DRIVE_MT
    omega_start_mhz: float = 3000.0
    omega_stop_mhz: float = 4000.0
    omega_step_mhz: float = 1.0
    omega_list_mhz: tuple | None = None
    axis: tuple = LAB_Y

    def omega_grid(self) -> np.ndarray:
        if self.omega_list_mhz is not None:
            return np.asarray(self.omega_list_mhz, dtype=float)
        n = int(math.floor((self.omega_stop_mhz - self.omega_start_mhz) / self.omega_step_mhz + 1e-9))
        return self.omega_start_mhz + self.omega_step_mhz * np.arange(n + 1)

    @property
    def window(self) -> tuple[float, float]:
        g = self.omega_grid()
        return float(g[0]), float(g[-1])


@dataclass(frozen=True)
class SimulationConfig:
    mode: str = "fid"
    t_max_us: float = 1.0
    dt_us: float | None = None
    window: str = "hann"
    zero_pad: int = 4
    settle_time_us: float | None = None
    avg_window_us: float = 1.0
    beta_pl: float = DEFAULT_BETA
    n_peaks: int = 2
    fit_shape: str = "lorentzian"


@dataclass(frozen=True)
class CalibrationConfig:
    b_max_mt: float = 4.0
    b_step_mt: float = 0.5
    theta_step_deg: float = 15.0
    phi_step_deg: float = 45.0
    band_mhz: float = 400.0
    excitation: str = "xy"


@dataclass(frozen=True)
class InversionConfig:
    max_residual_mhz: float = 5.0
    azimuth_tol_mhz: float = 2.0


@dataclass(frozen=True)
class OutputConfig:
    spectrum: str = "spectrum.csv"
    peaks: str = "peaks.json"
    manifest: str = "manifest.json"
    report: str = "report.json"
    table: str = "calibration.json"


@dataclass(frozen=True)
class RunConfig:
    spin: SpinParams = _field(default_factory=SpinParams)
    ensemble: EnsembleSpec = _field(default_factory=EnsembleSpec)
    field: FieldConfig = _field(default_factory=FieldConfig)
    drive: DriveConfig = _field(default_factory=DriveConfig)
    simulation: SimulationConfig = _field(default_factory=SimulationConfig)
    calibration: CalibrationConfig = _field(default_factory=CalibrationConfig)
    inversion: InversionConfig = _field(default_factory=InversionConfig)
    outputs: OutputConfig = _field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def with_seed(self, seed: int) -> RunConfig:
        try:
            return replace(self, ensemble=replace(self.ensemble, seed=int(seed)))
        except InvalidInputError as exc:
            raise ConfigError("ensemble.seed", str(exc)) from None


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_CLASSES = {
    "spin": SpinParams, "ensemble": EnsembleSpec, "field": FieldConfig, "drive": DriveConfig,
    "simulation": SimulationConfig, "calibration": CalibrationConfig, "inversion": InversionConfig,
    "outputs": OutputConfig,
}
_INT_KEYS = {"ensemble.n_random", "ensemble.n_aligned", "ensemble.seed", "simulation.zero_pad",
             "simulation.n_peaks"}
_STR_KEYS = {"ensemble.aligned_azimuth", "simulation.mode", "simulation.window", "simulation.fit_shape",
             "calibration.excitation"}
_OPTIONAL_KEYS = {"simulation.dt_us", "simulation.settle_time_us", "drive.omega_list_mhz"}
_VECTOR_KEYS = {"drive.omega_list_mhz": None, "drive.axis": 3}


def _coerce(key: str, value):
    if value is None:
        if key in _OPTIONAL_KEYS:
            return None
        raise ConfigError(key, "may not be null")
    if key.startswith("outputs.") or key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(key, "must be a string")
        return value
    if key in _VECTOR_KEYS:
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(key, "must be a non-empty list of numbers")
        n = _VECTOR_KEYS[key]
        if n is not None and len(value) != n:
            raise ConfigError(key, f"must have {n} entries")
        return tuple(_coerce(f"{key}[{i}]", v) if not isinstance(v, bool) else _bad(key) for i, v in enumerate(value))
    if isinstance(value, bool):
        _bad(key)
    if key in _INT_KEYS:
        if not isinstance(value, int):
            raise ConfigError(key, "must be an integer")
        return value
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(key, "must be a finite number")
    return float(value)


def _bad(key):
    raise ConfigError(key, "must be a number, not a boolean")


def _check_section(name: str, obj) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{name}.{key}", msg)

    if name == "drive":
        need(obj.b_mw_mt >= 0, "b_mw_mt", "must be >= 0")
        need(np.linalg.norm(obj.axis) > 0, "axis", "must be a non-zero vector")
        if obj.omega_list_mhz is not None:
            g = np.asarray(obj.omega_list_mhz)
            need(np.all(g > 0) and np.all(np.diff(g) > 0), "omega_list_mhz", "must be positive and strictly increasing")
        else:
            need(obj.omega_start_mhz > 0, "omega_start_mhz", "must be > 0")
            need(obj.omega_step_mhz > 0, "omega_step_mhz", "must be > 0")
            need(obj.omega_stop_mhz > obj.omega_start_mhz, "omega_stop_mhz", "must exceed omega_start_mhz")
    elif name == "simulation":
        need(obj.mode in MODES, "mode", f"must be one of {MODES}")
        need(obj.t_max_us > 0, "t_max_us", "must be > 0")
        need(obj.dt_us is None or obj.dt_us > 0, "dt_us", "must be > 0")
        need(obj.window in WINDOWS, "window", f"must be one of {WINDOWS}")
        need(obj.zero_pad >= 1, "zero_pad", "must be >= 1")
        need(obj.settle_time_us is None or obj.settle_time_us > 0, "settle_time_us", "must be > 0")
        need(obj.avg_window_us > 0, "avg_window_us", "must be > 0")
        need(obj.beta_pl >= 0, "beta_pl", "must be >= 0")
        need(1 <= obj.n_peaks <= 4, "n_peaks", "must be in 1..4")
        need(obj.fit_shape in SHAPES, "fit_shape", f"must be one of {SHAPES}")
    elif name == "calibration":
        for k in ("b_max_mt", "b_step_mt", "theta_step_deg", "phi_step_deg", "band_mhz"):
            need(getattr(obj, k) > 0, k, "must be > 0")
        need(obj.b_step_mt <= obj.b_max_mt, "b_step_mt", "must not exceed b_max_mt")
        need(obj.excitation in ("y", "xy"), "excitation", "must be 'y' or 'xy'")
    elif name == "inversion":
        need(obj.max_residual_mhz > 0, "max_residual_mhz", "must be > 0")
        need(obj.azimuth_tol_mhz >= 0, "azimuth_tol_mhz", "must be >= 0")


def config_from_mapping(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    sections = {}
    for name, body in data.items():
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(name, "must be a table/object")
        cls = _CLASSES[name]
        allowed = {f.name for f in fields(cls)} - {"uncertainties_ghz"}
        kwargs = {}
        for key, value in body.items():
            if key not in allowed:
                raise ConfigError(f"{name}.{key}", "unknown key")
            kwargs[key] = _coerce(f"{name}.{key}", value)
        try:
            obj = cls(**kwargs)
        except InvalidInputError as exc:
            # module validators name the offending field first
            msg = str(exc)
            bad = next((k for k in kwargs if msg.startswith(k)), None) or next(iter(kwargs), "?")
            raise ConfigError(f"{name}.{bad}", msg) from None
        _check_section(name, obj)
        sections[name] = obj
    return RunConfig(**sections)


def parse_config(path=None) -> RunConfig:
    """Load a config file; ``None`` falls back to $POLYODMR_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError("<file>", f"config file not found: {p}")
    raw = p.read_bytes()
    if not raw.strip():
        return RunConfig()
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {p.name}: {exc}") from None
    return config_from_mapping(data)
