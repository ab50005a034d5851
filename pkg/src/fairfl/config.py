"""YAML experiment configuration.

Every key is optional; omitted keys take the system-parameter defaults.
Quantities that are conventionally quoted in dB are read in dB and
converted to linear units here, once. See README.md for the schema.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Callable

import yaml

from .channel import RadioConstants, db_to_linear, dbm_to_watt
from .engine import DeviceDefaults, SimulationConfig, TaskSettings
from .privacy import DpParams

log = logging.getLogger(__name__)

DEFAULT_DELAY_BOUND = 0.75  # s


class ConfigError(ValueError):
    """Configuration could not be parsed or failed validation; message names the field."""


def _number(path: str, value: Any) -> float:
    # YAML 1.1 reads "1e-5" as a string, so accept numeric strings too
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"{path}: must be finite")
    return out


def _integer(path: str, value: Any) -> int:
    x = _number(path, value)
    if x != int(x):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return int(x)


def _text(path: str, value: Any) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _pair(path: str, value: Any) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected [low, high]")
    return (_number(f"{path}[0]", value[0]), _number(f"{path}[1]", value[1]))


def _numbers(path: str, value: Any) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of numbers")
    return tuple(_number(f"{path}[{i}]", v) for i, v in enumerate(value))


# file key -> (constructor argument, converter)
_Field = tuple[str, Callable[[str, Any], Any]]

_TOP: dict[str, _Field] = {
    "scheme": ("scheme", _text),
    "num_devices": ("num_devices", _integer),
    "num_rounds": ("num_rounds", _integer),
    "master_seed": ("master_seed", _integer),
    "delay_bound_s": ("delay_bound", _number),
    "payload_bits": ("payload_bits", _number),
    "varrho": ("varrho", _number),
    "fit_window": ("fit_window", _integer),
    "deviation_source": ("deviation_source", _text),
}

_DP: dict[str, _Field] = {
    "epsilon": ("epsilon", _number),
    "delta": ("delta", _number),
    "theta": ("theta", _number),
    "sensitivity": ("sensitivity", _number),
}

_RADIO: dict[str, _Field] = {
    "path_loss_exponent": ("path_loss_exponent", _number),
    "center_frequency_hz": ("center_frequency", _number),
    "modulation_gap_db": ("modulation_gap", lambda p, v: db_to_linear(_number(p, v))),
    "noise_density_dbm_hz": ("noise_density", lambda p, v: dbm_to_watt(_number(p, v))),
    "amplifier_efficiency": ("amplifier_efficiency", _number),
    "rayleigh_scale": ("rayleigh_scale", _number),
}

_DEVICES: dict[str, _Field] = {
    "dataset_size": ("dataset_size", _integer),
    "time_per_sample_s": ("time_per_sample", _number),
    "compute_power_w": ("compute_power", _number),
    "circuit_power_w": ("circuit_power", _number),
    "bandwidth_hz": ("bandwidth", _number),
    "p_max_dbw": ("p_max", lambda p, v: db_to_linear(_number(p, v))),
    "j_min": ("j_min", _integer),
    "j_max_cap": ("j_max_cap", _integer),
}

_TASK: dict[str, _Field] = {
    "loss_kind": ("loss_kind", _text),
    "features": ("features", _integer),
    "regularization": ("regularization", _number),
    "step_scale": ("step_scale", _number),
    "xi": ("xi", _number),
    "target_phi": ("target_phi", _number),
    "skew": ("skew", _number),
    "margin_noise": ("margin_noise", _number),
}

_PLACEMENT: dict[str, _Field] = {
    "policy": ("distance_policy", _text),
    "range_m": ("distance_range", _pair),
    "distances_m": ("distances", _numbers),
}

_SECTIONS = {"dp": _DP, "radio": _RADIO, "devices": _DEVICES, "task": _TASK,
             "placement": _PLACEMENT}


def _convert(section: str, raw: Any, fields: dict[str, _Field]) -> dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping")
    out = {}
    for key, value in raw.items():
        path = f"{section}.{key}" if section else str(key)
        if key not in fields:
            raise ConfigError(f"{path}: unknown key")
        name, conv = fields[key]
        out[name] = conv(path, value)
    return out


def _build(section: str, factory, kwargs: dict[str, Any]):
    try:
        return factory(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{exc}" if section else str(exc)) from None


def config_from_mapping(doc: dict | None) -> SimulationConfig:
    """Validated config from an already-parsed mapping."""
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    top = {k: v for k, v in doc.items() if k not in _SECTIONS}
    kwargs = _convert("", top, _TOP)
    if "delay_bound" not in kwargs:
        log.info("delay_bound_s not set; using %.2f s because the tabulated 0.75 ms cannot "
                 "carry the payload at maximum power", DEFAULT_DELAY_BOUND)
        kwargs["delay_bound"] = DEFAULT_DELAY_BOUND
    kwargs["dp"] = _build("dp", DpParams, _convert("dp", doc.get("dp"), _DP))
    kwargs["radio"] = _build("radio", RadioConstants, _convert("radio", doc.get("radio"), _RADIO))
    kwargs["devices"] = _build("devices", DeviceDefaults,
                               _convert("devices", doc.get("devices"), _DEVICES))
    kwargs["task"] = _build("task", TaskSettings, _convert("task", doc.get("task"), _TASK))
    kwargs.update(_convert("placement", doc.get("placement"), _PLACEMENT))
    return _build("", SimulationConfig, kwargs)


def load_config(path: str | Path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    return config_from_mapping(doc)
