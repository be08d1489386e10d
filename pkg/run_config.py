# run_config.py — run configuration: file loading, preset resolution, validation, dump

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional

import yaml

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from age_model import MODEL_KEYS, ModelSpec, NumericOptions
from errors import ConfigError
from presets import preset_fields
from run_log import log_step

logger = logging.getLogger(__name__)

# -----------------------------------------
# Paths / Globals
# -----------------------------------------
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_DIR = os.path.join(BASE_DIR, "configs")

SECTION_KEYS: Dict[str, tuple] = {
    "equilibria": ("alphas",),
    "spectrum": ("equilibrium", "index", "zeta_lo", "zeta_hi", "omega_max", "max_roots"),
    "branch": ("alpha_lo", "alpha_hi", "step", "threads", "family"),
    "simulate": ("initial", "index", "perturbation", "s0", "i0", "cells", "t_end", "conv_tol",
                 "record_every"),
    "phi": ("w_max", "points"),
}
TOP_KEYS = ("name", "preset", "model", "numerics") + tuple(SECTION_KEYS)


# -----------------------------------------
# Files
# -----------------------------------------
def get_config_path(name: str) -> str:
    """A path as given, or a bare name looked up under configs/."""
    if os.path.exists(name) or os.path.dirname(name):
        return name
    for candidate in (name, f"{name}.toml", f"{name}.yml", f"{name}.yaml"):
        path = os.path.join(CONFIG_DIR, candidate)
        if os.path.exists(path):
            return path
    return name


def load_config_file(path: str) -> Dict[str, Any]:
    path = get_config_path(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}", key_path="config")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", key_path="config") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a table of sections", key_path="config")
    log_step(f"[CONFIG] loaded {path}")
    return data


# -----------------------------------------
# Resolved configuration
# -----------------------------------------
@dataclass(frozen=True)
class RunConfig:
    name: str
    model: Dict[str, Any]
    numerics: NumericOptions
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.sections.get(name) or {})

    def option(self, section: str, key: str, default: Any = None,
               cast: Optional[Callable[[Any], Any]] = None) -> Any:
        value = self.section(section).get(key, default)
        if value is None or cast is None:
            return value
        try:
            return cast(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {cast.__name__}, got {value!r}", key_path=f"{section}.{key}") from None

    def build_spec(self, **overrides: Any) -> ModelSpec:
        fields_ = dict(self.model)
        if "phi_cap" in overrides:
            fields_.pop("phi", None)
        if "phi" in overrides:
            fields_.pop("phi_cap", None)
        fields_.update(overrides)
        return ModelSpec.from_strings(fields_, numerics=self.numerics, name=self.name)

    def to_dict(self) -> Dict[str, Any]:
        """Effective configuration; loading it back gives the same run."""
        out: Dict[str, Any] = {"name": self.name, "model": dict(self.model),
                               "numerics": self.numerics.to_dict()}
        for key in SECTION_KEYS:
            if self.sections.get(key):
                out[key] = dict(self.sections[key])
        return out


def _table(raw: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = raw.get(key)
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError("expected a table", key_path=key)
    return dict(value)


def resolve_config(raw: Optional[Mapping[str, Any]] = None, preset: Optional[str] = None,
                   alpha: Optional[float] = None) -> RunConfig:
    """Merge preset, [model] keys and command-line overrides (flags win)."""
    raw = raw or {}
    for key in raw:
        if key not in TOP_KEYS:
            raise ConfigError("unknown key", key_path=key)

    model_raw = _table(raw, "model")
    for key in model_raw:
        if key not in MODEL_KEYS:
            raise ConfigError("unknown key", key_path=f"model.{key}")

    preset_name = preset or raw.get("preset")
    fields_: Dict[str, Any] = preset_fields(preset_name) if preset_name else {}
    if "phi_cap" in model_raw:
        fields_.pop("phi", None)
    if "phi" in model_raw:
        fields_.pop("phi_cap", None)
    fields_.update(model_raw)
    if alpha is not None:
        fields_["alpha"] = float(alpha)
    if not fields_:
        raise ConfigError("no model given (use a [model] section or a preset)", key_path="model")

    sections = {}
    for name, allowed in SECTION_KEYS.items():
        table = _table(raw, name)
        for key in table:
            if key not in allowed:
                raise ConfigError("unknown key", key_path=f"{name}.{key}")
        if table:
            sections[name] = table

    name = str(raw.get("name") or preset_name or "custom")
    cfg = RunConfig(name=name, model=fields_, numerics=NumericOptions.from_mapping(_table(raw, "numerics")),
                    sections=sections)
    # fail early on bad expressions, with their key path
    cfg.build_spec()
    return cfg


def load_run_config(path: Optional[str] = None, preset: Optional[str] = None,
                    alpha: Optional[float] = None) -> RunConfig:
    raw = load_config_file(path) if path else {}
    return resolve_config(raw, preset=preset, alpha=alpha)


def dump_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
    log_step(f"[CONFIG] effective configuration written to {path}")


def parse_range(text: str, key_path: str) -> List[float]:
    """'LO:HI:STEP' -> [LO, HI, STEP]."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ConfigError(f"expected LO:HI:STEP, got {text!r}", key_path=key_path)
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"expected numbers in LO:HI:STEP, got {text!r}", key_path=key_path) from None
    if not (lo <= hi and step > 0):
        raise ConfigError(f"need LO <= HI and STEP > 0, got {text!r}", key_path=key_path)
    return [lo, hi, step]
