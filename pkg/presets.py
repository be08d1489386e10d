# presets.py — named parameter sets selectable by name (--preset / `preset = ...`)

import re
from typing import Any, Dict, List, Optional

from age_model import ModelSpec, NumericOptions
from errors import ConfigError

# K ≡ 1 on [0, π/6] ∪ [π/3, π/2], 0 in between
K_CHOICES = "piecewise{[0, pi/6): 1; [pi/6, pi/3): 0; [pi/3, pi/2]: 1}"

CHOICES: Dict[str, Any] = {
    "a_dagger": "pi/2",
    "r0d": 27.0,
    "alpha": 10.0,
    "beta": "1",
    "mu": "tan(a)",
    "r": "1",
    "q": "1",
    "k": K_CHOICES,
    "phi": "max(1 - x/18, 0)",
}

CHOICES_STAB: Dict[str, Any] = {
    **CHOICES,
    "beta": "1.5*sin(2*a)",
    "r": "1.5*sin(2*a)",
}

CHOICES_STAB2: Dict[str, Any] = {
    **CHOICES_STAB,
    "alpha": 0.0,
    "r0d": 6.0,
    "phi": "max(1 - x/10, 0)",
    "q": "1.5*sin(2*a)",
    "k": "a",
}

CHOICES2: Dict[str, Any] = {
    **CHOICES,
    "alpha": 1.0,
    "beta": "1.5*sin(2*a)",
    "q": "sin(2*a)",
    "r": "1.5*sin(2*a)",
}

# β, μ, K and a† carry over from choices2
CHOICES3: Dict[str, Any] = {
    **CHOICES2,
    "q": "10*a",
    "r": "0.6*sin(2*a)",
    "r0d": 1.35,
    "phi": "max(1 - x/15, 0)",
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "choices": CHOICES,
    "choices-stab": CHOICES_STAB,
    "choices-stab2": CHOICES_STAB2,
    "choices2": CHOICES2,
    "choices3": CHOICES3,
}

_PLUS = re.compile(r"^plus\(\s*([0-9]+(?:\.[0-9]*)?(?:[eE][+-]?\d+)?)\s*\)$")


def plus_fields(cap: float) -> Dict[str, Any]:
    """choices with R0d = 3X/2 and Φ capped at X."""
    if not cap > 0:
        raise ConfigError(f"plus(X) needs X > 0, got {cap!r}", key_path="preset")
    return {**CHOICES, "r0d": 1.5 * cap, "phi": f"max(1 - x/{cap:g}, 0)"}


def preset_names() -> List[str]:
    return sorted(PRESETS) + ["plus(X)"]


def preset_fields(name: str) -> Dict[str, Any]:
    """Model fields of a named preset (a fresh dict, safe to modify)."""
    key = (name or "").strip()
    if key in PRESETS:
        return dict(PRESETS[key])
    m = _PLUS.match(key)
    if m:
        return plus_fields(float(m.group(1)))
    raise ConfigError(f"unknown preset '{name}' (known: {', '.join(preset_names())})", key_path="preset")


def build_preset(name: str, numerics: Optional[NumericOptions] = None, **overrides: Any) -> ModelSpec:
    fields_ = preset_fields(name)
    fields_.update(overrides)
    if "phi_cap" in overrides:
        fields_.pop("phi", None)
    return ModelSpec.from_strings(fields_, numerics=numerics, name=name)
