import pytest

from age_model import build_model
from errors import ConfigError
from presets import build_preset, plus_fields, preset_fields, preset_names

NAMED = ["choices", "choices-stab", "choices-stab2", "choices2", "choices3", "plus(34)"]


def test_preset_names_lists_plus_family():
    names = preset_names()
    assert "plus(X)" in names
    assert set(NAMED[:-1]) <= set(names)


@pytest.mark.parametrize("name", NAMED)
def test_every_preset_is_normalized(name):
    model = build_model(build_preset(name))
    assert abs(model.normalization - 1.0) < 1e-8
    assert model.r0d * model.phi(model.q_dstar) == pytest.approx(1.0, abs=1e-10)


def test_plus_family():
    fields_ = preset_fields("plus(34)")
    assert fields_["r0d"] == pytest.approx(51.0)
    assert fields_["phi"] == "max(1 - x/34, 0)"
    assert preset_fields("plus( 2.5 )")["r0d"] == pytest.approx(3.75)
    with pytest.raises(ConfigError):
        plus_fields(0.0)


def test_preset_fields_are_copies():
    fields_ = preset_fields("choices")
    fields_["alpha"] = 99.0
    assert preset_fields("choices")["alpha"] == 10.0


def test_overrides_and_phi_cap():
    spec = build_preset("choices", alpha=3.0, phi_cap=20.0)
    assert spec.alpha == 3.0
    assert spec.phi.cap == 20.0


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_fields("choices9")
