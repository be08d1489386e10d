import os

import pytest

from errors import ConfigError, ExpressionError
from run_config import (
    CONFIG_DIR,
    dump_config,
    get_config_path,
    load_config_file,
    load_run_config,
    parse_range,
    resolve_config,
)

TOML_TEXT = """
name = "x34-demo"
preset = "plus(34)"

[model]
alpha = 21.0

[numerics]
quad_panels = 48

[branch]
alpha_lo = 18.0
alpha_hi = 25.0
step = 0.1
"""


def test_preset_supplies_every_model_field():
    cfg = resolve_config({}, preset="choices")
    assert cfg.name == "choices"
    assert cfg.model["r0d"] == 27.0
    spec = cfg.build_spec()
    assert spec.alpha == 10.0 and spec.phi.cap == 18.0


def test_flags_win_over_file():
    raw = {"preset": "choices", "model": {"alpha": 3.0}}
    assert resolve_config(raw).build_spec().alpha == 3.0
    cfg = resolve_config(raw, preset="choices2", alpha=0.5)
    assert cfg.model["q"] == "sin(2*a)"
    assert cfg.build_spec().alpha == 0.5


def test_phi_cap_replaces_preset_phi():
    cfg = resolve_config({"preset": "choices", "model": {"phi_cap": 30}})
    assert "phi" not in cfg.model
    assert cfg.build_spec().phi.cap == 30.0
    assert cfg.build_spec(phi="max(1 - x/12, 0)").phi.cap == 12.0


@pytest.mark.parametrize("raw, key", [
    ({"preset": "choices", "modle": {}}, "modle"),
    ({"preset": "choices", "model": {"gamma": 1}}, "model.gamma"),
    ({"preset": "choices", "branch": {"alpha_max": 3}}, "branch.alpha_max"),
    ({"preset": "choices", "numerics": {"panels": 3}}, "numerics.panels"),
    ({"preset": "choices", "spectrum": [1, 2]}, "spectrum"),
    ({}, "model"),
])
def test_unknown_or_missing_keys(raw, key):
    with pytest.raises(ConfigError) as info:
        resolve_config(raw)
    assert info.value.key_path == key


def test_bad_expression_fails_at_load():
    with pytest.raises(ExpressionError) as info:
        resolve_config({"preset": "choices", "model": {"beta": "1 +"}})
    assert info.value.key_path == "model.beta"


def test_option_casts_and_reports_key():
    cfg = resolve_config({"preset": "choices", "spectrum": {"index": "one"}, "simulate": {"cells": "64"}})
    assert cfg.option("simulate", "cells", 512, int) == 64
    assert cfg.option("simulate", "t_end", 20.0, float) == 20.0
    with pytest.raises(ConfigError, match="spectrum.index"):
        cfg.option("spectrum", "index", 0, int)


def test_toml_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TOML_TEXT, encoding="utf-8")
    cfg = load_run_config(str(path))
    assert cfg.name == "x34-demo"
    assert cfg.model["r0d"] == pytest.approx(51.0)
    assert cfg.numerics.quad_panels == 48
    assert cfg.option("branch", "step") == 0.1


def test_yaml_file_and_parse_errors(tmp_path):
    good = tmp_path / "run.yml"
    good.write_text("preset: choices-stab2\nsimulate:\n  cells: 128\n", encoding="utf-8")
    assert load_run_config(str(good)).option("simulate", "cells") == 128

    bad = tmp_path / "bad.toml"
    bad.write_text("[model\nalpha = 1", encoding="utf-8")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config_file(str(bad))
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(str(tmp_path / "missing.toml"))


def test_dumped_config_reloads_to_same_run(tmp_path):
    cfg = resolve_config({"preset": "plus(34)", "branch": {"step": 0.05}}, alpha=22.0)
    path = tmp_path / "effective.yml"
    dump_config(cfg, str(path))
    again = load_run_config(str(path))
    assert again.to_dict() == cfg.to_dict()
    assert again.build_spec().to_config() == cfg.build_spec().to_config()


def test_bare_names_resolve_under_configs():
    assert get_config_path("choices_x34") == os.path.join(CONFIG_DIR, "choices_x34.toml")
    assert get_config_path("some/where.toml") == "some/where.toml"


def test_parse_range():
    assert parse_range("18:25:0.05", "--alpha-range") == [18.0, 25.0, 0.05]
    for text in ("18:25", "a:b:c", "25:18:0.1", "0:1:0"):
        with pytest.raises(ConfigError):
            parse_range(text, "--alpha-range")
