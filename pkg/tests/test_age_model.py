import math

import numpy as np
import pytest

from age_model import (
    NumericOptions,
    ModelSpec,
    build_model,
    cumulative_contagion,
    demographic_equilibrium,
    survival,
    survival_ratio,
)
from errors import ConfigError, ExpressionError, ModelValidationError
from presets import CHOICES, build_preset


def test_survival_is_cosine_for_tangent_mortality(choices):
    ages = np.array([0.0, 0.3, 0.7, 1.2, 1.5])
    assert np.allclose(survival(choices, ages), np.cos(ages), atol=1e-8)
    assert survival(choices, 0.0) == 1.0
    assert survival(choices, math.pi / 2) == 0.0


def test_survival_ratio(choices):
    assert survival_ratio(choices, 0.2, 0.5) == pytest.approx(math.cos(0.5) / math.cos(0.2), rel=1e-10)
    assert survival_ratio(choices, 1.0, math.pi / 2) == 0.0


def test_cumulative_contagion_of_piecewise_k(choices):
    assert cumulative_contagion(choices, 0.0) == 0.0
    assert cumulative_contagion(choices, math.pi / 4) == pytest.approx(math.pi / 6, abs=1e-12)
    assert cumulative_contagion(choices, math.pi / 2) == pytest.approx(math.pi / 3, abs=1e-12)


def test_demographic_equilibrium(choices):
    q_star, n_star, b_dfe = demographic_equilibrium(choices)
    # 27 (1 - x/18) = 1
    assert q_star == pytest.approx(18.0 * 26.0 / 27.0, rel=1e-12)
    assert b_dfe == pytest.approx(q_star, rel=1e-8)     # ∫rπ = ∫cos = 1
    assert n_star(0.0) == pytest.approx(b_dfe, rel=1e-10)
    assert choices.r0d * choices.phi(b_dfe * choices.int_r_pi) == pytest.approx(1.0, abs=1e-10)


def test_normalization(choices):
    assert abs(choices.normalization - 1.0) < 1e-8


def test_normalization_covers_births_only():
    model = build_model(build_preset("choices", r="2"))
    assert abs(model.normalization - 1.0) < 1e-8
    assert model.int_r_pi == pytest.approx(2.0, rel=1e-8)


def test_tabulated_sample(choices):
    ages, values = choices.n_star.sample(choices.options.tab_points)
    assert ages.size == values.size == 1025
    assert values[0] == pytest.approx(choices.b_dfe, rel=1e-10)
    assert abs(values[-1]) < 1e-8


@pytest.mark.parametrize("override, key_path", [
    ({"r0d": 1.0}, "model.r0d"),
    ({"beta": "2"}, "model.beta"),
    ({"r": "a - 1"}, "model.r"),
    ({"alpha": -1.0}, "model.alpha"),
    ({"k": "piecewise{[0, 1): 1; [1.2, pi/2]: 1}"}, "model.k"),
])
def test_invalid_models_are_rejected(override, key_path):
    with pytest.raises(ModelValidationError) as info:
        build_model(build_preset("choices", **override))
    assert info.value.key_path == key_path


def test_bad_expression_carries_key_path():
    with pytest.raises(ExpressionError) as info:
        build_preset("choices", mu="tan(a")
    assert info.value.key_path == "model.mu"


def test_missing_key():
    fields_ = dict(CHOICES)
    del fields_["q"]
    with pytest.raises(ConfigError, match="model.q"):
        ModelSpec.from_strings(fields_)


def test_numeric_options():
    opts = NumericOptions.from_mapping({"quad_panels": "32", "zeta_lo": -5})
    assert opts.quad_panels == 32 and opts.zeta_lo == -5.0
    with pytest.raises(ConfigError, match="numerics.bogus"):
        NumericOptions.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError):
        NumericOptions(quad_order=1)
    with pytest.raises(ConfigError):
        NumericOptions(zeta_lo=3.0, zeta_hi=2.0)


def test_spec_round_trips_through_config():
    spec = build_preset("choices-stab2")
    again = ModelSpec.from_strings(spec.to_config(), numerics=spec.numerics)
    assert again.to_config() == spec.to_config()
    assert again.phi.cap == 10.0


def test_with_alpha_shares_tables(choices):
    other = choices.with_alpha(3.5)
    assert other.alpha == 3.5 and choices.alpha == 10.0
    assert other.pi is choices.pi
