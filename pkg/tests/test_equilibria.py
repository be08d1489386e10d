import math

import numpy as np
import pytest
from scipy import integrate

from age_model import build_model
from equilibria import (
    DISEASE_FREE,
    ENDEMIC,
    check_monotone_ratio_condition,
    check_uniqueness_condition,
    disease_free_point,
    epidemic_reproduction,
    epidemic_reproduction_double_integral,
    eval_FGH,
    eval_phi,
    find_endemic,
    phi_curve,
    reconstruct_equilibrium,
)
from errors import NumericalError
from presets import build_preset


@pytest.fixture(scope="module")
def choices_at_10(choices):
    return find_endemic(choices, 10.0)


ALL_PRESETS = ["choices", "choices-stab", "choices-stab2", "choices2", "choices3", "plus(34)"]


@pytest.mark.parametrize("name", ALL_PRESETS)
@pytest.mark.parametrize("alpha", [0.0, 1.0, 10.0, 24.0])
def test_F_identities(name, alpha):
    model = build_model(build_preset(name))
    assert abs(model.grid.integrate(model.beta * model.pi) - 1.0) < 1e-8
    F, _, _ = eval_FGH(model, alpha, 0.0)
    assert F == pytest.approx(1.0, abs=1e-8)
    for W in (0.0, 1.0, 5.0, 50.0):
        F, _, _ = eval_FGH(model, 0.0, W)
        assert F == pytest.approx(1.0, abs=1e-8)


def test_two_endemic_states_at_alpha_10(choices, choices_at_10):
    # backward bifurcation: both states exist just below the epidemic threshold
    assert len(choices_at_10) == 2
    assert choices_at_10[0].W_star < choices_at_10[1].W_star
    assert epidemic_reproduction(choices, 10.0) == pytest.approx(0.99642, abs=5e-4)
    for eq in choices_at_10:
        assert eq.kind == ENDEMIC
        assert eq.R0e < 1.0
        assert eval_phi(choices, 10.0, eq.W_star) == pytest.approx(1.0, abs=1e-9)
        _, G, H = eval_FGH(choices, 10.0, eq.W_star)
        assert eq.B_star == pytest.approx(1.0 / H, rel=1e-12)
        assert eq.Q_star == pytest.approx(G / H, rel=1e-12)
        assert np.min(eq.I_profile.values) > -1e-12


def test_profiles_reproduce_force_of_infection(choices, choices_at_10):
    for eq in choices_at_10:
        W = choices.grid.integrate(choices.q * eq.I_profile.values)
        assert W == pytest.approx(eq.W_star, rel=1e-8)


def test_disease_free_point(choices):
    dfe = disease_free_point(choices, 10.0)
    assert dfe.kind == DISEASE_FREE
    assert dfe.W_star == 0.0
    assert dfe.B_star == pytest.approx(choices.b_dfe)
    assert np.all(dfe.I_profile.values == 0.0)


@pytest.mark.parametrize("alpha", [0.0, 10.0, 24.0])
def test_reproduction_ratio_forms_agree(choices, alpha):
    r0e = epidemic_reproduction(choices, alpha)
    assert r0e == pytest.approx(epidemic_reproduction_double_integral(choices, alpha), rel=1e-8)


def test_no_contagion_means_no_epidemic():
    model = build_model(build_preset("choices", k="0"))
    dfe = disease_free_point(model, 5.0)
    assert dfe.R0e == 0.0
    assert find_endemic(model, 5.0) == []


def test_endemic_level_at_zero_mortality(stab2):
    points = find_endemic(stab2, 0.0)
    assert len(points) == 1
    W0 = points[0].W_star
    assert W0 == pytest.approx(5.04512, abs=5e-4)
    assert eval_FGH(stab2, 0.0, W0)[2] == pytest.approx(0.12, abs=1e-6)


def test_phi_curve_matches_pointwise(choices):
    ws = np.array([0.0, 0.5, 3.0, 12.0])
    curve = phi_curve(choices, 10.0, ws)
    assert np.allclose(curve, [eval_phi(choices, 10.0, w) for w in ws], rtol=1e-13)


def test_phi_against_dense_trapezoid_oracle(stab2):
    a = np.linspace(0.0, math.pi / 2, 20001)
    shape = 1.5 * np.sin(2 * a) * np.cos(a)    # β π = r π = q π
    rng = np.random.default_rng(7)
    for alpha, W in zip(rng.uniform(0.0, 3.0, 10), rng.uniform(0.0, 20.0, 10)):
        decay = np.exp(-W * a * a / 2)
        J = np.exp(-alpha * a) * integrate.cumulative_trapezoid(a * decay * np.exp(alpha * a), a, initial=0.0)
        F = integrate.trapezoid(shape * (decay + W * J), a)
        H = integrate.trapezoid(shape * J, a)
        oracle = 6.0 * max(1.0 - F / H / 10.0, 0.0) * F
        assert eval_phi(stab2, alpha, W) == pytest.approx(oracle, abs=1e-6)


def test_reconstruct_rejects_non_levels(choices):
    with pytest.raises(NumericalError):
        reconstruct_equilibrium(choices, 10.0, 0.123)


def test_negative_force_of_infection_rejected(choices):
    with pytest.raises(ValueError):
        eval_FGH(choices, 1.0, -1.0)


def test_uniqueness_conditions(choices, stab2):
    assert check_monotone_ratio_condition(stab2)
    assert check_uniqueness_condition(stab2, 0.0).holds
    assert not check_monotone_ratio_condition(choices)
    with pytest.raises(ValueError):
        check_uniqueness_condition(stab2, 0.0, grid_n=1)


def test_single_endemic_state_without_disease_deaths():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(60):
        cap, q_scale, k_scale = rng.uniform(8.0, 40.0), rng.uniform(0.3, 2.0), rng.uniform(0.5, 2.0)
        k = f"piecewise{{[0, pi/6): {k_scale:.4f}; [pi/6, pi/3): 0; [pi/3, pi/2]: {k_scale:.4f}}}"
        spec = build_preset(f"plus({cap:.3f})", alpha=0.0, q=f"{q_scale:.4f}", k=k)
        model = build_model(spec)
        if epidemic_reproduction(model, 0.0) <= 1.0:
            continue
        assert len(find_endemic(model, 0.0)) == 1, (cap, q_scale, k_scale)
        checked += 1
        if checked == 20:
            break
    assert checked == 20
