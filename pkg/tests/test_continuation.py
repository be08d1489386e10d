import math

import numpy as np
import pytest

from age_model import build_model
from continuation import (
    DISEASE_FREE,
    ENDEMIC,
    FOLD,
    HOPF,
    STABLE,
    TRANSCRITICAL,
    UNSTABLE,
    Bifurcation,
    Branch,
    BranchPoint,
    _match,
    alpha_grid,
    arclength_fill,
    classify_equilibrium,
    detect_fold,
    detect_hopf,
    detect_transcritical,
    sweep,
    trace_diagram,
)
from equilibria import endemic_levels, eval_phi, find_endemic
from errors import ConfigError
from presets import build_preset


def _pt(alpha, w, status=STABLE, kind=ENDEMIC, root=-1.0 + 0j):
    return BranchPoint(alpha, w, kind, root, status)


def test_alpha_grid():
    assert np.allclose(alpha_grid(0.0, 1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(alpha_grid(0.0, 1.0, 0.3), [0.0, 0.3, 0.6, 0.9, 1.0])


@pytest.mark.parametrize("lo, hi, step, key", [
    (1.0, 1.0, 0.1, "branch.alpha_lo"),
    (-1.0, 1.0, 0.1, "branch.alpha_lo"),
    (0.0, 1.0, 0.0, "branch.step"),
    (0.0, math.inf, 0.1, "branch.alpha_lo"),
])
def test_alpha_grid_rejects_bad_ranges(lo, hi, step, key):
    with pytest.raises(ConfigError) as info:
        alpha_grid(lo, hi, step)
    assert info.value.key_path == key


def test_match_keeps_order_and_minimizes_shift():
    prev = [_pt(1.0, 1.0), _pt(1.0, 5.0)]
    new = [_pt(1.1, 1.1), _pt(1.1, 4.9)]
    assert _match(prev, new, 1e-6) == [(0, 0), (1, 1)]
    # one level vanished: the survivor links to its nearest predecessor
    assert _match(prev, [_pt(1.1, 4.8)], 1e-6) == [(1, 0)]
    assert _match([], new, 1e-6) == []


def test_branch_events_filter():
    branch = Branch(ENDEMIC, [_pt(0.0, 1.0)],
                    [Bifurcation(FOLD, 1.0, 2.0), Bifurcation(HOPF, 0.5, 1.0, omega=3.0)])
    assert [b.alpha for b in branch.events(HOPF)] == [0.5]


def test_transcritical_for_cap_34(x34):
    alpha = detect_transcritical(x34, 18.0, 24.0)
    assert alpha == pytest.approx(20.1143, abs=0.05)
    assert detect_transcritical(x34, 22.0, 24.0) is None


def test_arclength_fill_stays_on_curve(choices):
    lo = min(endemic_levels(choices, 10.0))
    hi = min(endemic_levels(choices, 10.05))
    pts = arclength_fill(choices, (10.0, lo), (10.05, hi), 0.005, max(abs(hi - lo), 1e-3) / 10.0)
    assert pts
    for alpha, w in pts:
        assert eval_phi(choices, alpha, w) == pytest.approx(1.0, abs=1e-9)
        assert 10.0 - 1e-3 <= alpha <= 10.05 + 1e-3


def test_detect_hopf_needs_two_points(choices):
    with pytest.raises(ValueError):
        detect_hopf(choices, Branch(ENDEMIC, [_pt(1.0, 1.0)]))


def test_detect_hopf_skips_transcritical_exchange(x34):
    # DFE stability change carried by R0e crossing 1 is not a Hopf point
    below = BranchPoint(19.0, 0.0, DISEASE_FREE, 0.3 + 0j, UNSTABLE, R0e=1.1)
    above = BranchPoint(21.0, 0.0, DISEASE_FREE, -0.3 + 0j, STABLE, R0e=0.9)
    assert detect_hopf(x34, Branch(DISEASE_FREE, [below, above])) == []


@pytest.mark.slow
def test_sweep_is_independent_of_thread_count(choices):
    alphas = [9.0, 10.0, 11.0]
    one = sweep(choices, alphas, threads=1)
    three = sweep(choices, alphas, threads=3)
    for a, b in zip(one, three):
        assert a == b


@pytest.mark.slow
def test_diagram_for_cap_34(x34):
    branches = trace_diagram(x34, 18.0, 25.0, 0.1, threads=4)
    dfe = branches[0]
    assert dfe.kind == DISEASE_FREE
    crossings = dfe.events(TRANSCRITICAL)
    assert len(crossings) == 1
    assert crossings[0].alpha == pytest.approx(20.1143, abs=0.05)
    by_alpha = {round(p.alpha, 6): p for p in dfe.points}
    assert by_alpha[24.0].status == STABLE
    assert by_alpha[19.0].status == UNSTABLE
    assert len(branches) >= 2


@pytest.mark.slow
def test_hopf_point_for_choices2():
    model = build_model(build_preset("choices2"))
    branches = trace_diagram(model, 0.3, 1.0, 0.02, threads=4)
    hopf = [b for branch in branches[1:] for b in branch.events(HOPF)]
    assert len(hopf) == 1
    # where this characteristic function crosses; the published figure puts it at 0.6743
    assert hopf[0].alpha == pytest.approx(0.383, abs=0.01)
    assert hopf[0].omega == pytest.approx(9.5, abs=0.5)
    endemic = [p for branch in branches[1:] for p in branch.points]
    assert all(p.status == UNSTABLE for p in endemic if p.alpha < hopf[0].alpha - 0.02)
    assert all(p.status == STABLE for p in endemic if p.alpha > hopf[0].alpha + 0.02)
    eq = find_endemic(model, 0.6743)[-1]
    assert classify_equilibrium(model, eq).rightmost.real == pytest.approx(-0.246, abs=0.01)


@pytest.mark.slow
def test_closed_diagram_for_choices3():
    model = build_model(build_preset("choices3"))
    branches = trace_diagram(model, 0.0, 10.0, 0.05, threads=4)
    closed = [b for b in branches[1:] if b.closed]
    assert closed
    loop = closed[0]
    assert len(loop.events(FOLD)) == 2
    statuses = [p.status for p in loop.points]
    assert STABLE in statuses and UNSTABLE in statuses


@pytest.mark.slow
def test_endemic_pair_stability_at_21(x34):
    lower, upper = find_endemic(x34, 21.0)
    assert classify_equilibrium(x34, lower).status == UNSTABLE
    assert classify_equilibrium(x34, upper).status == STABLE


def test_monotone_branch_has_no_fold(choices):
    branch = Branch(ENDEMIC, [_pt(9.0, 1.0), _pt(9.5, 1.2), _pt(10.0, 1.5)])
    assert detect_fold(choices, branch) == []
