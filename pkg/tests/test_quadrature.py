import math

import numpy as np
import pytest

from quadrature import PanelGrid, panel_edges, sum_by_owner


@pytest.fixture(scope="module")
def grid():
    return PanelGrid.build(math.pi, breaks=(1.0,), panels=16, order=8)


def test_breakpoints_are_panel_edges():
    edges = panel_edges(math.pi / 2, breaks=(math.pi / 6, math.pi / 3, 5.0), panels=12)
    assert edges[0] == 0.0 and edges[-1] == math.pi / 2
    for b in (math.pi / 6, math.pi / 3):
        assert np.min(np.abs(edges - b)) < 1e-15
    assert np.all(np.diff(edges) > 0)


def test_integrate_and_cumulative(grid):
    x = grid.nodes
    assert grid.integrate(np.sin(x)) == pytest.approx(2.0, abs=1e-13)
    assert np.allclose(grid.cumulative(np.cos(x)), np.sin(x), atol=1e-13)
    assert np.allclose(grid.tail(np.sin(x)), 1.0 + np.cos(x), atol=1e-13)


def test_cumulative_batches_over_leading_axes(grid):
    x = grid.nodes
    batch = np.stack([np.cos(x), 2.0 * np.cos(x)])
    out = grid.cumulative(batch)
    assert out.shape == batch.shape
    assert np.allclose(out[1], 2.0 * np.sin(x), atol=1e-13)


@pytest.mark.parametrize("alpha", [0.0, 0.7, 5.0])
def test_decaying_integrals(grid, alpha):
    x = grid.nodes
    ones = np.ones_like(x)
    if alpha == 0.0:
        head, tail = x, math.pi - x
    else:
        head = -np.expm1(-alpha * x) / alpha
        tail = -np.expm1(-alpha * (math.pi - x)) / alpha
    assert np.allclose(grid.decay_cumulative(ones, alpha), head, atol=1e-10)
    assert np.allclose(grid.decay_tail(ones, alpha), tail, atol=1e-10)


def test_laplace_matches_closed_form():
    # sin 2a cos a = (sin a + sin 3a)/2 on [0, π/2]
    g = PanelGrid.build(math.pi / 2, panels=64, order=12)
    f = np.sin(2 * g.nodes) * np.cos(g.nodes)
    lam = np.array([0.0, 0.3 + 5j, -1.2 + 11j, 2.0])
    fall = np.exp(-lam * math.pi / 2)
    exact = 0.5 * ((1 - lam * fall) / (lam ** 2 + 1) + (3 + lam * fall) / (lam ** 2 + 9))
    assert np.allclose(g.laplace(f, lam), exact, rtol=0, atol=1e-10)


def test_interpolation_is_exact_for_panel_polynomials(grid):
    y = np.linspace(0.0, math.pi, 41)
    assert np.allclose(grid.interpolate(grid.nodes ** 5, y), y ** 5, rtol=1e-12, atol=1e-12)


def test_refined_grid_integrates_the_same(grid):
    fine = grid.refined(3)
    assert fine.n_panels == 3 * grid.n_panels
    assert fine.integrate(np.exp(fine.nodes)) == pytest.approx(math.exp(math.pi) - 1.0, rel=1e-13)
    assert grid.refined(1) is grid


def test_tail_rules_cover_each_start(grid):
    starts = np.array([0.0, 0.4, 2.5, math.pi])
    owner, points, weights = grid.tail_rules(starts, shifts=(0.3,))
    assert np.all(points >= starts[owner] - 1e-15)
    tails = sum_by_owner(owner, weights * np.cos(points), starts.size)
    assert np.allclose(tails, -np.sin(starts), atol=1e-13)
    assert tails[-1] == 0.0


def test_sum_by_owner_complex():
    owner = np.array([0, 1, 1])
    values = np.array([1 + 1j, 2 - 1j, 3 + 0.5j])
    assert np.allclose(sum_by_owner(owner, values, 3), [1 + 1j, 5 - 0.5j, 0])
