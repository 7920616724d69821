import logging
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_doa import doa, ndd
from robust_doa.grid import Box, CellMask, UniformGrid, subset
from robust_doa.lyapunov import FixedLyapunov, LyapunovSOS
from robust_doa.sampler import SampleConfig
from oracles import variable_eps_replay

SQUARE = FixedLyapunov.parse("x1^2", 1)


@pytest.fixture(scope="module")
def fine_samples():
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.01)
    return doa.draw_state_samples(g, 200_000, seed=0)


def test_zero_level_is_empty(fine_samples):
    assert doa.estimate_level_set(SQUARE, 0.0, fine_samples).mask.count == 0


def test_quadratic_level_set_interval(fine_samples):
    ls = doa.estimate_level_set(SQUARE, 0.0117, fine_samples)
    (lo, hi), = ls.mask.intervals()
    assert lo == pytest.approx(-0.108, abs=0.01) and hi == pytest.approx(0.108, abs=0.01)
    assert -np.sqrt(0.0117) <= lo and hi <= np.sqrt(0.0117)


def test_saturation(fine_samples):
    ls = doa.estimate_level_set(SQUARE, 4.0, fine_samples)
    assert ls.mask.count == int((fine_samples.counts > 0).sum()) == 400


def test_level_set_cells_respect_samples(fine_samples):
    alpha = 0.3
    ls = doa.estimate_level_set(SQUARE, alpha, fine_samples)
    values = SQUARE(fine_samples.points)
    for cell in range(fine_samples.grid.n_cells):
        inside = values[fine_samples.cells == cell]
        assert ls.mask.bits[cell] == (inside.size > 0 and bool(np.all(inside <= alpha)))


def test_level_set_monotone(fine_samples):
    prev = None
    for alpha in (0.001, 0.01, 0.1, 0.5, 1.0, 3.9):
        cur = doa.estimate_level_set(SQUARE, alpha, fine_samples).mask
        if prev is not None:
            assert subset(prev, cur)
        prev = cur


def test_containment_examples():
    g = UniformGrid.with_width(Box((-1.0,), (1.0,)), 0.5)
    ndd_x = CellMask(g, [0, 1, 1, 0])
    assert doa.contained(doa.LevelSetEstimate(CellMask.empty(g), 0.0), ndd_x)
    assert doa.contained(doa.LevelSetEstimate(ndd_x.copy(), 1.0), ndd_x)
    assert not doa.contained(doa.LevelSetEstimate(CellMask(g, [1, 1, 0, 0]), 1.0), ndd_x)


def test_variable_epsilon_check_count():
    trace = doa.variable_epsilon_search(lambda a: a <= 97.678, 10, 0.001)
    assert trace.n_checks == 42
    assert trace.alpha_star == pytest.approx(97.678, abs=1e-9)
    assert trace.epsilons == pytest.approx([10, 1, 0.1, 0.01, 0.001])


def test_constant_epsilon_check_count():
    trace = doa.constant_epsilon_search(lambda a: a <= 97.678, 0.001)
    assert trace.n_checks == 97679
    assert trace.alpha_star == pytest.approx(97.678, abs=1e-9)


def test_below_resolution(caplog):
    with caplog.at_level(logging.WARNING):
        trace = doa.variable_epsilon_search(lambda a: a <= 0.0005, 10, 0.001)
    assert trace.alpha_star == 0.0
    assert "alpha* = 0" in caplog.text


@settings(max_examples=150, deadline=None)
@given(st.decimals(min_value=Decimal("0.001"), max_value=Decimal("999.999"), places=3),
       st.sampled_from([("10", "0.001"), ("1", "0.01"), ("100", "0.1")]))
def test_check_count_matches_replay(threshold, schedule):
    eps, acc = schedule
    calls, alpha = variable_eps_replay(str(threshold), eps, acc)
    trace = doa.variable_epsilon_search(lambda a: Decimal(repr(a)) <= threshold,
                                        float(eps), float(acc))
    assert trace.n_checks == calls
    assert trace.alpha_star == pytest.approx(float(alpha), abs=1e-9)
    ok = [a for a, c in trace.checks if c]
    assert all(a <= float(threshold) + 1e-12 for a in ok)


def test_schedule_validation():
    with pytest.raises(ValueError):
        doa.variable_epsilon_search(lambda a: True, 10, 0.003)
    with pytest.raises(ValueError):
        doa.variable_epsilon_search(lambda a: True, 0.001, 10)


def test_cap_stops_runaway_search():
    trace = doa.variable_epsilon_search(lambda a: True, 1, 0.1, alpha_max=5.55)
    assert trace.capped
    assert trace.alpha_star == pytest.approx(5.5)


def test_default_cap():
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.1)
    assert doa.default_alpha_max(SQUARE, g) == pytest.approx(40.0)
    assert doa.boundary_level(SQUARE, g) == pytest.approx(4.0)


@pytest.fixture(scope="module")
def desk_square(bench):
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.02)
    problem = ndd.prepare(bench, g, g, SampleConfig(seed=0, n_xu=500_000, n_succ=100))
    est = ndd.estimate_ndd(problem, SQUARE)
    samples = doa.draw_state_samples(g, 1_000_000, seed=0)
    return est, samples


def test_search_alpha_maximality(desk_square):
    est, samples = desk_square
    trace, ls = doa.search_alpha(SQUARE, est.x_mask, samples, 10, 0.001)
    assert trace.alpha_star > 0 and not trace.capped
    assert doa.contained(ls, est.x_mask)
    above = doa.estimate_level_set(SQUARE, trace.alpha_star + 0.001, samples)
    assert not doa.contained(above, est.x_mask)
    assert abs(trace.alpha_star - 0.0117) <= 0.003


def test_search_stays_inside_region(bench):
    # quartic candidate whose decrease domain is the whole region
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.05)
    problem = ndd.prepare(bench, g, g, SampleConfig(seed=1, n_xu=100_000, n_succ=50))
    L = LyapunovSOS.from_matrix(np.array([[0.3587, 0.9232], [1.0, 0.8249]]), 1, 2)
    est = ndd.estimate_ndd(problem, L)
    samples = doa.draw_state_samples(g, 200_000, seed=1)
    free, _ = doa.search_alpha(L, est.x_mask, samples, 10, 0.001, stay_in_region=False)
    bounded, _ = doa.search_alpha(L, est.x_mask, samples, 10, 0.001)
    assert bounded.alpha_star < doa.boundary_level(L, g) <= free.alpha_star


def test_grid_mismatch(desk_square):
    est, _ = desk_square
    other = doa.draw_state_samples(UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.1), 10, 0)
    with pytest.raises(ValueError):
        doa.search_alpha(SQUARE, est.x_mask, other, 10, 0.001)
