import numpy as np
import pytest

from robust_doa import ndd
from robust_doa.grid import Box, CellMask, UniformGrid, project_mask, subset
from robust_doa.lyapunov import FixedLyapunov, LyapunovSOS
from robust_doa.sampler import SampleConfig
from oracles import endpoint_decreases

SQUARE = FixedLyapunov.parse("x1^2", 1)


@pytest.fixture(scope="module")
def small_problem(bench):
    box = Box((-2.0,), (2.0,))
    g = UniformGrid.with_width(box, 0.1)
    return ndd.prepare(bench, g, g, SampleConfig(seed=3, n_xu=40_000, n_succ=100))


def test_classify_point_examples(bench):
    assert not ndd.classify_point(bench, SQUARE, [0.5], [0.3], 500, seed=0, point_id=0)
    assert not ndd.classify_point(bench, SQUARE, [0.0], [0.0], 500, seed=0, point_id=1)
    with pytest.raises(ValueError):
        ndd.classify_point(bench, SQUARE, [0.5], [0.3], 0, seed=0, point_id=0)


def test_classify_point_agrees_with_endpoint_oracle(bench):
    box = bench.successor_box([0.1], [0.07])
    L = lambda v: v * v
    expected = endpoint_decreases(L, 0.1, box.lower[0], box.upper[0])
    for pid in range(5):
        got = ndd.classify_point(bench, SQUARE, [0.1], [0.07], 5000, seed=0, point_id=pid)
        assert got == expected


def test_classify_all_matches_single_point_path(bench, small_problem):
    L = LyapunovSOS.from_matrix(np.array([[1.0, 0.3], [0.2, 1.0]]), 1, 2)
    ok, worst = ndd.classify_all(small_problem, L)
    cfg = small_problem.config
    for v in range(0, 40_000, 997):
        x, u = small_problem.points[v, :1], small_problem.points[v, 1:]
        assert ok[v] == ndd.classify_point(bench, L, x, u, cfg.n_succ, cfg.seed, v)


def test_compiled_and_generic_paths_agree(small_problem):
    L = LyapunovSOS.from_matrix(np.array([[1.0, 0.3], [0.2, 1.0]]), 1, 2)
    fast = ndd.classify_all(small_problem, L)[0]
    slow = ndd.classify_all(small_problem, lambda X: L(X))[0]
    assert np.array_equal(fast, slow)


def test_estimate_invariants(small_problem):
    est = ndd.estimate_ndd(small_problem, SQUARE)
    sgrid = small_problem.state_grid
    assert subset(project_mask(est.w_mask, sgrid), est.x_mask)
    assert np.all(est.cell_counts[est.w_mask.bits] >= 1)
    ok, _ = ndd.classify_all(small_problem, SQUARE)
    for cell in est.w_mask.indices():
        assert ok[small_problem.cells == cell].all()
    assert set(sgrid.origin_cells(est.origin_layers)) <= set(est.x_mask.indices())


def test_margin_monotonicity(small_problem):
    masks = [ndd.estimate_ndd(small_problem, SQUARE, margin=m).w_mask for m in (0.0, 0.01, 0.1)]
    assert subset(masks[2], masks[1]) and subset(masks[1], masks[0])
    assert masks[2].count < masks[0].count


def test_sparse_sampling_never_sets_empty_cells(bench):
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.01)
    problem = ndd.prepare(bench, g, g, SampleConfig(seed=0, n_xu=5, n_succ=10))
    est = ndd.estimate_ndd(problem, SQUARE)
    assert est.w_mask.count <= 5
    assert np.all(est.cell_counts[est.w_mask.bits] >= 1)
    assert ndd.estimate_ndd(problem, SQUARE, min_samples_per_cell=2).w_mask.count == 0


def test_min_samples_rule(small_problem):
    loose = ndd.estimate_ndd(small_problem, SQUARE, min_samples_per_cell=1)
    strict = ndd.estimate_ndd(small_problem, SQUARE, min_samples_per_cell=15)
    assert subset(strict.w_mask, loose.w_mask)
    assert np.all(strict.cell_counts[strict.w_mask.bits] >= 15)


def test_origin_fix():
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.01)
    fixed = ndd.apply_origin_fix(CellMask.empty(g), layers=1)
    assert fixed.indices().tolist() == [199, 200]
    assert ndd.apply_origin_fix(fixed, layers=1) == fixed
    g2 = UniformGrid(Box((-1.0, -1.0), (1.0, 1.0)), (10, 10))
    assert ndd.apply_origin_fix(CellMask.empty(g2), layers=1).count == 4
    with pytest.raises(ValueError):
        ndd.apply_origin_fix(CellMask.empty(UniformGrid(Box((0.1,), (1.0,)), (9,))))
    with pytest.raises(ValueError):
        ndd.apply_origin_fix(CellMask.empty(g), layers=0)


def test_repeat_runs_identical(bench):
    g = UniformGrid.with_width(Box((-2.0,), (2.0,)), 0.1)
    cfg = SampleConfig(seed=9, n_xu=20_000, n_succ=50)
    a = ndd.estimate_ndd(ndd.prepare(bench, g, g, cfg), SQUARE)
    b = ndd.estimate_ndd(ndd.prepare(bench, g, g, cfg), SQUARE)
    assert a.w_mask == b.w_mask and a.x_mask == b.x_mask
    assert np.array_equal(a.worst_margin, b.worst_margin)


def test_dimension_mismatch(bench):
    g2 = UniformGrid(Box((-1.0, -1.0), (1.0, 1.0)), (4, 4))
    g1 = UniformGrid(Box((-1.0,), (1.0,)), (4,))
    with pytest.raises(ValueError):
        ndd.prepare(bench, g2, g1, SampleConfig(n_xu=10, n_succ=1))
