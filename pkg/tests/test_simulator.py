import numpy as np
import pytest

from robust_doa import controller, ndd
from robust_doa.grid import Box, CellMask, UniformGrid
from robust_doa.lyapunov import FixedLyapunov
from robust_doa.simulator import (SimConfig, TrajectoryBatch, export_csv, initial_states,
                                  simulate, summarize)


@pytest.fixture(scope="module")
def baseline(desk_problem, desk_samples):
    from robust_doa import doa

    L = FixedLyapunov.parse("x1^2", 1)
    est = ndd.estimate_ndd(desk_problem, L)
    _, ls = doa.search_alpha(L, est.x_mask, desk_samples, 10, 0.001)
    ts = controller.select_training(est)
    ctrl = controller.fit(ts, controller.KernelParams.for_grid(est.x_mask.grid))
    return ctrl, ls.mask


def test_origin_is_an_equilibrium(bench, baseline):
    ctrl, mask = baseline
    batch = simulate(bench, ctrl, mask, SimConfig(trajectories=3, seed=0), x0=np.zeros((3, 1)))
    assert np.all(batch.converged_at == 0)
    c, h = bench.evaluate(np.zeros((1, 1)), ctrl(np.zeros((1, 1))))
    assert c[0, 0] == 0.0 and h[0, 0] == 0.0


def test_baseline_domain_converges(bench, baseline):
    ctrl, mask = baseline
    batch = simulate(bench, ctrl, mask, SimConfig(trajectories=1000, seed=0))
    s = summarize(batch)
    assert s["fraction"] == 1.0 and s["aborted"] == 0
    assert s["max_excursion"] <= 2.0
    assert s["median_step"] <= s["p95_step"] <= 200
    assert np.all(np.isfinite(batch.states[:, 0]))


def test_noise_respects_bound(bench, baseline):
    ctrl, mask = baseline
    batch = simulate(bench, ctrl, mask, SimConfig(trajectories=200, seed=4))
    for t in range(batch.count):
        for k in range(batch.noises.shape[1]):
            x = batch.states[t, k]
            if np.isnan(batch.noises[t, k]).any():
                break
            _, h = bench.evaluate(x[None], ctrl(x[None]))
            assert np.all(np.abs(batch.noises[t, k]) <= h[0])


def test_zero_noise_is_easier(bench, baseline):
    ctrl, mask = baseline
    noisy = summarize(simulate(bench, ctrl, mask, SimConfig(trajectories=300, seed=2)))
    clean = summarize(simulate(bench, ctrl, mask, SimConfig(trajectories=300, seed=2, noise=False)))
    assert noisy["fraction"] == 1.0 and clean["fraction"] == 1.0


def test_deterministic(bench, baseline):
    ctrl, mask = baseline
    a = simulate(bench, ctrl, mask, SimConfig(trajectories=50, seed=9))
    b = simulate(bench, ctrl, mask, SimConfig(trajectories=50, seed=9))
    assert np.array_equal(a.states, b.states, equal_nan=True)


def test_initial_states_cover_set_cells():
    g = UniformGrid(Box((-1.0,), (1.0,)), (10,))
    mask = CellMask.from_indices(g, [2, 7])
    x0 = initial_states(mask, 4000, seed=0)
    cells = g.locate(x0)
    assert set(cells.tolist()) == {2, 7}
    assert abs(np.mean(cells == 2) - 0.5) < 0.05
    with pytest.raises(ValueError):
        initial_states(CellMask.empty(g), 5, 0)


def test_summary_edge_cases():
    empty = TrajectoryBatch(np.empty((0, 1, 1)), np.empty((0, 0, 1)), np.empty(0, dtype=int),
                            np.empty(0, dtype=bool), 1e-3)
    with pytest.raises(ValueError):
        summarize(empty)
    with pytest.raises(ValueError):
        SimConfig(radius=0)
    with pytest.raises(ValueError):
        SimConfig(trajectories=0)


def test_aborted_trajectories_are_flagged(bench):
    g = UniformGrid(Box((-1.0,), (1.0,)), (4,))
    mask = CellMask.from_indices(g, [3])

    def bad(X):
        if np.any(X > 0.7):
            raise ValueError("controller undefined")
        return np.zeros((len(X), 1))

    batch = simulate(bench, bad, mask, SimConfig(trajectories=20, seed=0))
    assert batch.aborted.sum() > 0


def test_csv_export(bench, baseline, tmp_path):
    ctrl, mask = baseline
    batch = simulate(bench, ctrl, mask, SimConfig(trajectories=3, seed=0))
    export_csv(batch, tmp_path / "s.csv", tmp_path / "n.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "k,trajectory,value"
    assert len(lines) - 1 == int(np.sum(~np.isnan(batch.states[..., 0])))
