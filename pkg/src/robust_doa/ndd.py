"""Sampled estimation of the robust negative-definite domains.

A state-control pair is kept when the Lyapunov candidate strictly decreases
(by more than ``margin``) at every sampled successor in the plant set's
successor box. A product cell is kept when it holds at least
``min_samples_per_cell`` data points and all of them are kept; the state
estimate is its projection plus the cells around the origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .grid import CellMask, UniformGrid, product_grid, project_mask
from .lyapunov import LyapunovSOS
from .plant import PlantSet
from .sampler import (PURPOSE_STATE_CONTROL, PURPOSE_SUCCESSOR, SampleConfig,
                      sample_box, sample_successors, stream_id, successor_points,
                      uniform_scalar, uniforms_across_streams)

log = logging.getLogger(__name__)

DEFAULT_ORIGIN_LAYERS = 3
_CHUNK = 1 << 20


@dataclass
class NddProblem:
    """Lyapunov-independent data for one estimation run.

    The data set and each point's successor box are computed once and reused
    for every candidate function evaluated against this run.
    """

    plant: PlantSet
    state_grid: UniformGrid
    control_grid: UniformGrid
    config: SampleConfig
    points: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    halfs: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    cell_counts: np.ndarray = field(repr=False)

    @property
    def grid(self) -> UniformGrid:
        return product_grid(self.state_grid, self.control_grid)

    @property
    def n(self) -> int:
        return self.plant.n


def prepare(plant: PlantSet, state_grid: UniformGrid, control_grid: UniformGrid,
            config: SampleConfig) -> NddProblem:
    if state_grid.dim != plant.n or control_grid.dim != plant.m:
        raise ValueError("grid dimensions do not match the plant")
    wgrid = product_grid(state_grid, control_grid)
    N = config.n_xu
    points = np.empty((N, plant.n + plant.m))
    centers = np.empty((N, plant.n))
    halfs = np.empty((N, plant.n))
    stream = stream_id(PURPOSE_STATE_CONTROL, 0)
    for start in range(0, N, _CHUNK):
        count = min(_CHUNK, N - start)
        P = sample_box(wgrid.box, count, config.seed, stream, start)
        points[start:start + count] = P
        c, h = plant.evaluate(P[:, :plant.n], P[:, plant.n:])
        centers[start:start + count] = c
        halfs[start:start + count] = h
    cells = wgrid.locate(points)
    counts = np.bincount(cells, minlength=wgrid.n_cells)
    return NddProblem(plant, state_grid, control_grid, config, points, centers, halfs,
                      cells, counts)


@dataclass
class NddEstimate:
    w_mask: CellMask
    x_mask: CellMask
    x_projected: CellMask
    cell_counts: np.ndarray = field(repr=False)
    worst_margin: np.ndarray = field(repr=False)
    origin_layers: int = DEFAULT_ORIGIN_LAYERS

    @property
    def origin_cells(self) -> np.ndarray:
        return self.x_mask.grid.origin_cells(self.origin_layers)


def classify_point(plant: PlantSet, L, x, u, n_succ: int, seed: int, point_id: int,
                   margin: float = 0.0) -> bool:
    """True iff ``L(next) - L(x) < -margin`` at every sampled successor."""
    if n_succ < 1:
        raise ValueError("n_succ must be >= 1")
    x = np.reshape(np.asarray(x, dtype=float), (1, -1))
    succ = sample_successors(plant, x, u, n_succ, seed, point_id)
    diff = L(succ) - L(x)[0]
    return bool(np.all(diff < -margin))


@nb.njit(cache=True, inline="always")
def _sos_value(x, exps, Q, s, z):
    r = exps.shape[0]
    for i in range(r):
        v = 1.0
        for k in range(x.shape[0]):
            for _ in range(exps[i, k]):
                v *= x[k]
        s[i] = v
    total = 0.0
    for i in range(r):
        acc = 0.0
        for j in range(r):
            acc += Q[i, j] * s[j]
        z[i] = acc
        total += acc * acc
    return total


@nb.njit(cache=True, parallel=True)
def _classify_sos(states, centers, halfs, exps, Q, seed, stream_base, n_succ, margin,
                  ok, worst):
    N, n = centers.shape
    r = exps.shape[0]
    for v in nb.prange(N):
        s = np.empty(r)
        z = np.empty(r)
        xb = np.empty(n)
        L0 = _sos_value(states[v], exps, Q, s, z)
        stream = stream_base | np.uint64(v)
        w = -np.inf
        good = True
        for h in range(n_succ):
            for k in range(n):
                rr = uniform_scalar(seed, stream, np.uint64(h), k)
                xb[k] = centers[v, k] + halfs[v, k] * (2.0 * rr - 1.0)
            diff = _sos_value(xb, exps, Q, s, z) - L0
            if diff > w:
                w = diff
            if not diff < -margin:
                good = False
                break
        ok[v] = good
        worst[v] = w


def classify_all(problem: NddProblem, L, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-point verdicts and the largest evaluated ``L(next) - L(x)``.

    Sampling stops at a point's first non-decreasing successor, so the
    margin is exact only for points classified true.
    """
    n = problem.n
    states = np.ascontiguousarray(problem.points[:, :n])
    N = states.shape[0]
    ok = np.empty(N, dtype=np.bool_)
    worst = np.empty(N)
    seed = problem.config.seed
    n_succ = problem.config.n_succ
    if isinstance(L, LyapunovSOS):
        _classify_sos(states, problem.centers, problem.halfs,
                      np.ascontiguousarray(L.basis.exponents), np.ascontiguousarray(L.Q),
                      np.uint64(seed), np.uint64(stream_id(PURPOSE_SUCCESSOR, 0)),
                      n_succ, float(margin), ok, worst)
        return ok, worst
    # Generic path: one successor index at a time over the surviving points.
    L0 = L(states)
    alive = np.arange(N)
    worst[:] = -np.inf
    for h in range(n_succ):
        if alive.size == 0:
            break
        r = uniforms_across_streams(seed, PURPOSE_SUCCESSOR, alive, h, n)
        succ = successor_points(problem.centers[alive], problem.halfs[alive], r)
        diff = L(succ) - L0[alive]
        worst[alive] = np.maximum(worst[alive], diff)
        alive = alive[diff < -margin]
    ok[:] = False
    ok[alive] = True
    return ok, worst


def apply_origin_fix(x_mask: CellMask, layers: int = DEFAULT_ORIGIN_LAYERS) -> CellMask:
    """Set the cells within ``layers`` cell layers of the origin.

    With ``layers=1`` these are exactly the cells whose closure contains the
    origin.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    bits = x_mask.bits.copy()
    bits[x_mask.grid.origin_cells(layers)] = True
    return CellMask(x_mask.grid, bits)


def aggregate(problem: NddProblem, ok: np.ndarray, worst: np.ndarray,
              min_samples_per_cell: int = 1,
              origin_layers: int = DEFAULT_ORIGIN_LAYERS) -> NddEstimate:
    wgrid = problem.grid
    bad = np.bincount(problem.cells, weights=~ok, minlength=wgrid.n_cells)
    w_bits = (problem.cell_counts >= max(1, min_samples_per_cell)) & (bad == 0)
    worst_cell = np.full(wgrid.n_cells, -np.inf)
    np.maximum.at(worst_cell, problem.cells, worst)
    w_mask = CellMask(wgrid, w_bits)
    projected = project_mask(w_mask, problem.state_grid)
    x_mask = apply_origin_fix(projected, origin_layers)
    return NddEstimate(w_mask, x_mask, projected, problem.cell_counts, worst_cell,
                       origin_layers)


def estimate_ndd(problem: NddProblem, L, margin: float = 0.0, min_samples_per_cell: int = 1,
                 origin_layers: int = DEFAULT_ORIGIN_LAYERS) -> NddEstimate:
    ok, worst = classify_all(problem, L, margin)
    est = aggregate(problem, ok, worst, min_samples_per_cell, origin_layers)
    log.debug("ndd: %d/%d product cells, %d/%d state cells",
              est.w_mask.count, est.w_mask.grid.n_cells,
              est.x_mask.count, est.x_mask.grid.n_cells)
    return est
