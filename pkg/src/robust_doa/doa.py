"""Level-set estimates and the decimal-refinement search for the largest
admissible level.

A level ``alpha`` is admissible when the sampled level-set estimate is a
subset of the state negative-definite estimate and the level set does not
reach the boundary of the region (the estimate cannot certify anything
outside the region, so a level set leaking past it is not contained).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import CellMask, UniformGrid, subset
from .sampler import PURPOSE_STATE, sample_box, stream_id

log = logging.getLogger(__name__)


@dataclass
class StateSamples:
    """One fixed state sample set shared by every level and candidate."""

    grid: UniformGrid
    points: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    # samples grouped by cell, for segment reductions
    order: np.ndarray = field(repr=False, default=None)
    starts: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.order is None:
            self.order = np.argsort(self.cells, kind="stable")
            self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])


def draw_state_samples(grid: UniformGrid, n_x: int, seed: int) -> StateSamples:
    pts = sample_box(grid.box, n_x, seed, stream_id(PURPOSE_STATE, 0))
    cells = grid.locate(pts)
    counts = np.bincount(cells, minlength=grid.n_cells)
    return StateSamples(grid, pts, cells, counts)


@dataclass
class LevelSetEstimate:
    mask: CellMask
    alpha: float


def cell_max(L, samples: StateSamples) -> np.ndarray:
    """Largest ``L`` over the samples in each cell (``-inf`` when empty)."""
    values = L(samples.points)[samples.order]
    out = np.full(samples.grid.n_cells, -np.inf)
    nonempty = samples.counts > 0
    out[nonempty] = np.maximum.reduceat(values, samples.starts[nonempty])
    return out


def level_set_from_max(cmax: np.ndarray, counts: np.ndarray, grid: UniformGrid,
                       alpha: float) -> LevelSetEstimate:
    return LevelSetEstimate(CellMask(grid, (counts > 0) & (cmax <= alpha)), alpha)


def estimate_level_set(L, alpha: float, samples: StateSamples) -> LevelSetEstimate:
    """Cells all of whose samples satisfy ``L <= alpha``; empty cells excluded."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return level_set_from_max(cell_max(L, samples), samples.counts, samples.grid, alpha)


def contained(ls: LevelSetEstimate, ndd_x: CellMask) -> bool:
    return subset(ls.mask, ndd_x)


@dataclass
class AlphaSearchTrace:
    alpha_star: float
    checks: list[tuple[float, bool]]
    epsilons: list[float]
    accuracy: float
    capped: bool = False

    @property
    def n_checks(self) -> int:
        return len(self.checks)

    def to_dict(self) -> dict:
        return {"alpha_star": self.alpha_star, "accuracy": self.accuracy,
                "epsilons": self.epsilons, "capped": self.capped,
                "n_checks": self.n_checks,
                "checks": [{"alpha": a, "contained": c} for a, c in self.checks]}


def _decade_ratio(eps_init: float, accuracy: float) -> int:
    if eps_init <= 0 or accuracy <= 0:
        raise ValueError("eps_init and accuracy must be positive")
    ratio = eps_init / accuracy
    k = round(math.log10(ratio)) if ratio >= 1 else -1
    if k < 0 or not math.isclose(ratio, 10.0 ** k, rel_tol=1e-9):
        raise ValueError("eps_init / accuracy must be a non-negative power of ten")
    return 10 ** k


def _lattice(step: float):
    """``units -> units * step`` rounded like the decimal it stands for."""
    inverse = 1.0 / step
    if step < 1 and math.isclose(inverse, round(inverse), rel_tol=1e-9):
        scale = float(round(inverse))
        return lambda units: units / scale
    return lambda units: units * step


def variable_epsilon_search(predicate, eps_init: float, accuracy: float,
                            alpha_max: float | None = None,
                            warn: bool = True) -> AlphaSearchTrace:
    """Largest ``alpha`` on the refinement lattice for which ``predicate`` holds.

    Starting from ``alpha = eps_init`` the level grows by ``eps`` until the
    predicate fails, steps back, divides ``eps`` by ten and resumes from the
    next finer lattice point, stopping after the pass at ``eps == accuracy``.
    Levels are kept as integer multiples of ``accuracy`` so the lattice is
    exact. Levels above ``alpha_max`` count as failures.
    """
    step = _decade_ratio(eps_init, accuracy)
    checks: list[tuple[float, bool]] = []
    epsilons: list[float] = []
    capped = False

    level = _lattice(accuracy)

    def check(units: int) -> bool:
        nonlocal capped
        alpha = level(units)
        if alpha_max is not None and alpha > alpha_max:
            capped = True
            ok = False
        else:
            ok = bool(predicate(alpha))
        checks.append((alpha, ok))
        return ok

    units = step
    while True:
        epsilons.append(level(step))
        while check(units):
            units += step
        units -= step
        step //= 10
        if step == 0:
            break
        units += step
    alpha_star = level(units)
    if units == 0 and warn:
        log.warning("no admissible level found above %g; alpha* = 0", accuracy)
    return AlphaSearchTrace(alpha_star, checks, epsilons, accuracy, capped)


def constant_epsilon_search(predicate, eps: float,
                            alpha_max: float | None = None) -> AlphaSearchTrace:
    """Plain ``alpha += eps`` scan, kept for comparison with the refinement scheme."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    checks = []
    capped = False
    level = _lattice(eps)
    units = 1
    while True:
        alpha = level(units)
        if alpha_max is not None and alpha > alpha_max:
            capped = True
            checks.append((alpha, False))
            break
        ok = bool(predicate(alpha))
        checks.append((alpha, ok))
        if not ok:
            break
        units += 1
    return AlphaSearchTrace(level(units - 1), checks, [eps], eps, capped)


def boundary_level(L, grid: UniformGrid) -> float:
    """Smallest ``L`` on the grid vertices of the region surface."""
    return float(np.min(L(grid.boundary_nodes())))


def default_alpha_max(L, grid: UniformGrid) -> float:
    return 10.0 * float(np.max(L(grid.box.corners())))


def search_alpha(L, ndd_x: CellMask, samples: StateSamples, eps_init: float,
                 accuracy: float, alpha_max: float | None = None,
                 stay_in_region: bool = True,
                 cmax: np.ndarray | None = None,
                 warn: bool = True) -> tuple[AlphaSearchTrace, LevelSetEstimate]:
    """Largest admissible level for ``L`` and its level-set estimate."""
    if ndd_x.grid != samples.grid:
        raise ValueError("level-set samples and NDD mask use different grids")
    if cmax is None:
        cmax = cell_max(L, samples)
    if alpha_max is None:
        alpha_max = default_alpha_max(L, samples.grid)
    limit = boundary_level(L, samples.grid) if stay_in_region else math.inf

    def admissible(alpha: float) -> bool:
        if alpha >= limit:
            return False
        return contained(level_set_from_max(cmax, samples.counts, samples.grid, alpha), ndd_x)

    trace = variable_epsilon_search(admissible, eps_init, accuracy, alpha_max, warn)
    ls = level_set_from_max(cmax, samples.counts, samples.grid, trace.alpha_star)
    if trace.alpha_star > 0:
        assert contained(ls, ndd_x)
    return trace, ls
