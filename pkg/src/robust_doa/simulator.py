"""Closed-loop Monte Carlo validation with bounded uniform disturbances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .grid import CellMask
from .plant import PlantSet
from .sampler import PURPOSE_SIM_INIT, PURPOSE_SIM_NOISE, uniforms, uniforms_across_streams


@dataclass(frozen=True)
class SimConfig:
    trajectories: int = 1000
    max_steps: int = 200
    radius: float = 1e-3
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.trajectories < 1 or self.max_steps < 1:
            raise ValueError("trajectory count and max steps must be >= 1")
        if not self.radius > 0:
            raise ValueError("convergence radius must be positive")


@dataclass
class TrajectoryBatch:
    """States ``(T, K+1, n)`` and noises ``(T, K, n)``, NaN after a trajectory stops."""

    states: np.ndarray = field(repr=False)
    noises: np.ndarray = field(repr=False)
    converged_at: np.ndarray  # step index or -1
    aborted: np.ndarray
    radius: float

    @property
    def count(self) -> int:
        return self.states.shape[0]


def initial_states(mask: CellMask, count: int, seed: int) -> np.ndarray:
    """A uniformly chosen set cell, then a uniform point inside it."""
    cells = mask.indices()
    if cells.size == 0:
        raise ValueError("DOA mask is empty")
    g = mask.grid
    r = uniforms(seed, PURPOSE_SIM_INIT << 56, count, g.dim + 1)
    pick = cells[np.minimum((r[:, 0] * cells.size).astype(np.int64), cells.size - 1)]
    lo = np.asarray(g.box.lower) + np.array(np.unravel_index(pick, g.counts)).T * g.widths
    return lo + r[:, 1:] * g.widths


def simulate(plant: PlantSet, controller, doa_mask: CellMask, cfg: SimConfig,
             x0: np.ndarray | None = None) -> TrajectoryBatch:
    """Run ``x(k+1) = nominal(x, mu(x)) + e(k)`` with ``e`` uniform on ``[-delta, delta]``.

    Trajectory ``i`` draws its noise from its own counter stream, so results
    do not depend on how trajectories are batched.
    """
    T, K, n = cfg.trajectories, cfg.max_steps, plant.n
    x = initial_states(doa_mask, T, cfg.seed) if x0 is None else np.array(x0, dtype=float).reshape(T, n)
    states = np.full((T, K + 1, n), np.nan)
    noises = np.full((T, K, n), np.nan)
    states[:, 0] = x
    converged_at = np.full(T, -1, dtype=np.int64)
    aborted = np.zeros(T, dtype=bool)
    active = np.arange(T)
    done = np.linalg.norm(x, axis=1) <= cfg.radius
    converged_at[done] = 0
    active = active[~done]
    ids = np.arange(T, dtype=np.uint64)
    for k in range(K):
        if active.size == 0:
            break
        xa = states[active, k]
        try:
            u = controller(xa)
            c, h = plant.evaluate(xa, u)
        except (ArithmeticError, ValueError):
            # fall back to per-trajectory evaluation to isolate failures
            keep = []
            c = np.empty((active.size, n))
            h = np.empty((active.size, n))
            for j, i in enumerate(active):
                try:
                    uj = controller(xa[j:j + 1])
                    c[j], h[j] = (v[0] for v in plant.evaluate(xa[j:j + 1], uj))
                    keep.append(j)
                except (ArithmeticError, ValueError):
                    aborted[i] = True
            keep = np.array(keep, dtype=np.int64)
            active, xa, c, h = active[keep], xa[keep], c[keep], h[keep]
            if active.size == 0:
                break
        if cfg.noise:
            r = uniforms_across_streams(cfg.seed, PURPOSE_SIM_NOISE, ids[active], k, n)
            e = h * (2.0 * r - 1.0)
        else:
            e = np.zeros_like(c)
        assert np.all(np.abs(e) <= h), "noise exceeded the error bound"
        nxt = c + e
        noises[active, k] = e
        states[active, k + 1] = nxt
        bad = ~np.all(np.isfinite(nxt), axis=1)
        aborted[active[bad]] = True
        fin = np.linalg.norm(nxt, axis=1) <= cfg.radius
        converged_at[active[fin & ~bad]] = k + 1
        active = active[~fin & ~bad]
    return TrajectoryBatch(states, noises, converged_at, aborted, cfg.radius)


def summarize(batch: TrajectoryBatch) -> dict:
    if batch.count == 0:
        raise ValueError("no trajectories")
    conv = batch.converged_at >= 0
    steps = batch.converged_at[conv]
    return {
        "trajectories": int(batch.count),
        "converged": int(conv.sum()),
        "fraction": float(conv.mean()),
        "aborted": int(batch.aborted.sum()),
        "median_step": float(np.median(steps)) if steps.size else None,
        "p95_step": float(np.percentile(steps, 95)) if steps.size else None,
        "max_excursion": float(np.nanmax(np.abs(batch.states))),
    }


def _write_long(path, arr: np.ndarray) -> None:
    T, K, n = arr.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "trajectory"] + ([f"x{j + 1}" for j in range(n)] if n > 1 else ["value"]))
        for k in range(K):
            for t in range(T):
                row = arr[t, k]
                if np.isnan(row).any():
                    continue
                w.writerow([k, t] + [f"{v:.10g}" for v in row])


def export_csv(batch: TrajectoryBatch, states_path, noises_path) -> None:
    _write_long(states_path, batch.states)
    _write_long(noises_path, batch.noises)
