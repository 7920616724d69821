"""Volume of the best level-set estimate as a function of ``Q``, and a
global-best particle swarm to maximize it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import doa, ndd
from .grid import CellMask, volume
from .lyapunov import LyapunovSOS, basis, check_full_rank
from .sampler import PURPOSE_PSO, stream_id, uniforms

log = logging.getLogger(__name__)


@dataclass
class SearchSettings:
    """Everything besides ``Q`` that the volume objective depends on."""

    problem: ndd.NddProblem
    samples: doa.StateSamples
    d: int = 2
    eps_init: float = 10.0
    accuracy: float = 0.001
    alpha_max: float | None = None
    margin: float = 0.0
    min_samples_per_cell: int = 1
    origin_layers: int = ndd.DEFAULT_ORIGIN_LAYERS
    stay_in_region: bool = True
    rank_tol: float | None = None


@dataclass
class MEvaluation:
    m: float
    alpha_star: float
    level_set: CellMask | None
    full_rank: bool
    estimate: ndd.NddEstimate | None = None
    trace: doa.AlphaSearchTrace | None = None


def evaluate_m(Q, settings: SearchSettings) -> MEvaluation:
    """Volume of ``X_ls(L, alpha*(L))`` for ``L = |Q S_d(x)|^2``.

    Rank-deficient ``Q`` scores zero instead of raising so that a swarm can
    carry degenerate particles.
    """
    Q = np.asarray(Q, dtype=float)
    b = basis(settings.problem.n, settings.d)
    if Q.shape != (b.r, b.r) or not np.all(np.isfinite(Q)) or not check_full_rank(Q, settings.rank_tol):
        return MEvaluation(0.0, 0.0, None, False)
    L = LyapunovSOS(b, Q)
    est = ndd.estimate_ndd(settings.problem, L, settings.margin,
                           settings.min_samples_per_cell, settings.origin_layers)
    trace, ls = doa.search_alpha(L, est.x_mask, settings.samples, settings.eps_init,
                                 settings.accuracy, settings.alpha_max,
                                 settings.stay_in_region, warn=False)
    return MEvaluation(volume(ls.mask), trace.alpha_star, ls.mask, True, est, trace)


@dataclass(frozen=True)
class PsoConfig:
    swarm: int = 20
    iterations: int = 50
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    lower: float = -3.0
    upper: float = 3.0
    vmax: float | None = None  # default: 20% of the bound span
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.swarm < 2:
            raise ValueError("swarm size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper) and self.lower < self.upper):
            raise ValueError("Q bounds must be finite with lower < upper")

    @property
    def velocity_clamp(self) -> float:
        return self.vmax if self.vmax is not None else 0.2 * (self.upper - self.lower)


@dataclass
class OptimizationResult:
    Q_best: np.ndarray
    m_best: float
    alpha_best: float
    history: list[float]
    evaluations: int
    level_set: CellMask | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"Q_best": self.Q_best.tolist(), "m_best": self.m_best,
                "alpha_best": self.alpha_best, "history": self.history,
                "evaluations": self.evaluations}


def _unit_frobenius(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def pso(objective: Callable[[np.ndarray], float], dim: int, cfg: PsoConfig,
        transform: Callable[[np.ndarray], np.ndarray] | None = None):
    """Maximize ``objective`` over ``[lower, upper]^dim``.

    Returns ``(best position, best value, history, evaluations)``; the
    history holds the global best after initialization and after every
    iteration. Random numbers come from counter streams keyed by
    ``(seed, iteration)``, so a run is reproducible.
    """
    lo, hi = cfg.lower, cfg.upper
    vmax = cfg.velocity_clamp
    transform = transform or (lambda p: p)

    def draws(iteration: int, k: int) -> np.ndarray:
        # k-th block of swarm x dim uniforms for this iteration
        flat = uniforms(cfg.seed, stream_id(PURPOSE_PSO, iteration), cfg.swarm * dim, 1,
                        start=k * cfg.swarm * dim)
        return flat.reshape(cfg.swarm, dim)

    x = lo + (hi - lo) * draws(0, 0)
    v = vmax * (2.0 * draws(0, 1) - 1.0)
    fx = np.array([objective(transform(p)) for p in x])
    evaluations = cfg.swarm
    pbest, pval = x.copy(), fx.copy()
    g = int(np.argmax(pval))  # first maximum wins ties
    gbest, gval = pbest[g].copy(), float(pval[g])
    history = [gval]
    for it in range(1, cfg.iterations + 1):
        r1, r2 = draws(it, 0), draws(it, 1)
        v = cfg.inertia * v + cfg.cognitive * r1 * (pbest - x) + cfg.social * r2 * (gbest - x)
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        fx = np.array([objective(transform(p)) for p in x])
        evaluations += cfg.swarm
        better = fx > pval
        pbest[better] = x[better]
        pval[better] = fx[better]
        g = int(np.argmax(pval))
        if pval[g] > gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        history.append(gval)
        log.info("pso iteration %d: best %.6g", it, gval)
    return transform(gbest), gval, history, evaluations


def pso_maximize(settings: SearchSettings, cfg: PsoConfig = PsoConfig()) -> OptimizationResult:
    r = basis(settings.problem.n, settings.d).r
    dim = r * r
    transform = _unit_frobenius if cfg.normalize else None

    def objective(p: np.ndarray) -> float:
        return evaluate_m(p.reshape(r, r), settings).m

    best, _, history, n_eval = pso(objective, dim, cfg, transform)
    Q_best = best.reshape(r, r)
    final = evaluate_m(Q_best, settings)
    return OptimizationResult(Q_best, final.m, final.alpha_star, history, n_eval,
                              final.level_set)
