"""State-feedback controllers fitted inside the negative-definite estimate.

Training pairs sit at state cell centers with the input taken at the
middle of the widest run of admissible control cells in that state column.
The controller is a zero-mean Gaussian-process posterior mean with a
squared-exponential kernel, corrected so that ``mu(0) == 0`` exactly.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.ndimage import distance_transform_cdt

from .grid import UniformGrid
from .ndd import NddEstimate
from .sampler import PURPOSE_PROBE, stream_id, uniforms

log = logging.getLogger(__name__)

JITTER_GROWTH = 100.0
MAX_ESCALATIONS = 3


class ControllerFitError(RuntimeError):
    pass


@dataclass
class TrainingSet:
    X: np.ndarray  # (N, n)
    U: np.ndarray  # (N, m)

    def __len__(self) -> int:
        return self.X.shape[0]


def _widest_run_center(column: np.ndarray) -> float | None:
    """Center (in cell units) of the longest run of True; lowest index wins ties."""
    padded = np.concatenate([[0], column.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    if edges.size == 0:
        return None
    starts, ends = edges[::2], edges[1::2]
    k = int(np.argmax(ends - starts))
    return 0.5 * (starts[k] + ends[k])


def _deepest_cell(column: np.ndarray, counts: tuple[int, ...]) -> np.ndarray | None:
    """Cell farthest (chessboard metric) from any inadmissible or outside cell."""
    if not column.any():
        return None
    block = np.pad(column.reshape(counts), 1, constant_values=False)
    depth = distance_transform_cdt(block, metric="chessboard")[tuple(slice(1, -1) for _ in counts)]
    flat = int(np.argmax(depth.ravel()))
    return np.array(np.unravel_index(flat, counts), dtype=float) + 0.5


def select_training(est: NddEstimate, stride: int = 1) -> TrainingSet:
    """Pick one input per ``stride``-th admissible state cell, plus the origin."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    sgrid = est.x_mask.grid
    wgrid = est.w_mask.grid
    cgrid = UniformGrid(type(sgrid.box)(wgrid.box.lower[sgrid.dim:], wgrid.box.upper[sgrid.dim:]),
                        wgrid.counts[sgrid.dim:])
    if est.x_mask.count == 0:
        raise ValueError("state estimate is empty")
    columns = est.w_mask.bits.reshape(sgrid.n_cells, cgrid.n_cells)
    centers = sgrid.cell_centers()
    origin = set(est.origin_cells.tolist())
    xs, us = [], []
    skipped = []
    for cell in est.x_mask.indices()[::stride]:
        col = columns[cell]
        if cgrid.dim == 1:
            mid = _widest_run_center(col)
            pos = None if mid is None else np.array([mid])
        else:
            pos = _deepest_cell(col, cgrid.counts)
        if pos is None:
            if cell not in origin:
                skipped.append(int(cell))
            continue
        xs.append(centers[cell])
        us.append(np.asarray(cgrid.box.lower) + pos * cgrid.widths)
    if skipped:
        log.warning("%d state cells have no admissible control cell and were skipped: %s",
                    len(skipped), skipped[:10])
    xs.append(np.zeros(sgrid.dim))
    us.append(np.zeros(cgrid.dim))
    return TrainingSet(np.array(xs), np.array(us))


@dataclass(frozen=True)
class KernelParams:
    length_scales: tuple[float, ...]
    signal_variance: float = 1.0
    jitter: float = 1e-8

    @classmethod
    def for_grid(cls, grid: UniformGrid, cells: float = 5.0, signal_variance: float = 1.0,
                 jitter: float = 1e-8) -> "KernelParams":
        return cls(tuple(float(w) * cells for w in grid.widths), signal_variance, jitter)


def se_kernel(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    ls = np.asarray(params.length_scales)
    a = np.atleast_2d(A) / ls
    b = np.atleast_2d(B) / ls
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return params.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass
class Controller:
    training: TrainingSet
    params: KernelParams
    weights: np.ndarray = field(repr=False)  # (N, m)
    jitter_used: float = 0.0
    _origin_value: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.training.X.shape[1]
        self._origin_value = self._raw(np.zeros((1, n)))[0]

    def _raw(self, X) -> np.ndarray:
        return se_kernel(X, self.training.X, self.params) @ self.weights

    def __call__(self, X) -> np.ndarray:
        """Control inputs ``(N, m)`` for states ``(N, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k0 = se_kernel(X, np.zeros((1, X.shape[1])), self.params) / self.params.signal_variance
        # subtracting a multiple of k(x, 0) pins the origin without a kink
        return self._raw(X) - k0 * self._origin_value

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        n, m = self.training.X.shape[1], self.training.U.shape[1]
        with open(d / "training.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)])
            for x, u in zip(self.training.X, self.training.U):
                w.writerow([repr(float(v)) for v in (*x, *u)])
        hyper = {"length_scales": list(self.params.length_scales),
                 "signal_variance": self.params.signal_variance,
                 "jitter": self.params.jitter, "n": n, "m": m}
        (d / "hyper.json").write_text(json.dumps(hyper, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Controller":
        d = Path(directory)
        hyper = json.loads((d / "hyper.json").read_text())
        rows = np.loadtxt(d / "training.csv", delimiter=",", skiprows=1, ndmin=2)
        n = hyper["n"]
        ts = TrainingSet(rows[:, :n], rows[:, n:])
        return fit(ts, KernelParams(tuple(hyper["length_scales"]), hyper["signal_variance"],
                                    hyper["jitter"]))


def fit(ts: TrainingSet, params: KernelParams) -> Controller:
    """Posterior-mean weights ``(K + jitter I)^-1 U``.

    The jitter is multiplied by 100 on a failed Cholesky factorization, at
    most three times.
    """
    if len(ts) < 2:
        raise ValueError("need at least two training pairs")
    K = se_kernel(ts.X, ts.X, params)
    jitter = params.jitter
    for attempt in range(MAX_ESCALATIONS + 1):
        try:
            c = linalg.cho_factor(K + jitter * np.eye(len(ts)), lower=True)
            weights = linalg.cho_solve(c, ts.U)
            if not np.all(np.isfinite(weights)):
                raise linalg.LinAlgError("non-finite weights")
            return Controller(ts, params, weights, jitter)
        except linalg.LinAlgError:
            if attempt == MAX_ESCALATIONS:
                break
            jitter *= JITTER_GROWTH
            log.warning("kernel matrix ill-conditioned; jitter raised to %g", jitter)
    raise ControllerFitError(f"kernel matrix not positive definite with jitter {jitter:g}")


@dataclass
class MembershipReport:
    probes: int
    violations: int
    worst: list[dict]
    origin_value: float

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.probes if self.probes else 0.0

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.origin_value <= 1e-9

    def to_dict(self) -> dict:
        return {"probes": self.probes, "violations": self.violations,
                "violation_fraction": self.violation_fraction,
                "origin_value": self.origin_value, "passed": self.passed,
                "worst": self.worst}


def probe_states(est: NddEstimate, probe_count: int, seed: int) -> np.ndarray:
    """Centers of every non-origin state cell plus random points inside them."""
    sgrid = est.x_mask.grid
    exempt = np.zeros(sgrid.n_cells, dtype=bool)
    exempt[est.origin_cells] = True
    cells = np.flatnonzero(est.x_mask.bits & ~exempt)
    if cells.size == 0:
        return np.empty((0, sgrid.dim))
    pts = [sgrid.cell_centers()[cells]]
    if probe_count > 0:
        r = uniforms(seed, stream_id(PURPOSE_PROBE, 0), probe_count, sgrid.dim + 1)
        pick = cells[np.minimum((r[:, 0] * cells.size).astype(np.int64), cells.size - 1)]
        lo = np.asarray(sgrid.box.lower) + np.array(
            np.unravel_index(pick, sgrid.counts)).T * sgrid.widths
        pts.append(lo + r[:, 1:] * sgrid.widths)
    return np.concatenate(pts)


def verify_membership(ctrl: Controller, est: NddEstimate, probe_count: int = 10_000,
                      seed: int = 0, report_worst: int = 10) -> MembershipReport:
    """Check that ``(x, mu(x))`` lands in an admissible product cell.

    Cells added around the origin are exempt; the origin condition is
    checked separately through ``|mu(0)|``.
    """
    X = probe_states(est, probe_count, seed)
    n = X.shape[1]
    origin_value = float(np.max(np.abs(ctrl(np.zeros((1, n))))))
    if X.shape[0] == 0:
        return MembershipReport(0, 0, [], origin_value)
    U = ctrl(X)
    flat = est.w_mask.grid.locate(np.hstack([X, U]))
    ok = (flat >= 0) & est.w_mask.bits[np.maximum(flat, 0)]
    bad = np.flatnonzero(~ok)
    worst = [{"x": X[i].tolist(), "u": U[i].tolist(), "outside_region": bool(flat[i] < 0)}
             for i in bad[:report_worst]]
    return MembershipReport(int(X.shape[0]), int(bad.size), worst, origin_value)
