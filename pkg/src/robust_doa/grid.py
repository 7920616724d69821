"""Boxes, uniform grids and boolean cell masks.

Cells are half-open ``[low, high)`` except along the upper face of the box,
which belongs to the last cell. Multi-dimensional cells are flattened in
row-major (C) order of the per-axis indices, so for a product grid
``X x U`` the flat index is ``i * n_cells(U) + j`` (x-major) and projecting
onto ``X`` is a reduction over the trailing axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MASK_MAGIC = b"RDOAMASK"


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must be non-empty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"box requires lower < upper, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains_origin(self) -> bool:
        """True when the origin is strictly interior."""
        return all(a < 0 < b for a, b in zip(self.lower, self.upper))

    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def corners(self) -> np.ndarray:
        axes = [(a, b) for a, b in zip(self.lower, self.upper)]
        return np.array(np.meshgrid(*axes, indexing="ij")).reshape(self.dim, -1).T

    @staticmethod
    def product(a: "Box", b: "Box") -> "Box":
        return Box(a.lower + b.lower, a.upper + b.upper)


@dataclass(frozen=True)
class UniformGrid:
    box: Box
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) != self.box.dim:
            raise ValueError("one cell count per box dimension required")
        if any(c < 1 for c in counts):
            raise ValueError("cell counts must be positive")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def with_width(cls, box: Box, width) -> "UniformGrid":
        """Grid whose cells have (approximately) the requested widths."""
        widths = np.broadcast_to(np.asarray(width, dtype=float), (box.dim,))
        spans = np.subtract(box.upper, box.lower)
        counts = np.maximum(1, np.round(spans / widths).astype(int))
        return cls(box, tuple(int(c) for c in counts))

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.box.upper, self.box.lower) / np.asarray(self.counts)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def axis_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis cell indices and an inside flag for ``(N, dim)`` points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.box.lower)
        hi = np.asarray(self.box.upper)
        counts = np.asarray(self.counts)
        inside = np.all((p >= lo) & (p <= hi), axis=1)
        idx = np.floor((p - lo) / self.widths).astype(np.int64)
        idx = np.clip(idx, 0, counts - 1)
        return idx, inside

    def flat_index(self, axis_idx) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(axis_idx).T), self.counts)

    def locate(self, points) -> np.ndarray:
        """Flat cell index per point; ``-1`` for points outside the box."""
        idx, inside = self.axis_index(points)
        flat = self.flat_index(idx)
        return np.where(inside, flat, -1)

    def locate_one(self, point) -> int | None:
        flat = int(self.locate(np.reshape(point, (1, -1)))[0])
        return None if flat < 0 else flat

    def cell_bounds(self, flat: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.array(np.unravel_index(flat, self.counts))
        lo = np.asarray(self.box.lower) + idx * self.widths
        return lo, lo + self.widths

    def cell_centers(self) -> np.ndarray:
        axes = [np.asarray(self.box.lower[k]) + (np.arange(c) + 0.5) * self.widths[k]
                for k, c in enumerate(self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def origin_cells(self, layers: int = 1) -> np.ndarray:
        """Flat indices of cells within ``layers`` cell layers of the origin.

        ``layers=1`` gives exactly the cells whose closure contains the
        origin; each further layer adds one ring of neighbours.
        """
        if not self.box.contains_origin():
            raise ValueError("origin is not interior to the grid box")
        ranges = []
        for k in range(self.dim):
            t = -self.box.lower[k] / self.widths[k]
            near = int(np.floor(t + 1e-9))
            # the origin lies on a cell boundary when t is integral
            on_edge = abs(t - round(t)) <= 1e-9
            if on_edge:
                near = int(round(t))
                first, last = near - layers, near + layers - 1
            else:
                first, last = near - (layers - 1), near + (layers - 1)
            ranges.append(np.arange(max(first, 0), min(last, self.counts[k] - 1) + 1))
        mesh = np.meshgrid(*ranges, indexing="ij")
        idx = np.stack([g.ravel() for g in mesh], axis=1)
        return self.flat_index(idx)

    def boundary_nodes(self) -> np.ndarray:
        """Grid vertices lying on the surface of the box."""
        axes = [np.linspace(self.box.lower[k], self.box.upper[k], c + 1)
                for k, c in enumerate(self.counts)]
        if self.dim == 1:
            return np.array([[self.box.lower[0]], [self.box.upper[0]]])
        pts = []
        for k in range(self.dim):
            for face in (self.box.lower[k], self.box.upper[k]):
                others = [axes[j] if j != k else np.array([face]) for j in range(self.dim)]
                mesh = np.meshgrid(*others, indexing="ij")
                pts.append(np.stack([g.ravel() for g in mesh], axis=1))
        return np.unique(np.concatenate(pts), axis=0)

    def to_dict(self) -> dict:
        return {"lower": list(self.box.lower), "upper": list(self.box.upper),
                "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "UniformGrid":
        return cls(Box(tuple(d["lower"]), tuple(d["upper"])), tuple(d["counts"]))


def product_grid(gx: UniformGrid, gu: UniformGrid) -> UniformGrid:
    """Grid over ``X x U``; flat index is ``i * gu.n_cells + j``."""
    return UniformGrid(Box.product(gx.box, gu.box), gx.counts + gu.counts)


@dataclass(eq=False)
class CellMask:
    grid: UniformGrid
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if self.bits.size != self.grid.n_cells:
            raise ValueError(
                f"mask has {self.bits.size} bits, grid has {self.grid.n_cells} cells")

    @classmethod
    def empty(cls, grid: UniformGrid) -> "CellMask":
        return cls(grid, np.zeros(grid.n_cells, dtype=bool))

    @classmethod
    def from_indices(cls, grid: UniformGrid, indices) -> "CellMask":
        bits = np.zeros(grid.n_cells, dtype=bool)
        bits[np.asarray(list(indices), dtype=np.int64)] = True
        return cls(grid, bits)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def _same_grid(self, other: "CellMask") -> None:
        if self.grid != other.grid:
            raise GridMismatchError("masks belong to different grids")

    def __and__(self, other):
        return mask_and(self, other)

    def __or__(self, other):
        self._same_grid(other)
        return CellMask(self.grid, self.bits | other.bits)

    def __eq__(self, other):
        return isinstance(other, CellMask) and mask_eq(self, other)

    def __le__(self, other):
        return subset(self, other)

    def copy(self) -> "CellMask":
        return CellMask(self.grid, self.bits.copy())

    def intervals(self) -> list[tuple[float, float]]:
        """Maximal runs of set cells as ``(low, high)`` intervals (1-D only)."""
        if self.grid.dim != 1:
            raise ValueError("intervals are defined for 1-D grids only")
        lo = self.grid.box.lower[0]
        w = self.grid.widths[0]
        padded = np.concatenate([[False], self.bits, [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        return [(lo + a * w, lo + b * w) for a, b in zip(edges[::2], edges[1::2])]


def mask_and(a: CellMask, b: CellMask) -> CellMask:
    a._same_grid(b)
    return CellMask(a.grid, a.bits & b.bits)


def mask_eq(a: CellMask, b: CellMask) -> bool:
    a._same_grid(b)
    return bool(np.array_equal(a.bits, b.bits))


def subset(a: CellMask, b: CellMask) -> bool:
    """``a`` is contained in ``b`` iff ``a AND b == a``."""
    return mask_eq(mask_and(a, b), a)


def project_mask(w_mask: CellMask, state_grid: UniformGrid) -> CellMask:
    """State cell is set iff some control cell over it is set."""
    nx = state_grid.n_cells
    if w_mask.grid.n_cells % nx or w_mask.grid.counts[: state_grid.dim] != state_grid.counts:
        raise GridMismatchError("mask grid is not a product over the state grid")
    bits = w_mask.bits.reshape(nx, -1).any(axis=1)
    return CellMask(state_grid, bits)


def volume(mask: CellMask) -> float:
    return mask.count * mask.grid.cell_volume


def save_mask(mask: CellMask, path, extra: dict | None = None) -> None:
    """Write ``MAGIC | u32 header length | JSON header | packed bits``."""
    header = {"grid": mask.grid.to_dict(), "n_cells": mask.grid.n_cells}
    if extra:
        header["meta"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(np.packbits(mask.bits, bitorder="little").tobytes())


def load_mask(path) -> tuple[CellMask, dict]:
    data = Path(path).read_bytes()
    if data[: len(MASK_MAGIC)] != MASK_MAGIC:
        raise ValueError(f"{path}: not a mask file")
    off = len(MASK_MAGIC)
    size = int.from_bytes(data[off: off + 4], "little")
    header = json.loads(data[off + 4: off + 4 + size])
    grid = UniformGrid.from_dict(header["grid"])
    packed = np.frombuffer(data[off + 4 + size:], dtype=np.uint8)
    bits = np.unpackbits(packed, bitorder="little", count=grid.n_cells).astype(bool)
    return CellMask(grid, bits), header.get("meta", {})
