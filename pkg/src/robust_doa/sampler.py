"""Counter-based uniform sampling.

Every uniform draw is a pure function of ``(seed, stream, index, component)``
computed with Philox4x32-10, so any sample can be recomputed without
generating its predecessors and parallel workers never share state.

Counter layout (four 32-bit words)::

    ctr[0] = index & 0xFFFFFFFF
    ctr[1] = (index >> 32) & 0xFFFFFF | block << 24
    ctr[2] = stream & 0xFFFFFFFF
    ctr[3] = stream >> 32

where ``block = component // 2``; each Philox block yields two doubles.
The key is the 64-bit seed split into two words.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old and warns on first use
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# Stream purposes live in the top byte of the 64-bit stream id.
PURPOSE_STATE_CONTROL = 1
PURPOSE_SUCCESSOR = 2
PURPOSE_STATE = 3
PURPOSE_SIM_INIT = 4
PURPOSE_SIM_NOISE = 5
PURPOSE_PROBE = 6
PURPOSE_PSO = 7

MAX_COMPONENTS = 2 * 256


def stream_id(purpose: int, ident: int = 0) -> int:
    """Compose a 64-bit stream id from a purpose tag and a per-purpose id."""
    if not 0 <= ident < (1 << 56):
        raise ValueError(f"stream ident out of range: {ident}")
    return (purpose << 56) | ident


@nb.njit(cache=True, inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        n0 = ((p1 >> s32) ^ c1 ^ k0) & mask
        n1 = p1 & mask
        n2 = ((p0 >> s32) ^ c3 ^ k1) & mask
        n3 = p0 & mask
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _to_unit(a, b):
    # 53-bit double in [0, 1) from two 32-bit words.
    hi = np.float64(a >> np.uint64(5))
    lo = np.float64(b >> np.uint64(6))
    return (hi * 67108864.0 + lo) / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def uniform_scalar(seed, stream, index, component):
    """One U[0, 1) draw for ``(seed, stream, index, component)``."""
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    k0 = seed & mask
    k1 = (seed >> s32) & mask
    block = np.uint64(component // 2)
    c0 = index & mask
    c1 = ((index >> s32) & np.uint64(0xFFFFFF)) | (block << np.uint64(24))
    c2 = stream & mask
    c3 = (stream >> s32) & mask
    r0, r1, r2, r3 = _philox_block(c0, c1, c2, c3, k0, k1)
    if component % 2 == 0:
        return _to_unit(r0, r1)
    return _to_unit(r2, r3)


@nb.njit(cache=True, parallel=True)
def _uniform_matrix(seed, stream, start, count, dim, out):
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    k0 = seed & mask
    k1 = (seed >> s32) & mask
    c2 = stream & mask
    c3 = (stream >> s32) & mask
    nblocks = (dim + 1) // 2
    for i in nb.prange(count):
        index = start + np.uint64(i)
        c0 = index & mask
        hi = (index >> s32) & np.uint64(0xFFFFFF)
        for b in range(nblocks):
            c1 = hi | (np.uint64(b) << np.uint64(24))
            r0, r1, r2, r3 = _philox_block(c0, c1, c2, c3, k0, k1)
            out[i, 2 * b] = _to_unit(r0, r1)
            if 2 * b + 1 < dim:
                out[i, 2 * b + 1] = _to_unit(r2, r3)


@nb.njit(cache=True, parallel=True)
def _uniform_streams(seed, stream_base, streams, index, dim, out):
    # One row per stream, all at the same counter index.
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    k0 = seed & mask
    k1 = (seed >> s32) & mask
    nblocks = (dim + 1) // 2
    c0 = index & mask
    hi = (index >> s32) & np.uint64(0xFFFFFF)
    for i in nb.prange(streams.shape[0]):
        stream = stream_base | streams[i]
        c2 = stream & mask
        c3 = (stream >> s32) & mask
        for b in range(nblocks):
            c1 = hi | (np.uint64(b) << np.uint64(24))
            r0, r1, r2, r3 = _philox_block(c0, c1, c2, c3, k0, k1)
            out[i, 2 * b] = _to_unit(r0, r1)
            if 2 * b + 1 < dim:
                out[i, 2 * b + 1] = _to_unit(r2, r3)


@nb.njit(cache=True)
def philox4x32(counter, key):
    """Raw Philox4x32-10 block; ``counter`` has 4 words, ``key`` 2 words."""
    out = np.empty(4, dtype=np.uint64)
    r = _philox_block(np.uint64(counter[0]), np.uint64(counter[1]),
                      np.uint64(counter[2]), np.uint64(counter[3]),
                      np.uint64(key[0]), np.uint64(key[1]))
    out[0], out[1], out[2], out[3] = r
    return out


def _check_dim(dim: int) -> None:
    if not 1 <= dim <= MAX_COMPONENTS:
        raise ValueError(f"dimension must be in [1, {MAX_COMPONENTS}], got {dim}")


def uniforms(seed: int, stream: int, count: int, dim: int, start: int = 0) -> np.ndarray:
    """``(count, dim)`` array of U[0,1) draws at indices ``start..start+count-1``."""
    _check_dim(dim)
    if start < 0 or start + count > (1 << 56):
        raise ValueError("sample index out of range")
    out = np.empty((count, dim), dtype=np.float64)
    if count:
        _uniform_matrix(np.uint64(seed), np.uint64(stream), np.uint64(start), count, dim, out)
    return out


def uniforms_across_streams(seed: int, purpose: int, idents: np.ndarray, index: int,
                            dim: int) -> np.ndarray:
    """Row ``i`` holds the draw at ``index`` on stream ``(purpose, idents[i])``."""
    _check_dim(dim)
    idents = np.ascontiguousarray(idents, dtype=np.uint64)
    out = np.empty((idents.shape[0], dim), dtype=np.float64)
    if idents.shape[0]:
        base = np.uint64(stream_id(purpose, 0))
        _uniform_streams(np.uint64(seed), base, idents, np.uint64(index), dim, out)
    return out


@dataclass(frozen=True)
class SampleConfig:
    """Sample sizes and the master seed for one estimation run."""

    seed: int = 0
    n_xu: int = 5_000_000
    n_succ: int = 500
    n_x: int = 1_000_000

    def __post_init__(self):
        if not 0 <= self.seed < (1 << 64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        for name in ("n_xu", "n_succ", "n_x"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def sample_box(box, count: int, seed: int, stream: int, start: int = 0) -> np.ndarray:
    """``count`` points uniform on ``box`` (anything with ``lower``/``upper``)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lower = np.asarray(box.lower, dtype=float)
    upper = np.asarray(box.upper, dtype=float)
    r = uniforms(seed, stream, count, lower.size, start)
    return lower + r * (upper - lower)


def sample_successors(plant, x, u, count: int, seed: int, point_id: int) -> np.ndarray:
    """``count`` states uniform on the plant's successor box at ``(x, u)``.

    The stream is keyed by ``point_id`` so each data point's successors can
    be regenerated in isolation.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    c, h = plant.evaluate(np.reshape(x, (1, -1)), np.reshape(u, (1, -1)))
    r = uniforms(seed, stream_id(PURPOSE_SUCCESSOR, point_id), count, c.shape[1])
    return successor_points(c[0], h[0], r)


def successor_points(center, half, r):
    """Map U[0,1) draws onto ``[center - half, center + half]``.

    A zero-width box maps every draw to the center exactly.
    """
    return center + half * (2.0 * r - 1.0)
