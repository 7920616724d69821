"""Reference implementations written independently of the package code."""

from __future__ import annotations

import math

import numpy as np
from decimal import Decimal

M0, M1 = 0xD2511F53, 0xCD9E8D57
W0, W1 = 0x9E3779B9, 0xBB67AE85
MASK = 0xFFFFFFFF


def philox4x32_10(ctr: list[int], key: list[int]) -> list[int]:
    """Plain-integer Philox4x32 with ten rounds."""
    c = list(ctr)
    k0, k1 = key
    for _ in range(10):
        p0 = M0 * c[0]
        p1 = M1 * c[2]
        c = [(p1 >> 32) ^ c[1] ^ k0, p1 & MASK, (p0 >> 32) ^ c[3] ^ k1, p0 & MASK]
        k0 = (k0 + W0) & MASK
        k1 = (k1 + W1) & MASK
    return c


def uniform(seed: int, stream: int, index: int, component: int) -> float:
    """Double in [0, 1) under the documented counter layout."""
    block, half = divmod(component, 2)
    ctr = [index & MASK, ((index >> 32) & 0xFFFFFF) | (block << 24), stream & MASK, stream >> 32]
    words = philox4x32_10(ctr, [seed & MASK, (seed >> 32) & MASK])
    hi, lo = words[2 * half], words[2 * half + 1]
    return ((hi >> 5) * 2 ** 26 + (lo >> 6)) / 2.0 ** 53


def variable_eps_replay(threshold: str, eps_init: str, accuracy: str) -> tuple[int, Decimal]:
    """Count predicate calls of the decimal-refinement search for ``alpha <= threshold``."""
    t, eps, acc = Decimal(threshold), Decimal(eps_init), Decimal(accuracy)
    alpha, calls = eps, 0
    while True:
        while True:
            calls += 1
            if alpha <= t:
                alpha += eps
            else:
                break
        alpha -= eps
        if eps == acc:
            return calls, alpha
        eps /= 10
        alpha += eps


def endpoint_decreases(L, x: float, lo: float, hi: float) -> bool:
    """Exact worst-case check for ``L`` monotone on each side of the origin."""
    worst = max(L(lo), L(hi))
    if lo <= 0.0 <= hi:
        worst = max(worst, L(0.0))
    return worst < L(x)


def benchmark_nominal(x: float, u: float) -> float:
    return -math.sin(2 * x) - x * u - 0.2 * x - u * u + u


def benchmark_delta(x: float, u: float) -> float:
    return 1.0 - math.exp(-0.5 * (x * x + u * u))


def benchmark_nominal_array(x, u):
    return -np.sin(2 * x) - x * u - 0.2 * x - u * u + u


def benchmark_delta_array(x, u):
    return 1.0 - np.exp(-0.5 * (x * x + u * u))
