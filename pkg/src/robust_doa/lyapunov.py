"""Candidate Lyapunov functions.

The parameterized family is ``L(x) = |Q S_d(x)|^2`` where ``S_d`` stacks all
monomials of total degree 1..d and ``Q`` is square. A full-rank ``Q`` makes
``L`` positive definite. :class:`FixedLyapunov` wraps an arbitrary
user-supplied expression instead.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .expr import Expression, parse

MAX_BASIS = 2000
RANK_RTOL = 1e-6


@dataclass(frozen=True)
class MonomialBasis:
    n: int
    d: int
    exponents: np.ndarray  # (r, n) int

    @property
    def r(self) -> int:
        return self.exponents.shape[0]

    def __call__(self, X) -> np.ndarray:
        """Monomial features ``(N, r)`` for states ``X (N, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.ones((X.shape[0], self.r))
        for k in range(self.n):
            col = X[:, k:k + 1]
            e = self.exponents[:, k]
            # integer powers by repeated multiplication keep results exact for
            # small integers and avoid pow() overhead
            p = np.ones_like(col)
            for deg in range(1, int(e.max(initial=0)) + 1):
                p = p * col
                out[:, e == deg] *= p
        return out

    def names(self) -> list[str]:
        terms = []
        for row in self.exponents:
            parts = [f"x{k + 1}" + (f"^{e}" if e > 1 else "") for k, e in enumerate(row) if e]
            terms.append("*".join(parts))
        return terms


def basis(n: int, d: int, max_size: int = MAX_BASIS) -> MonomialBasis:
    """Graded-lexicographic basis: degree ascending, lex descending within a degree."""
    if n < 1 or d < 1:
        raise ValueError("basis requires n >= 1 and d >= 1")
    r = comb(n + d, d) - 1
    if r > max_size:
        raise ValueError(f"basis size {r} exceeds the configured maximum {max_size}")
    rows = []
    for deg in range(1, d + 1):
        for combo in combinations_with_replacement(range(n), deg):
            e = [0] * n
            for k in combo:
                e[k] += 1
            rows.append(e)
    exps = np.array(rows, dtype=np.int64).reshape(-1, n)
    assert exps.shape[0] == r
    return MonomialBasis(n, d, exps)


def check_full_rank(Q, tol: float | None = None) -> bool:
    """Smallest singular value exceeds ``tol`` (default ``1e-6 * sigma_max``)."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("Q must be square")
    s = np.linalg.svd(Q, compute_uv=False)
    if s[0] == 0.0:
        return False
    if tol is None:
        tol = RANK_RTOL * s[0]
    return bool(s[-1] > tol)


@dataclass(frozen=True)
class LyapunovSOS:
    basis: MonomialBasis
    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        r = self.basis.r
        if Q.shape != (r, r):
            raise ValueError(f"Q must be {r}x{r} for this basis, got {Q.shape}")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def from_matrix(cls, Q, n: int, d: int) -> "LyapunovSOS":
        return cls(basis(n, d), Q)

    @property
    def n(self) -> int:
        return self.basis.n

    def __call__(self, X) -> np.ndarray:
        z = self.basis(X) @ self.Q.T
        return np.einsum("ij,ij->i", z, z)

    def full_rank(self, tol: float | None = None) -> bool:
        return check_full_rank(self.Q, tol)

    def gram(self) -> np.ndarray:
        return self.Q.T @ self.Q

    def coefficients(self) -> dict[tuple[int, ...], float]:
        """Expanded polynomial as ``{exponent tuple: coefficient}``."""
        G = self.gram()
        exps = self.basis.exponents
        out: dict[tuple[int, ...], float] = defaultdict(float)
        for i in range(self.basis.r):
            for j in range(self.basis.r):
                out[tuple(int(v) for v in exps[i] + exps[j])] += G[i, j]
        return dict(out)

    def describe(self) -> str:
        terms = []
        for e, c in sorted(self.coefficients().items(), key=lambda t: (-sum(t[0]), t[0])):
            mono = "*".join(f"x{k + 1}" + (f"^{p}" if p > 1 else "") for k, p in enumerate(e) if p)
            terms.append(f"{c:+.4f}*{mono}")
        return " ".join(terms)


def poly_eval(coeffs: dict[tuple[int, ...], float], X) -> np.ndarray:
    """Evaluate an expanded polynomial at ``X (N, n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(X.shape[0])
    for e, c in coeffs.items():
        total += c * np.prod(X ** np.asarray(e), axis=1)
    return total


@dataclass(frozen=True)
class FixedLyapunov:
    """A user-supplied positive-definite function such as ``x1^2``."""

    expression: Expression

    def __post_init__(self):
        zero = self.expression(np.zeros(self.expression.n))
        if abs(zero) > 1e-12:
            raise ValueError(f"Lyapunov candidate is {zero} at the origin, expected 0")

    @classmethod
    def parse(cls, source: str, n: int) -> "FixedLyapunov":
        return cls(parse(source, n, 0))

    @property
    def n(self) -> int:
        return self.expression.n

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        values = self.expression(X)
        nonzero = np.any(X != 0, axis=1)
        if np.any(values[nonzero] <= 0):
            i = int(np.flatnonzero(nonzero & (values <= 0))[0])
            raise ValueError(f"Lyapunov candidate not positive at x={X[i].tolist()}")
        return values
