"""Plant sets given by a nominal model and a componentwise error bound.

Every plant ``f`` in the set satisfies ``f(0, 0) = 0`` and
``nominal(x, u) - delta(x, u) <= f(x, u) <= nominal(x, u) + delta(x, u)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .expr import DomainError, Expression, parse


class PlantError(ValueError):
    pass


class PlantEvaluationError(ArithmeticError):
    def __init__(self, message: str, x=None, u=None):
        where = "" if x is None else f" at x={np.round(x, 12).tolist()}, u={np.round(u, 12).tolist()}"
        super().__init__(message + where)
        self.x = x
        self.u = u


@dataclass(frozen=True)
class SuccessorBox:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def __iter__(self):
        return iter((self.lower, self.upper))


@dataclass(frozen=True)
class PlantSet:
    n: int
    m: int
    nominal: tuple[Expression, ...]
    delta: tuple[Expression, ...]
    name: str = "custom"
    _origin_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise PlantError("state and input dimensions must be >= 1")
        if len(self.nominal) != self.n or len(self.delta) != self.n:
            raise PlantError(f"need {self.n} nominal and {self.n} delta expressions")
        for e in (*self.nominal, *self.delta):
            if (e.n, e.m) != (self.n, self.m):
                raise PlantError(f"expression {e.source!r} declared for a different (n, m)")
        c, h = self.evaluate(np.zeros((1, self.n)), np.zeros((1, self.m)))
        if np.any(np.abs(c) > self._origin_tol):
            raise PlantError(f"nominal model does not vanish at the origin: {c[0].tolist()}")
        if np.any(np.abs(h) > self._origin_tol):
            raise PlantError(f"error bound does not vanish at the origin: {h[0].tolist()}")

    @classmethod
    def from_expressions(cls, nominal, delta, n: int, m: int, name: str = "custom") -> "PlantSet":
        nominal = [nominal] if isinstance(nominal, str) else list(nominal)
        delta = [delta] if isinstance(delta, str) else list(delta)
        return cls(n, m, tuple(parse(s, n, m) for s in nominal),
                   tuple(parse(s, n, m) for s in delta), name)

    def evaluate(self, X, U) -> tuple[np.ndarray, np.ndarray]:
        """Nominal successor and bound for batches ``X (N, n)``, ``U (N, m)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        center = np.empty((X.shape[0], self.n))
        half = np.empty((X.shape[0], self.n))
        for k in range(self.n):
            for out, exprs, label in ((center, self.nominal, "nominal"),
                                      (half, self.delta, "delta")):
                try:
                    out[:, k] = exprs[k](X, U)
                except DomainError as err:
                    i = err.index or 0
                    raise PlantEvaluationError(
                        f"{label}[{k}] evaluation failed: {err}", X[i], U[i]) from err
        neg = half < 0
        if neg.any():
            i = int(np.flatnonzero(neg.any(axis=1))[0])
            raise PlantEvaluationError("negative error bound", X[i], U[i])
        return center, half

    def successor_box(self, x, u) -> SuccessorBox:
        c, h = self.evaluate(np.reshape(x, (1, self.n)), np.reshape(u, (1, self.m)))
        return SuccessorBox(c[0] - h[0], c[0] + h[0])

    def fingerprint(self) -> str:
        text = "|".join([str(self.n), str(self.m)] + [e.source for e in self.nominal]
                        + [e.source for e in self.delta])
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "nominal": [e.source for e in self.nominal],
                "delta": [e.source for e in self.delta]}


_BUILTINS = {
    "paper-sec5": dict(
        nominal="-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1",
        delta="1 - exp(-0.5*(x1^2 + u1^2))",
        n=1, m=1,
    ),
}


def available() -> list[str]:
    return sorted(_BUILTINS)


def builtin(name: str) -> PlantSet:
    try:
        entry = _BUILTINS[name]
    except KeyError:
        raise PlantError(f"unknown plant {name!r}; available: {', '.join(available())}") from None
    return PlantSet.from_expressions(entry["nominal"], entry["delta"], entry["n"], entry["m"], name)
