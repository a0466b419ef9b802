"""Bounded test functions of overlaps.

Scalar functions act on a single overlap value; matrix functions act on the
off-diagonal pattern of an overlap matrix.  All forms are declarative
dataclasses so suites can be described in config files and serialized into
reports.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class Threshold:
    """scale * I(x >= cut)."""

    cut: float
    scale: float = 1.0

    def evaluate(self, x):
        return np.where(np.asarray(x, dtype=np.float64) >= self.cut, self.scale, 0.0)

    def bound(self, q_star: float) -> float:
        return abs(self.scale)

    def describe(self) -> str:
        return f"{self.scale:g}*I(x>={self.cut:g})"


@dataclass(frozen=True)
class Window:
    """scale * I(lo < x < hi), both inequalities strict."""

    lo: float
    hi: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"window needs lo < hi, got ({self.lo}, {self.hi})")

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where((x > self.lo) & (x < self.hi), self.scale, 0.0)

    def bound(self, q_star: float) -> float:
        return abs(self.scale)

    def describe(self) -> str:
        return f"{self.scale:g}*I({self.lo:g}<x<{self.hi:g})"


@dataclass(frozen=True)
class Polynomial:
    """sum_k coeffs[k] * x**k (ascending powers)."""

    coeffs: tuple

    def __post_init__(self) -> None:
        c = tuple(float(v) for v in self.coeffs)
        if not c:
            raise ValueError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for c in reversed(self.coeffs):
            out = out * x + c
        return out

    def bound(self, q_star: float) -> float:
        # crude sup bound on [-r, r], r = max(|q_star|, 1) kept at 1 since
        # overlaps live in [-1, 1]
        r = max(abs(q_star), 1.0)
        return float(sum(abs(c) * r ** k for k, c in enumerate(self.coeffs)))

    def describe(self) -> str:
        return "poly(" + ",".join(f"{c:g}" for c in self.coeffs) + ")"


ScalarFunction = Union[Threshold, Window, Polynomial]


@dataclass(frozen=True)
class Constant:
    """Constant matrix function; value 1 gives the exchangeability null channel."""

    value: float = 1.0

    def evaluate(self, R):
        R = np.asarray(R, dtype=np.float64)
        return np.full(R.shape[:-2], self.value, dtype=np.float64)

    def max_replica(self) -> int:
        return 0

    def bound(self, q_star: float) -> float:
        return abs(self.value)

    def describe(self) -> str:
        return f"const({self.value:g})"


@dataclass(frozen=True)
class PairProduct:
    """Product of scalar functions of selected pairwise overlaps.

    factors: tuples (l, lp, func) with 1-based replica labels l < lp; the
    factor applies func to the overlap of replicas l and lp.
    """

    factors: tuple

    def __post_init__(self) -> None:
        if not self.factors:
            raise ValueError("pair product needs at least one factor")
        for l, lp, _f in self.factors:
            if not (1 <= l < lp):
                raise ValueError(f"pair labels must satisfy 1 <= l < lp, got ({l}, {lp})")
        object.__setattr__(self, "factors", tuple((int(l), int(lp), f)
                                                  for l, lp, f in self.factors))

    def evaluate(self, R):
        """Evaluate on one matrix (n, n) or a batch (..., n, n)."""
        R = np.asarray(R, dtype=np.float64)
        n = R.shape[-1]
        if self.max_replica() > n:
            raise ValueError(f"pair product references replica {self.max_replica()} "
                             f"but matrix has n={n}")
        out = np.ones(R.shape[:-2], dtype=np.float64)
        for l, lp, f in self.factors:
            out = out * f.evaluate(R[..., l - 1, lp - 1])
        return out

    def max_replica(self) -> int:
        return max(lp for _l, lp, _f in self.factors)

    def bound(self, q_star: float) -> float:
        b = 1.0
        for _l, _lp, f in self.factors:
            b *= f.bound(q_star)
        return b

    def describe(self) -> str:
        return "*".join(f"[{l},{lp}]{f.describe()}" for l, lp, f in self.factors)


MatrixFunction = Union[Constant, PairProduct]


def scalar_from_dict(obj: dict) -> ScalarFunction:
    kind = obj.get("kind")
    if kind == "threshold":
        return Threshold(float(obj["cut"]), float(obj.get("scale", 1.0)))
    if kind == "window":
        return Window(float(obj["lo"]), float(obj["hi"]), float(obj.get("scale", 1.0)))
    if kind == "polynomial":
        return Polynomial(tuple(obj["coeffs"]))
    raise ValueError(f"unknown scalar function kind {kind!r}")


def matrix_from_dict(obj: dict) -> MatrixFunction:
    kind = obj.get("kind")
    if kind == "constant":
        return Constant(float(obj.get("value", 1.0)))
    if kind == "pair_product":
        factors = tuple((int(l), int(lp), scalar_from_dict(f))
                        for l, lp, f in obj["factors"])
        return PairProduct(factors)
    raise ValueError(f"unknown matrix function kind {kind!r}")
