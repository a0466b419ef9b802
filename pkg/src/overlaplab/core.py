"""Replica vectors, overlap matrices, constraint matrices, estimates.

Conventions used throughout the package:

* replicas are points on (or inside) the unit ball, so every overlap lies
  in [-1, 1] and self-overlaps equal a common value q_star <= 1;
* constraint matrices state target off-diagonal overlaps with a shared
  open-interval tolerance epsilon (diagonal entries hold q_star);
* matrix comparisons ignore the diagonal and use strict inequalities.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# PSD acceptance is relative to the largest diagonal entry.
PSD_REL_TOL = 1e-9
DIAG_TOL = 1e-9
NORM_TOL = 1e-9


def _check_square_symmetric(entries: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what}: entries must be a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError(f"{what}: empty matrix")
    if not np.isfinite(a).all():
        raise ValueError(f"{what}: non-finite entries")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ValueError(f"{what}: matrix is not symmetric")
    return a


def _check_psd(a: np.ndarray, what: str) -> None:
    tol = PSD_REL_TOL * max(float(np.max(np.diag(a))), 1.0)
    eigmin = float(np.linalg.eigvalsh(a)[0])
    if eigmin < -tol:
        raise ValueError(f"{what}: matrix is not positive semidefinite "
                         f"(min eigenvalue {eigmin:.3e}, tolerance {-tol:.3e}); "
                         "rejected, not repaired")


@dataclass(frozen=True)
class ReplicaVector:
    """A single replica embedded in Euclidean space."""

    coords: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("replica coordinates must be a non-empty 1-d array")
        if not np.isfinite(c).all():
            raise ValueError("replica coordinates must be finite")
        sq = float(c @ c)
        if sq > 1.0 + NORM_TOL:
            raise ValueError(f"replica squared norm {sq} exceeds 1")
        object.__setattr__(self, "coords", c)

    @property
    def dimension(self) -> int:
        return int(self.coords.size)

    def overlap(self, other: "ReplicaVector") -> float:
        if other.dimension != self.dimension:
            raise ValueError("replica dimensions differ")
        return float(self.coords @ other.coords)


@dataclass(frozen=True)
class OverlapMatrix:
    """Gram matrix of n replicas; diagonal holds the common self-overlap."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        a = _check_square_symmetric(self.entries, "OverlapMatrix")
        d = np.diag(a)
        if float(np.max(d) - np.min(d)) > DIAG_TOL:
            raise ValueError("OverlapMatrix: diagonal entries are not constant")
        _check_psd(a, "OverlapMatrix")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @property
    def q_star(self) -> float:
        return float(self.entries[0, 0])

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "q_star": self.q_star,
            "entries": [float(x) for x in self.entries.reshape(-1)],
        })

    @classmethod
    def from_json(cls, text: str) -> "OverlapMatrix":
        obj = json.loads(text)
        n = int(obj["n"])
        entries = np.asarray(obj["entries"], dtype=np.float64).reshape(n, n)
        return cls(entries)


@dataclass(frozen=True)
class ConstraintMatrix:
    """Target overlap pattern: off-diagonal values with tolerance epsilon."""

    entries: np.ndarray
    epsilon: float

    def __post_init__(self) -> None:
        a = _check_square_symmetric(self.entries, "ConstraintMatrix")
        d = np.diag(a)
        if float(np.max(d) - np.min(d)) > DIAG_TOL:
            raise ValueError("ConstraintMatrix: diagonal entries are not constant")
        _check_psd(a, "ConstraintMatrix")
        if not (float(self.epsilon) > 0.0):
            raise ValueError("ConstraintMatrix: epsilon must be positive")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @property
    def q_star(self) -> float:
        return float(self.entries[0, 0])

    @classmethod
    def constant(cls, n: int, q_star: float, off_diagonal: float,
                 epsilon: float) -> "ConstraintMatrix":
        if n < 2:
            raise ValueError("constant constraint needs n >= 2")
        a = np.full((n, n), float(off_diagonal))
        np.fill_diagonal(a, float(q_star))
        return cls(a, epsilon)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "q_star": self.q_star,
            "epsilon": self.epsilon,
            "entries": [float(x) for x in self.entries.reshape(-1)],
        })

    @classmethod
    def from_json(cls, text: str) -> "ConstraintMatrix":
        obj = json.loads(text)
        n = int(obj["n"])
        entries = np.asarray(obj["entries"], dtype=np.float64).reshape(n, n)
        return cls(entries, float(obj["epsilon"]))


def overlap_matrix(replicas) -> OverlapMatrix:
    """Gram matrix of a batch of replicas.

    Accepts an (n, d) array or a sequence of ReplicaVector with equal
    dimensions.
    """
    if isinstance(replicas, np.ndarray):
        x = np.asarray(replicas, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("expected an (n, d) array of replica rows")
    else:
        rows = list(replicas)
        if not rows:
            raise ValueError("no replicas given")
        dims = {r.dimension for r in rows}
        if len(dims) != 1:
            raise ValueError(f"replica dimensions differ: {sorted(dims)}")
        x = np.stack([r.coords for r in rows])
    return OverlapMatrix(x @ x.T)


def matrix_approx(R, A: ConstraintMatrix) -> bool:
    """Strict open-interval match of off-diagonal overlaps against A.

    Every off-diagonal entry of R must lie within (a - eps, a + eps) for the
    corresponding target a.  Diagonals are ignored.
    """
    r = R.entries if isinstance(R, OverlapMatrix) else np.asarray(R, dtype=np.float64)
    if r.shape != A.entries.shape:
        raise ValueError(f"size mismatch: overlaps {r.shape} vs constraints {A.entries.shape}")
    n = A.n
    if n < 2:
        return True
    off = ~np.eye(n, dtype=bool)
    return bool(np.all(np.abs(r[off] - A.entries[off]) < A.epsilon))


def a_star(A: ConstraintMatrix) -> float:
    """Largest constrained overlap between the last replica and the others."""
    if A.n < 2:
        raise ValueError("a_star needs n >= 2")
    return float(np.max(A.entries[:-1, -1]))


def ultrametric_indicator(r12, r13, r23):
    """1 when r12 >= min(r13, r23), else 0.  Broadcasts over arrays."""
    out = np.greater_equal(r12, np.minimum(r13, r23)).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate: mean, standard error, sample count."""

    mean: float
    std_error: float
    n_samples: int

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("estimate needs at least one sample")
        if not (self.std_error >= 0.0):
            raise ValueError("standard error must be non-negative")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "std_error", float(self.std_error))
        object.__setattr__(self, "n_samples", int(self.n_samples))

    def merge(self, other: "Estimate") -> "Estimate":
        """Pool two independent estimates of the same quantity."""
        n1, n2 = self.n_samples, other.n_samples
        n = n1 + n2
        mean = (n1 * self.mean + n2 * other.mean) / n
        se = float(np.sqrt((n1 * self.std_error) ** 2 + (n2 * other.std_error) ** 2)) / n
        return Estimate(mean, se, n)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples}


def mean_estimate(values: np.ndarray) -> Estimate:
    """Plain mean/SE estimate from per-realization values."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("expected a non-empty 1-d array of values")
    se = 0.0 if v.size == 1 else float(v.std(ddof=1) / np.sqrt(v.size))
    return Estimate(float(v.mean()), se, int(v.size))
