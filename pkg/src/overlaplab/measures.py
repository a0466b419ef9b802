"""Reference random measures with known overlap structure.

Two families are provided:

* hierarchical cascade measures built from Poisson-Dirichlet weights, the
  standard exactly-ultrametric reference family whose overlap identities
  hold up to a controlled truncation error;
* finite atomic measures (a single point mass, or any explicit list of
  atoms and weights, e.g. an exactly enumerated Gibbs measure).

A realization is one draw of the random measure.  Statistical estimators
average an inner replica average over realizations; atomic realizations
additionally expose exact inner sums through `inner_patterns`, which
partitions all atoms into groups on which the overlaps with a given replica
sample are constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import OverlapMatrix
from .rng import generator, subseq

DEFAULT_TRUNCATION = 512
WEIGHT_SUM_TOL = 1e-9


def sample_pd_weights(zeta: float, truncation: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized largest points of a Poisson process with intensity x**(-zeta-1).

    Uses the arrival representation: arrival times of a unit-rate Poisson
    process on (0, inf), mapped through u -> u**(-1/zeta), give the points in
    decreasing order; the first `truncation` points are kept and normalized.
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    if truncation < 2:
        raise ValueError(f"truncation must be >= 2, got {truncation}")
    arrivals = np.cumsum(rng.standard_exponential(truncation))
    x = arrivals ** (-1.0 / zeta)
    return x / x.sum()


@dataclass(frozen=True)
class OverlapLaw:
    """Discrete law of the overlap of two independent replicas."""

    values: tuple
    masses: tuple
    truncation_bias: float = 0.0

    def __post_init__(self) -> None:
        v = tuple(float(x) for x in self.values)
        m = tuple(float(x) for x in self.masses)
        if len(v) != len(m) or not v:
            raise ValueError("law needs matching non-empty values and masses")
        if any(x < 0 for x in m) or abs(sum(m) - 1.0) > 1e-12:
            raise ValueError("law masses must be non-negative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "masses", m)

    def mean_of(self, func) -> float:
        """Exact mean of a scalar function under the law."""
        total = 0.0
        for v, m in zip(self.values, self.masses):
            total += m * float(func.evaluate(v))
        return total


@dataclass
class GroupSample:
    """m sampled replica groups of a fixed size from one realization.

    weights is None for plain Monte Carlo groups (each group counts 1/m);
    exact enumeration returns one row per atom tuple with its probability.
    """

    overlaps: np.ndarray        # (m, size, size)
    member: object              # per-source replica identifiers, shape (m, size, ...)
    weights: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return int(self.overlaps.shape[0])

    @property
    def size(self) -> int:
        return int(self.overlaps.shape[1])

    def average(self, values: np.ndarray) -> float:
        """Average per-group values, respecting enumeration weights."""
        v = np.asarray(values, dtype=np.float64)
        if self.weights is None:
            return float(v.mean(axis=0))
        return float(self.weights @ v)


class MeasureSource:
    """A random measure: realize(seed sequence) -> one realization.

    gg_reference marks sources whose overlap identities are asserted by the
    test suites (reference measures); finite spin models only have their
    residuals recorded.
    """

    q_star: float
    gg_reference: bool = False
    label: str = "source"

    def realize(self, seq: np.random.SeedSequence):
        raise NotImplementedError

    def exact_overlap_law(self) -> Optional[OverlapLaw]:
        return None

    def overlap_grid(self) -> Optional[tuple]:
        """Possible overlap values when the source is discrete, else None."""
        return None


def exact_overlap_law(source: MeasureSource) -> OverlapLaw:
    """Exact two-replica overlap law of the source.

    Supported for sources carrying a closed-form law (single-atom sources
    and one-level cascades).  Deeper cascades are unsupported here; their
    pair means must be estimated from an independent seed block.
    """
    law = source.exact_overlap_law()
    if law is None:
        raise ValueError(f"source {source.label!r} has no exact overlap law; "
                         "estimate pair means from an independent seed block instead")
    return law


def sample_replicas(source: MeasureSource, n: int, seq: np.random.SeedSequence):
    """n i.i.d. replicas from one fresh realization of the source.

    Returns (vectors, OverlapMatrix): the embedded replica rows alongside
    their Gram matrix, so downstream geometry (barycenters, norm checks) can
    reuse the same draw.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 replicas, got {n}")
    realization = source.realize(subseq(seq, 0))
    rng = generator(subseq(seq, 1))
    sample = realization.sample_groups(1, n, rng)
    vectors = realization.embed(sample.member[0])
    return vectors, OverlapMatrix(sample.overlaps[0])


class FiniteAtomicRealization:
    """A measure with an explicit finite list of atoms and weights."""

    def __init__(self, atoms: np.ndarray, weights: np.ndarray):
        atoms = np.asarray(atoms, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if atoms.ndim != 2 or weights.ndim != 1 or atoms.shape[0] != weights.size:
            raise ValueError("atoms must be (A, d) with matching (A,) weights")
        if weights.size < 1 or np.any(weights < 0):
            raise ValueError("weights must be non-negative and non-empty")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"atom weights must sum to 1, got {float(weights.sum())}")
        sq = np.einsum("ad,ad->a", atoms, atoms)
        if float(np.max(sq) - np.min(sq)) > 1e-9:
            raise ValueError("atoms must share a common self-overlap")
        self.atoms = atoms
        self.weights = weights
        self.q_star = float(sq[0])
        self._cumw = np.cumsum(weights)

    @property
    def atom_count(self) -> int:
        return int(self.weights.size)

    def sample_groups(self, m: int, size: int, rng: np.random.Generator) -> GroupSample:
        u = rng.random((m, size))
        ids = np.searchsorted(self._cumw, u * self._cumw[-1], side="right")
        np.clip(ids, 0, self.atom_count - 1, out=ids)
        pts = self.atoms[ids]                      # (m, size, d)
        overlaps = np.einsum("msd,mtd->mst", pts, pts)
        return GroupSample(overlaps, ids)

    def enumerate_tuples(self, size: int, cap: int) -> Optional[GroupSample]:
        """All atom tuples of the given size, or None when above cap."""
        total = self.atom_count ** size
        if total > cap:
            return None
        ids = np.indices((self.atom_count,) * size).reshape(size, -1).T  # (total, size)
        pts = self.atoms[ids]
        overlaps = np.einsum("msd,mtd->mst", pts, pts)
        w = np.ones(total, dtype=np.float64)
        for col in range(size):
            w = w * self.weights[ids[:, col]]
        return GroupSample(overlaps, ids, weights=w)

    def inner_patterns(self, member_row: np.ndarray):
        """All atoms against one sampled group: (masses, overlap patterns)."""
        pts = self.atoms[np.asarray(member_row, dtype=np.int64)]   # (size, d)
        patterns = self.atoms @ pts.T                              # (A, size)
        return self.weights, patterns

    def embed(self, member_row: np.ndarray) -> np.ndarray:
        return self.atoms[np.asarray(member_row, dtype=np.int64)].copy()

    def exact_pair_mean(self, func) -> float:
        """Exact inner mean of func(overlap) over two independent replicas."""
        a = self.atoms
        if self.atom_count <= 1024:
            vals = func.evaluate(a @ a.T)
            return float(self.weights @ vals @ self.weights)
        total = 0.0
        for start in range(0, self.atom_count, 1024):
            rows = a[start:start + 1024] @ a.T
            total += float(self.weights[start:start + 1024] @ func.evaluate(rows) @ self.weights)
        return total

    def exact_triple_indicator_mean(self) -> float:
        """Exact mean of the ultrametric indicator over three replicas."""
        if self.atom_count > 512:
            raise ValueError("exact triple average limited to 512 atoms")
        R = self.atoms @ self.atoms.T
        r12 = R[:, :, None]
        r13 = R[:, None, :]
        r23 = R[None, :, :]
        ind = (r12 >= np.minimum(r13, r23)).astype(np.float64)
        w = self.weights
        return float(np.einsum("a,b,c,abc->", w, w, w, ind))


class DiracSource(MeasureSource):
    """Single-atom measure: every overlap equals q_star, all tests are exact."""

    gg_reference = True

    def __init__(self, q_star: float = 1.0, dimension: int = 1):
        if not 0.0 < q_star <= 1.0:
            raise ValueError(f"q_star must lie in (0, 1], got {q_star}")
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.q_star = float(q_star)
        self.dimension = int(dimension)
        self.label = f"dirac(q*={q_star:g})"

    def realize(self, seq: np.random.SeedSequence) -> FiniteAtomicRealization:
        atom = np.zeros(self.dimension)
        atom[0] = np.sqrt(self.q_star)
        return FiniteAtomicRealization(atom[None, :], np.array([1.0]))

    def exact_overlap_law(self) -> OverlapLaw:
        # same float path as the realized atom dot product, so sampled
        # overlaps and the law value agree bitwise
        root = float(np.sqrt(self.q_star))
        return OverlapLaw((root * root,), (1.0,), 0.0)

    def overlap_grid(self) -> tuple:
        root = float(np.sqrt(self.q_star))
        return (root * root,)


class CascadeSource(MeasureSource):
    """Hierarchical cascade measure.

    zetas: strictly increasing level parameters in (0, 1), one per level.
    overlaps: q_0 < q_1 < ... < q_r; the last value is the self-overlap.
    truncation: atoms kept per node of the weight tree.
    dimension: minimum embedding dimension for sampled replicas.
    """

    gg_reference = True

    def __init__(self, zetas, overlaps, truncation: int = DEFAULT_TRUNCATION,
                 dimension: int = 0):
        zetas = tuple(float(z) for z in zetas)
        overlaps = tuple(float(q) for q in overlaps)
        if not zetas:
            raise ValueError("cascade needs at least one level")
        if any(not 0.0 < z < 1.0 for z in zetas):
            raise ValueError(f"level parameters must lie in (0, 1), got {zetas}")
        if any(b <= a for a, b in zip(zetas, zetas[1:])):
            raise ValueError(f"level parameters must be strictly increasing, got {zetas}")
        if len(overlaps) != len(zetas) + 1:
            raise ValueError(f"need {len(zetas) + 1} overlap values for "
                             f"{len(zetas)} levels, got {len(overlaps)}")
        if overlaps[0] < 0.0 or overlaps[-1] > 1.0:
            raise ValueError(f"overlap values must lie in [0, 1], got {overlaps}")
        if any(b <= a for a, b in zip(overlaps, overlaps[1:])):
            raise ValueError(f"overlap values must be strictly increasing, got {overlaps}")
        if truncation < 2:
            raise ValueError("truncation must be >= 2")
        self.zetas = zetas
        self.overlaps = overlaps
        self.truncation = int(truncation)
        self.dimension = int(dimension)
        self.q_star = overlaps[-1]
        self.r = len(zetas)
        self.label = f"cascade(r={self.r},zetas={','.join(f'{z:g}' for z in zetas)})"

    def realize(self, seq: np.random.SeedSequence) -> "CascadeRealization":
        return CascadeRealization(self, seq)

    def overlap_grid(self) -> tuple:
        return self.overlaps

    def exact_overlap_law(self) -> Optional[OverlapLaw]:
        if self.r != 1:
            return None
        zeta = self.zetas[0]
        bias = _pd_truncation_bias(zeta, self.truncation)
        return OverlapLaw((self.overlaps[0], self.q_star), (zeta, 1.0 - zeta), bias)


def _pd_truncation_bias(zeta: float, truncation: int) -> float:
    """First-order estimate of the relative weight mass lost to truncation.

    The unnormalized point at arrival time u is u**(-1/zeta); conditional on
    the last kept arrival being near its mean, the expected dropped mass is
    the integrated intensity beyond it.  This is a size estimate used for
    reporting, not a rigorous bound.
    """
    s = 1.0 / zeta
    tail = truncation ** (1.0 - s) / (s - 1.0)
    kept = float(np.sum(np.arange(1, truncation + 1, dtype=np.float64) ** (-s)))
    return tail / (kept + tail)


class CascadeRealization:
    """One draw of a cascade: a lazily materialized tree of child weights.

    Node identity is the path from the root (a tuple of child indices).
    Child weights of each visited node are drawn once, from a seed keyed by
    the path, so the realization is a deterministic function of its seed
    sequence no matter which queries are made first.
    """

    atom_count = None  # too many atoms to enumerate; inner sums use patterns

    def __init__(self, source: CascadeSource, seq: np.random.SeedSequence):
        self.source = source
        self.q_star = source.q_star
        self.qs = np.asarray(source.overlaps, dtype=np.float64)
        self.r = source.r
        self._seq = seq
        self._nodes: dict = {}

    def _node(self, path: tuple):
        got = self._nodes.get(path)
        if got is None:
            depth = len(path)
            rng = generator(subseq(self._seq, depth, *path))
            w = sample_pd_weights(self.source.zetas[depth], self.source.truncation, rng)
            got = (w, np.cumsum(w))
            self._nodes[path] = got
        return got

    def _sample_paths(self, count: int, rng: np.random.Generator) -> np.ndarray:
        paths = np.zeros((count, self.r), dtype=np.int64)
        groups = {(): np.arange(count)}
        for depth in range(self.r):
            next_groups = {}
            for prefix in sorted(groups):
                idx = groups[prefix]
                w, cum = self._node(prefix)
                u = rng.random(idx.size)
                children = np.searchsorted(cum, u * cum[-1], side="right")
                np.clip(children, 0, w.size - 1, out=children)
                paths[idx, depth] = children
                for c in np.unique(children):
                    next_groups[prefix + (int(c),)] = idx[children == c]
            groups = next_groups
        return paths

    def overlap_of_paths(self, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
        """Overlap from tree positions: q at the depth of the deepest common node."""
        pa = np.asarray(pa, dtype=np.int64)
        pb = np.asarray(pb, dtype=np.int64)
        eq = (pa == pb).astype(np.int64)
        lcp = np.cumprod(eq, axis=-1).sum(axis=-1)
        return self.qs[lcp]

    def sample_groups(self, m: int, size: int, rng: np.random.Generator) -> GroupSample:
        paths = self._sample_paths(m * size, rng).reshape(m, size, self.r)
        overlaps = self.overlap_of_paths(paths[:, :, None, :], paths[:, None, :, :])
        return GroupSample(overlaps, paths)

    def enumerate_tuples(self, size: int, cap: int):
        return None

    def exact_level_probs(self, node_cap: int = 2048) -> Optional[np.ndarray]:
        """P(two independent draws share exactly d path levels), d = 0..r.

        Exact given the realized weight tree.  Needs every node down to depth
        r-1, so returns None when that exceeds node_cap nodes.
        """
        needed = sum(self.source.truncation ** d for d in range(self.r))
        if needed > node_cap:
            return None
        probs_ge = np.empty(self.r + 1)
        probs_ge[0] = 1.0
        frontier = [((), 1.0)]
        for depth in range(self.r):
            total = 0.0
            deeper = []
            for path, sq_mass in frontier:
                w, _cum = self._node(path)
                wsq = w * w
                total += sq_mass * float(wsq.sum())
                if depth + 1 < self.r:
                    deeper.extend((path + (k,), sq_mass * float(v))
                                  for k, v in enumerate(wsq))
            probs_ge[depth + 1] = total
            frontier = deeper
        probs = np.empty(self.r + 1)
        probs[:-1] = probs_ge[:-1] - probs_ge[1:]
        probs[-1] = probs_ge[-1]
        return probs

    def exact_pair_mean(self, func, node_cap: int = 2048) -> Optional[float]:
        """Inner mean of func(overlap) over two independent replicas, exact
        given the realization; None when the tree is too wide to visit."""
        probs = self.exact_level_probs(node_cap)
        if probs is None:
            return None
        vals = np.asarray(func.evaluate(self.qs), dtype=np.float64)
        return float(probs @ vals)

    def inner_patterns(self, member_row: np.ndarray):
        """Partition all atoms by their overlap pattern with one sampled group.

        Groups are: each distinct sampled leaf (an exact atom), and for every
        node on the spanning tree of the sampled paths the residual mass that
        branches off there.  Masses sum to 1 and the overlap with each sampled
        replica is constant within a group, so inner averages of any function
        of those overlaps are exact finite sums.
        """
        paths = np.asarray(member_row, dtype=np.int64)
        size = paths.shape[0]
        node_mass = {(): 1.0}
        children_used: dict = {}
        for row in paths:
            p = ()
            for depth in range(self.r):
                c = int(row[depth])
                children_used.setdefault(p, set()).add(c)
                child = p + (c,)
                if child not in node_mass:
                    w, _ = self._node(p)
                    node_mass[child] = node_mass[p] * float(w[c])
                p = child

        masses = []
        patterns = []

        def lcp_with(prefix: tuple, row: np.ndarray) -> int:
            d = 0
            for d in range(len(prefix)):
                if int(row[d]) != prefix[d]:
                    return d
            return len(prefix)

        for p in sorted(children_used):
            w, _ = self._node(p)
            used = children_used[p]
            used_mass = float(np.sum(w[sorted(used)]))
            resid = node_mass[p] * max(0.0, 1.0 - used_mass)
            pat = np.array([self.qs[lcp_with(p, paths[l])] for l in range(size)])
            masses.append(resid)
            patterns.append(pat)

        seen = set()
        for row in paths:
            t = tuple(int(v) for v in row)
            if t in seen:
                continue
            seen.add(t)
            pat = self.overlap_of_paths(row[None, :], paths)
            masses.append(node_mass[t])
            patterns.append(pat.reshape(size))

        return np.asarray(masses, dtype=np.float64), np.asarray(patterns, dtype=np.float64)

    def embed(self, member_row: np.ndarray) -> np.ndarray:
        """Embed sampled leaves as vectors whose dot products equal tree overlaps.

        Coordinate 0 carries the shared sqrt(q_0) component; each node on a
        sampled path gets one private coordinate carrying the square root of
        its overlap increment.
        """
        paths = np.asarray(member_row, dtype=np.int64)
        size = paths.shape[0]
        nodes = sorted({tuple(int(v) for v in row[: j + 1])
                        for row in paths for j in range(self.r)})
        coord = {nd: i + 1 for i, nd in enumerate(nodes)}
        dim = max(1 + len(nodes), self.source.dimension)
        out = np.zeros((size, dim))
        out[:, 0] = np.sqrt(self.qs[0])
        inc = np.sqrt(np.diff(self.qs))
        for i, row in enumerate(paths):
            for j in range(self.r):
                out[i, coord[tuple(int(v) for v in row[: j + 1])]] = inc[j]
        return out
