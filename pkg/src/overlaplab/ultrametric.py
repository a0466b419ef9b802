"""Tree structure of sampled overlaps.

Three replica overlaps (r12, r13, r23) are tree-compatible when the two
smallest coincide; the census classifies sampled triangles as equilateral,
isosceles with the odd value on top, or violating, with a tolerance for the
coincidence.  Cascade samples should show zero violations and reconstruct
exactly from a single-linkage tree; finite spin models are only measured.

The barycenter computation quantifies the stability side: for three groups of
m replicas whose overlap pattern is (a between groups 1-2, b between groups
1-3, c inside every group and between groups 2-3), averaging each group gives
vectors whose norms and distances are explicit functions of (q*, a, b, c, m),
and existence of such vectors (pattern positive semidefinite) forces

    |b - a| <= sqrt(2 q* (q* - c) / m).

When c > 0 and a != b the pattern stops being realizable at a finite group
size, located here from the spectrum of the 3x3 block matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import cophenet, linkage, to_tree
from scipy.spatial.distance import squareform

from .core import Estimate, OverlapMatrix, ConstraintMatrix, a_star, mean_estimate
from .identities import Budget, TestReport, bootstrap_se, z_from
from .measures import MeasureSource
from .rng import generator, subseq

PSD_TOL = 1e-9
TREE_TOL = 1e-9


@dataclass
class TriangleCensus:
    """Counts of overlap triangle shapes at tolerance epsilon.

    worst_margin is the largest excess of the two-smallest-overlap gap over
    the tolerance; it is negative exactly when every triple passed, so
    violating == 0 forces worst_margin <= 0.  When embeddings accompany the
    overlaps the distance form of the same condition (largest side at most
    the middle side plus tolerance) is evaluated too and agreement between
    the two classifications is tallied.
    """

    epsilon: float
    equilateral: int = 0
    isosceles: int = 0
    violating: int = 0
    worst_margin: float = field(default=0.0)
    norm_checked: int = 0
    norm_agree: int = 0

    @property
    def total(self) -> int:
        return self.equilateral + self.isosceles + self.violating

    @property
    def violation_rate(self) -> float:
        return self.violating / self.total if self.total else 0.0

    @property
    def norm_agreement(self) -> Optional[float]:
        if self.norm_checked == 0:
            return None
        return self.norm_agree / self.norm_checked

    def add(self, other: "TriangleCensus") -> None:
        if other.epsilon != self.epsilon:
            raise ValueError("cannot merge censuses at different tolerances")
        self.equilateral += other.equilateral
        self.isosceles += other.isosceles
        self.violating += other.violating
        self.worst_margin = max(self.worst_margin, other.worst_margin)
        self.norm_checked += other.norm_checked
        self.norm_agree += other.norm_agree

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "total": self.total,
                "equilateral": self.equilateral, "isosceles": self.isosceles,
                "violating": self.violating, "worst_margin": self.worst_margin,
                "violation_rate": self.violation_rate,
                "norm_checked": self.norm_checked,
                "norm_agreement": self.norm_agreement}


def triangle_census(triples, epsilon: float,
                    embeddings=None) -> TriangleCensus:
    """Classify rows (r12, r13, r23) by the gap of their two smallest values.

    A row passes when that gap is below epsilon (equilateral when even the
    full spread is), otherwise it is violating.  With `embeddings` of shape
    (rows, 3, dim) the equivalent distance condition is checked per row and
    the agreement count is recorded alongside.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t = np.asarray(triples, dtype=np.float64).reshape(-1, 3)
    s = np.sort(t, axis=1)
    margin = s[:, 1] - s[:, 0]
    spread = s[:, 2] - s[:, 0]
    eq = spread < epsilon
    iso = ~eq & (margin < epsilon)
    bad = ~eq & ~iso
    census = TriangleCensus(
        epsilon=epsilon,
        equilateral=int(eq.sum()),
        isosceles=int(iso.sum()),
        violating=int(bad.sum()),
        worst_margin=float(margin.max() - epsilon) if margin.size else -epsilon,
    )
    if embeddings is not None:
        pts = np.asarray(embeddings, dtype=np.float64)
        if pts.shape[:1] != (t.shape[0],) or pts.shape[1] != 3:
            raise ValueError("embeddings must have shape (rows, 3, dim)")
        d12 = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
        d13 = np.linalg.norm(pts[:, 0] - pts[:, 2], axis=1)
        d23 = np.linalg.norm(pts[:, 1] - pts[:, 2], axis=1)
        dist = np.sort(np.stack([d12, d13, d23], axis=1), axis=1)
        norm_ok = dist[:, 2] <= dist[:, 1] + epsilon
        census.norm_checked = int(t.shape[0])
        census.norm_agree = int((norm_ok == ~bad).sum())
    return census


def sample_triangles(source: MeasureSource, count: int, seq: np.random.SeedSequence,
                     *, groups: int = 8, with_embeddings: bool = False):
    """(count, 3) overlaps of sampled replica triples, `groups` per realization.

    With with_embeddings=True returns (overlaps, points) where points has
    shape (count, 3, dim); dimensions must then agree across realizations.
    """
    out = np.empty((count, 3))
    points = None
    done = 0
    i = 0
    while done < count:
        realization = source.realize(subseq(seq, 0, i))
        rng = generator(subseq(seq, 1, i))
        take = min(groups, count - done)
        sample = realization.sample_groups(take, 3, rng)
        R = sample.overlaps
        out[done:done + take, 0] = R[:, 0, 1]
        out[done:done + take, 1] = R[:, 0, 2]
        out[done:done + take, 2] = R[:, 1, 2]
        if with_embeddings:
            for g in range(take):
                vecs = realization.embed(sample.member[g])
                if points is None:
                    points = np.empty((count, 3, vecs.shape[1]))
                points[done + g] = vecs
        done += take
        i += 1
    if with_embeddings:
        return out, points
    return out


def ultrametricity_stat(source: MeasureSource, budget: Budget,
                        seq: np.random.SeedSequence) -> Estimate:
    """Mean of I(r12 >= min(r13, r23)) over realizations and replica triples.

    Realizations that can enumerate all atom triples contribute their exact
    per-realization value; the rest contribute a Monte Carlo average over
    budget.groups sampled triples.
    """
    reals = budget.realizations
    vals = np.empty(reals)
    for i in range(reals):
        realization = source.realize(subseq(seq, 0, i))
        value = None
        exact = getattr(realization, "exact_triple_indicator_mean", None)
        if exact is not None:
            value = exact()
        if value is None:
            rng = generator(subseq(seq, 1, i))
            sample = realization.sample_groups(budget.groups, 3, rng)
            R = sample.overlaps
            ind = R[:, 0, 1] >= np.minimum(R[:, 0, 2], R[:, 1, 2])
            value = float(ind.mean())
        vals[i] = value
    return mean_estimate(vals)


def support_probe(source: MeasureSource, constraint: ConstraintMatrix,
                  budget: Budget, seq: np.random.SeedSequence) -> Estimate:
    """Probability that a sampled overlap matrix matches the pattern.

    Matching means every off-diagonal entry lies within the pattern's open
    tolerance interval, the same comparison matrix_approx makes.
    """
    n = constraint.n
    eps = constraint.epsilon
    target = constraint.entries
    off = ~np.eye(n, dtype=bool)
    vals = np.empty(budget.realizations)
    for i in range(budget.realizations):
        realization = source.realize(subseq(seq, 0, i))
        rng = generator(subseq(seq, 1, i))
        sample = realization.sample_groups(budget.groups, n, rng)
        hits = np.all(np.abs(sample.overlaps - target)[:, off] < eps, axis=1)
        vals[i] = float(hits.mean())
    return mean_estimate(vals)


@dataclass
class UltrametricTree:
    """Single-linkage tree of one overlap matrix with its reconstruction."""

    linkage_matrix: np.ndarray
    newick: str
    reconstructed: np.ndarray
    max_error: float


def _newick(node, parent_height: Optional[float]) -> str:
    if node.is_leaf():
        length = 0.0 if parent_height is None else parent_height
        return f"r{node.id + 1}:{length:.9g}"
    inner = ",".join(_newick(child, node.dist)
                     for child in (node.left, node.right))
    if parent_height is None:
        return f"({inner});"
    return f"({inner}):{parent_height - node.dist:.9g}"


def build_ultrametric_tree(matrix: OverlapMatrix) -> UltrametricTree:
    """Cluster at depth q* - overlap and reconstruct overlaps from the tree.

    For tree-compatible input the cophenetic reconstruction is exact up to
    float noise; max_error reports the worst off-diagonal discrepancy.
    """
    entries = matrix.entries
    q = matrix.q_star
    dist = np.clip(q - entries, 0.0, None)
    np.fill_diagonal(dist, 0.0)
    condensed = squareform(dist, checks=False)
    merge = linkage(condensed, method="single")
    coph = cophenet(merge)
    recon = q - squareform(coph)
    np.fill_diagonal(recon, q)
    max_error = float(np.max(np.abs(recon - entries))) if entries.shape[0] > 1 else 0.0
    newick = _newick(to_tree(merge), None)
    return UltrametricTree(merge, newick, recon, max_error)


def census_report(source: MeasureSource, n_triples: int, epsilon: float,
                  seq: np.random.SeedSequence, *, groups: int = 8,
                  tree_checks: int = 4, tree_size: int = 8,
                  case_label: str = "", asserted: Optional[bool] = None) -> TestReport:
    """Zero-violation census plus tree reconstruction on sampled matrices."""
    triples, points = sample_triangles(source, n_triples, subseq(seq, 0),
                                       groups=groups, with_embeddings=True)
    census = triangle_census(triples, epsilon, embeddings=points)
    tree_err = 0.0
    for j in range(tree_checks):
        realization = source.realize(subseq(seq, 1, j))
        rng = generator(subseq(seq, 2, j))
        sample = realization.sample_groups(1, tree_size, rng)
        tree = build_ultrametric_tree(OverlapMatrix(sample.overlaps[0]))
        tree_err = max(tree_err, tree.max_error)
    rate = census.violation_rate
    se = math.sqrt(rate * (1.0 - rate) / census.total) if census.total else 0.0
    if asserted is None:
        asserted = source.gg_reference
    passed = census.violating == 0 and tree_err <= TREE_TOL
    return TestReport(
        kind="ultrametric",
        case_label=case_label or f"census({n_triples} triples, eps={epsilon:g})",
        n=3,
        lhs=Estimate(rate, se, census.total),
        rhs=Estimate(0.0, 0.0, 1),
        difference=Estimate(rate, se, census.total),
        z_score=z_from(rate, se),
        significance=0.0,
        passed=bool(passed),
        applicable=census.total > 0,
        asserted=asserted,
        metadata={
            "source": source.label,
            "census": census.to_dict(),
            "tree_checks": tree_checks,
            "tree_size": tree_size,
            "tree_max_error": tree_err,
            "tree_tolerance": TREE_TOL,
        },
    )


def extension_probe(source: MeasureSource, constraint: ConstraintMatrix,
                    budget: Budget, seq: np.random.SeedSequence, *,
                    significance: float = 3.0, bootstrap: int = 200,
                    case_label: str = "", asserted: Optional[bool] = None) -> TestReport:
    """Positive-probability probe for extending a visited overlap pattern.

    Event: the first n replicas realize the pattern within its tolerance, a
    fresh replica copies the last replica's off-diagonal relations, and the
    fresh-vs-last overlap stays below the pattern's largest last-column entry
    plus the tolerance.  The verdict asserts positivity only when the pattern
    itself is hit at a statistically positive rate, that threshold leaves
    room below the self-overlap, and the source is a reference family.
    """
    n = constraint.n
    if n < 2:
        raise ValueError("extension probe needs a pattern on n >= 2 replicas")
    eps = constraint.epsilon
    target = constraint.entries
    cap = a_star(constraint)
    gate_ok = cap + eps < source.q_star
    reals = budget.realizations
    hit_vals = np.empty(reals)
    ext_vals = np.empty(reals)
    gamma_vals = np.empty(reals)
    off = ~np.eye(n, dtype=bool)
    for i in range(reals):
        realization = source.realize(subseq(seq, 0, i))
        rng = generator(subseq(seq, 1, i))
        sample = realization.sample_groups(budget.groups, n + 1, rng)
        R = sample.overlaps
        hits = np.all(np.abs(R[:, :n, :n] - target)[:, off] < eps, axis=1)
        copies = np.all(np.abs(R[:, :n - 1, n] - target[:n - 1, n - 1]) < eps, axis=1)
        separated = R[:, n - 1, n] < cap + eps
        ext = hits & copies & separated
        hit_vals[i] = float(hits.mean())
        ext_vals[i] = float(ext.mean())
        gamma_vals[i] = float((R[:, 0, 1] >= cap + eps).mean())
    hit_est = mean_estimate(hit_vals)
    gamma_est = mean_estimate(gamma_vals)
    ext_mean = float(ext_vals.mean())
    ext_se = bootstrap_se(ext_vals, bootstrap, generator(subseq(seq, 2)))
    z = z_from(ext_mean, ext_se)
    support_positive = hit_est.mean > significance * hit_est.std_error
    applicable = bool(gate_ok and support_positive)
    if applicable:
        verdict = "positive" if z >= significance else "negative"
    else:
        verdict = "not-applicable"
    if asserted is None:
        asserted = source.gg_reference
    return TestReport(
        kind="extension",
        case_label=case_label or f"extension(n={n}, eps={eps:g})",
        n=n,
        lhs=Estimate(ext_mean, ext_se, reals),
        rhs=Estimate(0.0, 0.0, 1),
        difference=Estimate(ext_mean, ext_se, reals),
        z_score=z,
        significance=significance,
        passed=bool(verdict != "negative"),
        applicable=applicable,
        asserted=asserted and applicable,
        metadata={
            "source": source.label,
            "verdict": verdict,
            "support_estimate": hit_est.to_dict(),
            "separation_threshold": cap + eps,
            "gate": {"last_column_max": cap, "epsilon": eps,
                     "self_overlap": source.q_star, "open": bool(gate_ok)},
            "gamma": gamma_est.to_dict(),
            "budget": {"realizations": reals, "groups": budget.groups},
        },
    )


def block_matrix(a: float, b: float, c: float) -> np.ndarray:
    """3x3 group-level pattern: diagonal c, (1,2) = a, (1,3) = b, (2,3) = c."""
    return np.array([[c, a, b], [a, c, c], [b, c, c]])


def pattern_gram(q_star: float, a: float, b: float, c: float, m: int) -> np.ndarray:
    """Full (3m, 3m) overlap pattern of three groups of m replicas."""
    if m < 1:
        raise ValueError("group size must be >= 1")
    gram = np.kron(block_matrix(a, b, c), np.ones((m, m)))
    gram[np.diag_indices(3 * m)] = q_star
    return gram


def pattern_min_eigenvalue(q_star: float, a: float, b: float, c: float, m: int) -> float:
    """Smallest eigenvalue of the pattern, via the 3x3 block spectrum.

    The pattern is kron(B, J_m) + (q* - c) I, so its spectrum is
    {m lambda_i(B) + q* - c} union {q* - c}.
    """
    lam = np.linalg.eigvalsh(block_matrix(a, b, c))
    candidates = np.append(m * lam + (q_star - c), q_star - c)
    return float(candidates.min())


def pattern_is_psd(q_star: float, a: float, b: float, c: float, m: int,
                   tol: float = PSD_TOL) -> bool:
    return pattern_min_eigenvalue(q_star, a, b, c, m) >= -tol


def min_psd_failure_m(q_star: float, a: float, b: float, c: float,
                      max_m: int = 10 ** 6, tol: float = PSD_TOL) -> Optional[int]:
    """Smallest group size where the pattern stops being realizable, if any.

    The block matrix has determinant -c (b - a)^2, so whenever c > 0 and
    a != b some finite size fails; realizable-forever patterns return None.
    """
    lam_min = float(np.linalg.eigvalsh(block_matrix(a, b, c)).min())
    if lam_min >= 0.0:
        return None
    # smallest m with m * lam_min + (q* - c) < -tol, then walk off float slop
    first = int(math.floor((tol + (q_star - c)) / (-lam_min))) + 1
    while first > 1 and not pattern_is_psd(q_star, a, b, c, first - 1, tol):
        first -= 1
    while first <= max_m and pattern_is_psd(q_star, a, b, c, first, tol):
        first += 1
    return None if first > max_m else first


def realize_pattern_replicas(q_star: float, a: float, b: float, c: float,
                             m: int, tol: float = PSD_TOL) -> np.ndarray:
    """Explicit vectors (3m rows) whose Gram matrix is the group pattern.

    Factorizes the pattern through its eigendecomposition, so it exists
    exactly when the pattern is positive semidefinite.
    """
    gram = pattern_gram(q_star, a, b, c, m)
    lam, vecs = np.linalg.eigh(gram)
    if lam.min() < -tol * max(1.0, lam.max()):
        raise ValueError("pattern is not realizable (Gram matrix not PSD)")
    return vecs * np.sqrt(np.clip(lam, 0.0, None))


@dataclass
class BarycenterReport:
    """Group-average geometry of three replica groups of common size m.

    Bounds follow from the overlap pattern (a between groups 1-2, b between
    groups 1-3, c elsewhere off-diagonal): each barycenter norm is at most
    (m q* + m(m-1) c)/m^2, barycenters 2 and 3 are within 2(q*-c)/m in
    squared distance, and the product gap b - a is at most
    sqrt(2 q*(q*-c)/m) in absolute value.
    """

    m: int
    group_norms_sq: tuple
    product_12: float
    product_13: float
    product_23: float
    norm_sq_bound: float
    pair_distance_sq: float
    pair_distance_sq_bound: float
    gap: float
    gap_bound: float
    slack: float

    @property
    def bounds_hold(self) -> bool:
        return bool(max(self.group_norms_sq) <= self.norm_sq_bound + self.slack
                    and self.pair_distance_sq <= self.pair_distance_sq_bound + self.slack
                    and abs(self.gap) <= self.gap_bound + self.slack)

    def to_dict(self) -> dict:
        return {"m": self.m, "group_norms_sq": list(self.group_norms_sq),
                "products": {"12": self.product_12, "13": self.product_13,
                             "23": self.product_23},
                "norm_sq_bound": self.norm_sq_bound,
                "pair_distance_sq": self.pair_distance_sq,
                "pair_distance_sq_bound": self.pair_distance_sq_bound,
                "gap": self.gap, "gap_bound": self.gap_bound,
                "slack": self.slack, "bounds_hold": self.bounds_hold}


def barycenter_diagnostic(replicas, groups, q_star: float, a: float, b: float,
                          c: float, *, slack: float = 1e-9) -> BarycenterReport:
    """Measure barycenter norms, products and gaps of three replica groups.

    `replicas` holds one vector per row; `groups` gives three disjoint index
    lists of a common size m.  The computed values are compared against the
    closed-form bounds implied by the overlap pattern; `slack` absorbs both
    float noise and any tolerance the sampled overlaps were matched at.
    """
    pts = np.asarray(replicas, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("replicas must form a 2-d array of row vectors")
    if len(groups) != 3:
        raise ValueError("exactly three index groups required")
    idx = [np.asarray(g, dtype=np.int64) for g in groups]
    m = idx[0].size
    if any(g.size != m for g in idx) or m < 1:
        raise ValueError("groups must share one positive size")
    joined = np.concatenate(idx)
    if np.unique(joined).size != joined.size:
        raise ValueError("groups must be disjoint")
    bary = np.stack([pts[g].mean(axis=0) for g in idx])
    norms_sq = tuple(float(v) for v in np.einsum("ij,ij->i", bary, bary))
    prods = bary @ bary.T
    dist_sq = float(norms_sq[1] + norms_sq[2] - 2.0 * prods[1, 2])
    return BarycenterReport(
        m=m,
        group_norms_sq=norms_sq,
        product_12=float(prods[0, 1]),
        product_13=float(prods[0, 2]),
        product_23=float(prods[1, 2]),
        norm_sq_bound=(m * q_star + m * (m - 1) * c) / m ** 2,
        pair_distance_sq=dist_sq,
        pair_distance_sq_bound=2.0 * (q_star - c) / m,
        gap=b - a,
        gap_bound=math.sqrt(2.0 * q_star * (q_star - c) / m),
        slack=slack,
    )


def random_psd_pattern(rng: np.random.Generator, *, max_tries: int = 1000) -> tuple:
    """One realizable tuple (q*, a, b, c, m) with a < b <= c < q*."""
    for _ in range(max_tries):
        q = rng.uniform(0.5, 1.0)
        c = rng.uniform(0.05, 0.9) * q
        b = rng.uniform(-0.2, c)
        a = b - rng.uniform(0.0, 0.3)
        m = int(rng.integers(1, 30))
        if a < b and abs(a) <= q and abs(b) <= q and pattern_is_psd(q, a, b, c, m):
            return q, a, b, c, m
    raise RuntimeError("failed to sample a realizable pattern")


def barycenter_report(n_patterns: int, seq: np.random.SeedSequence, *,
                      case_label: str = "") -> TestReport:
    """Bound checks over random realizable patterns plus one finite-size
    realizability failure with an unequal cross-overlap pair."""
    rng = generator(subseq(seq, 0))
    checked = 0
    failures = 0
    worst_slack = math.inf
    for _ in range(n_patterns):
        q, a, b, c, m = random_psd_pattern(rng)
        vectors = realize_pattern_replicas(q, a, b, c, m)
        split = (np.arange(m), np.arange(m, 2 * m), np.arange(2 * m, 3 * m))
        diag = barycenter_diagnostic(vectors, split, q, a, b, c, slack=1e-9)
        checked += 1
        if not diag.bounds_hold:
            failures += 1
        worst_slack = min(worst_slack, diag.gap_bound - abs(diag.gap))
    # a pattern that must break down at a finite group size
    example = (0.8, 0.2, 0.3, 0.4)
    q, a, b, c = example
    fail_m = min_psd_failure_m(q, a, b, c)
    fail_found = fail_m is not None and not pattern_is_psd(q, a, b, c, fail_m) \
        and (fail_m == 1 or pattern_is_psd(q, a, b, c, fail_m - 1))
    passed = failures == 0 and bool(fail_found)
    return TestReport(
        kind="barycenter",
        case_label=case_label or f"barycenter bounds ({n_patterns} patterns)",
        n=3,
        lhs=Estimate(float(failures), 0.0, checked),
        rhs=Estimate(0.0, 0.0, 1),
        difference=Estimate(float(failures), 0.0, checked),
        z_score=0.0 if failures == 0 else math.inf,
        significance=0.0,
        passed=bool(passed),
        applicable=True,
        asserted=True,
        metadata={
            "patterns_checked": checked,
            "bound_failures": failures,
            "worst_gap_slack": worst_slack,
            "failure_example": {"q_star": q, "a": a, "b": b, "c": c,
                                "first_failing_m": fail_m},
        },
    )
