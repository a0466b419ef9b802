"""Tilt-invariance checks for sampled overlap structures.

The tilt built from per-replica scalar functions f_1..f_n is

    F(sigma) = sum_l f_l(sigma . sigma^l)

and its centered per-replica version substitutes the self term of replica l
with the unconditional pair mean of f_l:

    F_l(sigma^l) = sum_{j != l} f_j(R_{l,j}) + E<f_l(R_{1,2})>.

The invariance statement: for bounded Phi of n replica overlaps,

    E<Phi> = E< Phi * prod_l [ exp(t F_l(sigma^l)) / <exp(t F)> ] >

for every t, where the inner bracket integrates a fresh replica against the
realized measure.  phi(t) denotes the right side; the suite checks that the
sampled profile is flat and that its derivative at zero vanishes.

A second form replaces plain weights with tilted ones: for a partition of the
support into cells B_1..B_K with weights W_k = mu(B_k), the map

    T(W)_k = <I_{B_k} exp F> / <exp F>

leaves joint moments of overlaps and weights invariant after the same
reweighting.  The two-cell threshold case has a closed form used for algebra
tests: T_t(W)_1 = W_1 e^t / Delta_t with Delta_t = 1 + W_1 (e^t - 1).

Substituted sums reuse the exact summation order of the plain sum, so when
the substituted value equals the removed term bitwise the tilt ratios are
exactly one and single-atom sources yield exactly zero residuals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Estimate, mean_estimate
from .identities import (Budget, TestReport, bootstrap_se, pair_mean_estimate,
                         z_from)
from .measures import MeasureSource
from .rng import generator, subseq

WEIGHT_SUM_TOL = 1e-10


def tilt_values(funcs, patterns) -> np.ndarray:
    """F at every pattern row: patterns[..., j] is the overlap with replica j+1."""
    patterns = np.asarray(patterns, dtype=np.float64)
    if patterns.shape[-1] != len(funcs):
        raise ValueError(f"patterns have {patterns.shape[-1]} columns for "
                         f"{len(funcs)} tilt functions")
    total = np.zeros(patterns.shape[:-1])
    for j, f in enumerate(funcs):
        total = total + f.evaluate(patterns[..., j])
    return total


def substituted_tilt(funcs, row, index: int, value: float) -> float:
    """F over one pattern row with the index-th summand replaced by value.

    Keeps the summation order of tilt_values so replacing a term with a
    bitwise-equal value reproduces the plain sum exactly.
    """
    total = 0.0
    for j, f in enumerate(funcs):
        total = total + (value if j == index else float(f.evaluate(row[j])))
    return total


def pair_means_for(source: MeasureSource, funcs, realizations: int, groups: int,
                   seq: np.random.SeedSequence, *, exact_cap: int = 4096):
    """Unconditional pair means of each tilt function: (means, ses, exact)."""
    law = source.exact_overlap_law()
    if law is not None:
        return [law.mean_of(f) for f in funcs], [0.0] * len(funcs), True
    means, ses = [], []
    for l, f in enumerate(funcs):
        est = pair_mean_estimate(source, f, realizations, groups,
                                 subseq(seq, l), exact_cap=exact_cap)
        means.append(est.mean)
        ses.append(est.std_error)
    return means, ses, False


def _group_inner(realization, member_row, inner_m: int, rng):
    """(masses, patterns, exact) of the fresh-replica integral for one group."""
    inner = getattr(realization, "inner_patterns", None)
    if inner is not None:
        masses, patterns = inner(member_row)
        return masses, patterns, True
    mc = getattr(realization, "mc_inner_patterns", None)
    if mc is None:
        raise ValueError("realization exposes neither exact inner patterns nor "
                         "a Monte Carlo fallback")
    masses, patterns = mc(member_row, inner_m, rng)
    return masses, patterns, False


@dataclass
class ProfileData:
    """Per-realization phi estimates on a t grid (row t, column realization).

    mu_ses: standard errors of the substituted pair means, all zero when the
    source has a closed-form overlap law.  Their error is shared by every
    realization, so consumers must add it on top of the realization spread.
    """

    t_values: tuple
    per_realization: np.ndarray
    exact_inner: bool
    mu_exact: bool
    mu_ses: tuple = ()

    def index_of(self, t: float) -> int:
        return self.t_values.index(t)


def phi_profile(source: MeasureSource, phi, funcs, t_values, budget: Budget,
                seq: np.random.SeedSequence, *, exact_cap: int = 4096) -> ProfileData:
    """Estimate phi(t) on a shared set of realizations for every t.

    t = 0 bypasses the reweighting entirely, so phi(0) is the plain estimator
    of E<Phi> bit for bit.
    """
    n = len(funcs)
    if n < 1:
        raise ValueError("need at least one tilt function")
    if phi.max_replica() > n:
        raise ValueError(f"test function uses replica {phi.max_replica()}, "
                         f"but the tilt has n = {n}")
    t_values = tuple(float(t) for t in t_values)
    mu, mu_ses, mu_exact = pair_means_for(
        source, funcs, max(8, budget.realizations // 4), budget.groups,
        subseq(seq, 3), exact_cap=exact_cap)
    reals = budget.realizations
    per = np.empty((len(t_values), reals))
    exact_inner = True
    for i in range(reals):
        realization = source.realize(subseq(seq, 0, i))
        rng = generator(subseq(seq, 1, i))
        sample = realization.enumerate_tuples(n, exact_cap)
        if sample is None:
            sample = realization.sample_groups(budget.groups, n, rng)
        R = sample.overlaps
        phi_vals = np.asarray(phi.evaluate(R), dtype=np.float64)
        group_vals = np.empty((len(t_values), sample.m))
        for g in range(sample.m):
            masses, patterns, exact = _group_inner(
                realization, sample.member[g], budget.inner, rng)
            exact_inner = exact_inner and exact
            f_atoms = tilt_values(funcs, patterns)
            f_repl = [substituted_tilt(funcs, R[g, l], l, mu[l]) for l in range(n)]
            for k, t in enumerate(t_values):
                if t == 0.0:
                    group_vals[k, g] = phi_vals[g]
                    continue
                denom = float(masses @ np.exp(t * f_atoms))
                ratio = 1.0
                for l in range(n):
                    ratio = ratio * (float(np.exp(t * f_repl[l])) / denom)
                group_vals[k, g] = phi_vals[g] * ratio
        for k in range(len(t_values)):
            per[k, i] = sample.average(group_vals[k])
    return ProfileData(t_values, per, exact_inner, mu_exact, tuple(mu_ses))


def phi_estimate(source: MeasureSource, phi, funcs, t: float, budget: Budget,
                 seq: np.random.SeedSequence, *, exact_cap: int = 4096) -> Estimate:
    """Reweighted estimate of E<Phi> at one tilt strength t >= 0.

    At t = 0 this is the plain estimator bit for bit.  For realizations
    without exact inner sums the denominator is an inner Monte Carlo average
    over budget.inner fresh replicas, carrying a ratio bias of order
    1/budget.inner.
    """
    if t < 0:
        raise ValueError("tilt strength t must be >= 0")
    profile = phi_profile(source, phi, funcs, (float(t),), budget, seq,
                          exact_cap=exact_cap)
    return mean_estimate(profile.per_realization[0])


def invariance_test(source: MeasureSource, phi, funcs, budget: Budget,
                    seq: np.random.SeedSequence, *,
                    t_grid=(0.25, 0.5, 1.0, 2.0), h: float = 0.25,
                    significance: float = 3.0, bootstrap: int = 200,
                    exact_cap: int = 4096, case_label: str = "",
                    asserted: Optional[bool] = None) -> list:
    """Flatness z-tests of the phi profile, paired against phi(0).

    Returns one TestReport per grid point, comparing phi(t) with phi(0) on
    shared realizations, plus a final report for the forward-difference
    derivative (phi(h) - phi(0)) / h, which should be statistically zero.
    """
    if h <= 0:
        raise ValueError("derivative step h must be positive")
    ts = [0.0]
    for t in tuple(t_grid) + (h,):
        t = float(t)
        if t not in ts:
            ts.append(t)
    profile = phi_profile(source, phi, funcs, ts, budget, seq,
                          exact_cap=exact_cap)
    base = profile.per_realization[0]
    base_est = mean_estimate(base)
    rng_boot = generator(subseq(seq, 2))
    # the substituted pair means shift every reweighted value by exp(t sum
    # delta_l), so their shared error adds (t phi(t))^2 sum se_l^2 to the
    # variance of the gap; zero for closed-form laws, keeping those bit-exact
    mu_var = sum(se * se for se in profile.mu_ses)
    if asserted is None:
        asserted = source.gg_reference
    label = case_label or (f"n={len(funcs)}; phi={phi.describe()}")
    shared_meta = {
        "source": source.label,
        "exact_inner": profile.exact_inner,
        "pair_means_exact": profile.mu_exact,
        "ratio_bias": None if profile.exact_inner
        else f"O(1/{budget.inner}) from inner Monte Carlo",
        "phi_zero": base_est.to_dict(),
    }
    reports = []
    for t in (float(x) for x in t_grid):
        k = ts.index(t)
        est = mean_estimate(profile.per_realization[k])
        d = profile.per_realization[k] - base
        dm = float(d.mean())
        dse = bootstrap_se(d, bootstrap, rng_boot)
        if mu_var > 0.0:
            dse = math.sqrt(dse * dse + (t * est.mean) ** 2 * mu_var)
        zt = z_from(dm, dse)
        reports.append(TestReport(
            kind="invariance",
            case_label=f"{label} @ t={t:g}",
            n=len(funcs),
            lhs=est,
            rhs=base_est,
            difference=Estimate(dm, dse, budget.realizations),
            z_score=zt,
            significance=significance,
            passed=bool(abs(zt) < significance),
            applicable=True,
            asserted=asserted,
            metadata=dict(shared_meta, t=t),
        ))
    # forward-difference derivative at zero; z equals the paired z at t = h
    kh = ts.index(float(h))
    dh = profile.per_realization[kh] - base
    est_h = mean_estimate(profile.per_realization[kh])
    deriv_mean = float(dh.mean()) / h
    deriv_se = bootstrap_se(dh, bootstrap, rng_boot)
    if mu_var > 0.0:
        deriv_se = math.sqrt(deriv_se * deriv_se + (h * est_h.mean) ** 2 * mu_var)
    deriv_se = deriv_se / h
    deriv_z = z_from(deriv_mean, deriv_se)
    reports.append(TestReport(
        kind="invariance-deriv",
        case_label=f"{label} @ d/dt|0 (h={h:g})",
        n=len(funcs),
        lhs=est_h,
        rhs=base_est,
        difference=Estimate(deriv_mean, deriv_se, budget.realizations),
        z_score=deriv_z,
        significance=significance,
        passed=bool(abs(deriv_z) < significance),
        applicable=True,
        asserted=asserted,
        metadata=dict(shared_meta, h=h),
    ))
    return reports


@dataclass(frozen=True)
class WeightVector:
    """Cell weights of a partition; must sum to one."""

    masses: tuple

    def __post_init__(self) -> None:
        m = tuple(float(x) for x in self.masses)
        if len(m) < 1:
            raise ValueError("a partition needs at least one cell")
        if any(x < -WEIGHT_SUM_TOL for x in m):
            raise ValueError(f"cell weights must be non-negative, got {m}")
        if abs(sum(m) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"cell weights must sum to 1, got {sum(m)}")
        object.__setattr__(self, "masses", m)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.masses, dtype=np.float64)


@dataclass(frozen=True)
class ThresholdPartition:
    """Cells cut by overlap thresholds against designated replicas.

    axes: tuples (replica_label, cuts) with 1-based labels and strictly
    increasing cuts; a value v on an axis with cuts (c_1..c_k) falls in bin
    k - #{j : v >= c_j}, so bin 0 always collects the values at or above the
    top cut.  Cell index combines axes in mixed radix, first axis fastest;
    with a single one-cut axis, cell 0 is the high side, matching the
    closed-form two-cell map which tilts its first component upward.  An
    empty cut tuple makes the axis trivial (whole space in one cell).
    """

    axes: tuple

    def __post_init__(self) -> None:
        if not self.axes:
            raise ValueError("partition needs at least one axis")
        axes = []
        for label, cuts in self.axes:
            cuts = tuple(float(c) for c in cuts)
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ValueError("cuts must be strictly increasing")
            if label < 1:
                raise ValueError("replica labels are 1-based")
            axes.append((int(label), cuts))
        object.__setattr__(self, "axes", tuple(axes))

    @property
    def cell_count(self) -> int:
        out = 1
        for _label, cuts in self.axes:
            out *= len(cuts) + 1
        return out

    def max_replica(self) -> int:
        return max(label for label, _cuts in self.axes)

    def cell_of(self, patterns) -> np.ndarray:
        """Cell index per pattern row; patterns[..., j] pairs with replica j+1."""
        patterns = np.asarray(patterns, dtype=np.float64)
        idx = np.zeros(patterns.shape[:-1], dtype=np.int64)
        radix = 1
        for label, cuts in self.axes:
            v = patterns[..., label - 1]
            bins = len(cuts) - np.searchsorted(np.asarray(cuts), v, side="right")
            idx = idx + radix * bins
            radix *= len(cuts) + 1
        return idx

    def describe(self) -> str:
        parts = [f"r{label}@" + ",".join(f"{c:g}" for c in cuts)
                 for label, cuts in self.axes]
        return "cells(" + ";".join(parts) + ")"


def partition_weights(realization, member_row, partition: ThresholdPartition) -> WeightVector:
    """Exact cell weights of one realization relative to one replica group."""
    if getattr(realization, "atom_count", None) is None and \
            not hasattr(realization, "inner_patterns"):
        raise ValueError("partition weights need exact inner patterns; "
                         "this realization only supports sampling")
    masses, patterns = realization.inner_patterns(member_row)
    cells = partition.cell_of(patterns)
    out = np.zeros(partition.cell_count)
    np.add.at(out, cells, masses)
    return WeightVector(tuple(out))


def tilted_partition_map(weights: WeightVector, cell_log_factors) -> WeightVector:
    """Reweight cells by exp of per-cell log factors and renormalize.

    Covers tilts that are constant on every cell; tilts varying inside a
    cell need the atom-level tilted_partition_weights.
    """
    w = weights.as_array()
    f = np.exp(np.asarray(cell_log_factors, dtype=np.float64))
    if f.size != w.size:
        raise ValueError("need one log factor per cell")
    tilted = w * f
    return WeightVector(tuple(tilted / tilted.sum()))


def tilted_partition_weights(realization, member_row, partition: ThresholdPartition,
                             funcs):
    """Plain and exp-F-tilted cell weights with the inner mean of exp F.

    Each atom is reweighted by exp F before cell aggregation, so the result
    is exact for atomic realizations whatever F does inside a cell.  With no
    tilt functions the tilted weights equal the plain ones; a two-cell
    threshold partition tilted by a matching threshold function reproduces
    the closed-form map.
    """
    if getattr(realization, "atom_count", None) is None and \
            not hasattr(realization, "inner_patterns"):
        raise ValueError("tilted partition weights need exact inner patterns; "
                         "this realization only supports sampling")
    masses, patterns = realization.inner_patterns(member_row)
    cells = partition.cell_of(patterns)
    plain = np.zeros(partition.cell_count)
    np.add.at(plain, cells, masses)
    f_atoms = tilt_values(funcs, patterns)
    boltz = masses * np.exp(f_atoms)
    denom = float(boltz.sum())
    tilted = np.zeros(partition.cell_count)
    np.add.at(tilted, cells, boltz)
    tilted /= denom
    return WeightVector(tuple(plain)), WeightVector(tuple(tilted)), denom


def t_map(weights: WeightVector, t: float):
    """Closed-form two-cell map: (T_t(W), Delta_t) with Delta_t = 1 + W_1(e^t - 1).

    T_t has inverse T_{-t} and composes additively in t; Delta_t >= 1 for
    t >= 0.
    """
    if len(weights.masses) != 2:
        raise ValueError("closed-form map applies to two-cell partitions")
    w1 = weights.masses[0]
    delta = 1.0 + w1 * math.expm1(t)
    first = w1 * math.exp(t) / delta
    return WeightVector((first, (1.0 - w1) / delta)), delta


@dataclass(frozen=True)
class MatrixWeightFunction:
    """Phi(R, W) = matrix_part(R) * prod_j factor_j(W[cell_j]).

    weight_factors: tuples (cell_index, scalar function), 0-based cells.
    """

    matrix_part: object
    weight_factors: tuple = ()

    def evaluate(self, R, W) -> np.ndarray:
        out = np.asarray(self.matrix_part.evaluate(R), dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        for cell, f in self.weight_factors:
            out = out * f.evaluate(W[..., cell])
        return out

    def max_replica(self) -> int:
        return self.matrix_part.max_replica()

    def min_cells(self) -> int:
        if not self.weight_factors:
            return 0
        return max(cell for cell, _f in self.weight_factors) + 1

    def describe(self) -> str:
        parts = [self.matrix_part.describe()]
        parts += [f"W[{cell}]:{f.describe()}" for cell, f in self.weight_factors]
        return "*".join(parts)


def theorem2_test(source: MeasureSource, phi: MatrixWeightFunction,
                  funcs, partition: ThresholdPartition, budget: Budget,
                  seq: np.random.SeedSequence, *,
                  significance: float = 3.0, bootstrap: int = 200,
                  exact_cap: int = 4096, case_label: str = "",
                  asserted: Optional[bool] = None) -> TestReport:
    """Joint overlap-and-weight invariance under the tilted partition map.

    lhs averages Phi(R, W); rhs averages Phi(R, T(W)) times the same replica
    reweighting as the plain invariance test.  Realizations are shared, the
    gap is z-tested with a bootstrap over realizations.
    """
    n = len(funcs)
    if phi.max_replica() > n:
        raise ValueError("test function references more replicas than the tilt")
    if partition.max_replica() > n:
        raise ValueError("partition references more replicas than the tilt")
    if phi.min_cells() > partition.cell_count:
        raise ValueError("test function references more cells than the partition has")
    mu, mu_ses, mu_exact = pair_means_for(
        source, funcs, max(8, budget.realizations // 4), budget.groups,
        subseq(seq, 3), exact_cap=exact_cap)
    reals = budget.realizations
    lhs_vals = np.empty(reals)
    rhs_vals = np.empty(reals)
    for i in range(reals):
        realization = source.realize(subseq(seq, 0, i))
        if not hasattr(realization, "inner_patterns"):
            raise ValueError("partition invariance needs exact inner sums; "
                             f"source {source.label!r} only supports sampling")
        rng = generator(subseq(seq, 1, i))
        sample = realization.enumerate_tuples(n, exact_cap)
        if sample is None:
            sample = realization.sample_groups(budget.groups, n, rng)
        R = sample.overlaps
        lhs_g = np.empty(sample.m)
        rhs_g = np.empty(sample.m)
        for g in range(sample.m):
            w, tw, denom = tilted_partition_weights(
                realization, sample.member[g], partition, funcs)
            ratio = 1.0
            for l in range(n):
                f_l = substituted_tilt(funcs, R[g, l], l, mu[l])
                ratio = ratio * (float(np.exp(f_l)) / denom)
            lhs_g[g] = float(phi.evaluate(R[g][None], w.as_array()[None])[0])
            rhs_g[g] = float(phi.evaluate(R[g][None], tw.as_array()[None])[0]) * ratio
        lhs_vals[i] = sample.average(lhs_g)
        rhs_vals[i] = sample.average(rhs_g)
    d = lhs_vals - rhs_vals
    dm = float(d.mean())
    dse = bootstrap_se(d, bootstrap, generator(subseq(seq, 2)))
    rhs_est = mean_estimate(rhs_vals)
    # substituted pair means scale the reweighted side by exp(sum delta_l);
    # their shared error widens the gap variance by rhs^2 sum se_l^2
    mu_var = sum(se * se for se in mu_ses)
    if mu_var > 0.0:
        dse = math.sqrt(dse * dse + rhs_est.mean ** 2 * mu_var)
    z = z_from(dm, dse)
    if asserted is None:
        asserted = source.gg_reference
    return TestReport(
        kind="theorem2",
        case_label=case_label or (f"n={n}; phi={phi.describe()}; "
                                  f"{partition.describe()}"),
        n=n,
        lhs=mean_estimate(lhs_vals),
        rhs=rhs_est,
        difference=Estimate(dm, dse, reals),
        z_score=z,
        significance=significance,
        passed=bool(abs(z) < significance),
        applicable=True,
        asserted=asserted,
        metadata={
            "source": source.label,
            "cells": partition.cell_count,
            "pair_means_exact": mu_exact,
        },
    )
