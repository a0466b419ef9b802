import math

import numpy as np
import pytest

from overlaplab.core import Estimate
from overlaplab.functions import Constant, PairProduct, Polynomial, Threshold
from overlaplab.identities import TestReport as Report
from overlaplab.identities import (Budget, bootstrap_se,
                                   gg_identity_test, mixture_law_check,
                                   pair_law_on_grid, pair_mean_estimate,
                                   z_from)
from overlaplab.measures import CascadeSource, sample_pd_weights
from overlaplab.rng import generator, seed_root, subseq
from overlaplab.spin import EnumeratedSpinSource, sk_model

IDENTITY = Polynomial((0.0, 1.0))
SQUARE = Polynomial((0.0, 0.0, 1.0))
UNIT = Constant(1.0)


# ---------------------------------------------------------------- helpers

def test_budget_validation_and_scaling():
    with pytest.raises(ValueError, match="realizations"):
        Budget(realizations=1)
    with pytest.raises(ValueError, match="positive"):
        Budget(realizations=10, groups=0)
    b = Budget(realizations=100, groups=8).scaled(0.25)
    assert b.realizations == 25 and b.groups == 8
    assert Budget(realizations=10).scaled(0.01).realizations == 2


def test_z_from_handles_zero_se():
    assert z_from(0.0, 0.0) == 0.0
    assert z_from(0.5, 0.0) == math.inf
    assert z_from(-0.5, 0.0) == -math.inf
    assert z_from(1.0, 0.5) == pytest.approx(2.0)


def test_bootstrap_se_constant_array_is_exactly_zero(rng):
    assert bootstrap_se(np.full(50, 3.7), 200, rng) == 0.0


def test_bootstrap_se_matches_analytic_scale(rng):
    values = np.random.default_rng(0).normal(size=400)
    se = bootstrap_se(values, 400, rng)
    want = values.std(ddof=1) / 20.0
    assert se == pytest.approx(want, rel=0.25)


def test_bootstrap_se_rejects_degenerate_inputs(rng):
    with pytest.raises(ValueError, match="resamples"):
        bootstrap_se(np.ones(10), 1, rng)
    with pytest.raises(ValueError, match="realizations"):
        bootstrap_se(np.ones(1), 100, rng)


def test_report_status_strings():
    est = Estimate(0.0, 0.0, 1)
    base = dict(kind="gg", case_label="x", n=2, lhs=est, rhs=est,
                difference=est, z_score=0.0, significance=3.0)
    assert Report(**base, passed=True).status == "pass"
    assert Report(**base, passed=False).status == "fail"
    assert Report(**base, passed=False, asserted=False).status == "recorded"
    assert Report(**base, passed=True, applicable=False).status == "not-applicable"


# ---------------------------------------------------------------- pair means

def test_pair_mean_exact_for_one_level(one_level, seq):
    est = pair_mean_estimate(one_level, IDENTITY, 16, 8, seq)
    law = one_level.exact_overlap_law()
    assert est.mean == law.mean_of(IDENTITY)  # same code path, bitwise
    assert est.std_error == 0.0


def test_pair_mean_sampled_for_two_level(two_level, seq):
    est = pair_mean_estimate(two_level, IDENTITY, 64, 16, seq)
    # oracle: average the per-realization exact means over fresh realizations
    vals = [two_level.realize(subseq(seq, 0, i)).exact_pair_mean(IDENTITY)
            for i in range(64)]
    assert est.mean == pytest.approx(np.mean(vals), abs=1e-12)
    assert est.std_error > 0.0


def test_pair_law_on_grid_one_level(one_level, seq):
    grid = np.asarray(one_level.overlap_grid())
    masses, ses = pair_law_on_grid(one_level, grid, 64, 32, seq)
    assert masses.sum() == pytest.approx(1.0)
    bias = one_level.exact_overlap_law().truncation_bias
    assert abs(masses[1] - 0.5) < 4 * ses[1] + bias + 1e-3


# ---------------------------------------------------------------- identity

def test_gg_identity_validation(one_level, seq):
    f = PairProduct(((1, 2, IDENTITY),))
    with pytest.raises(ValueError, match="n >= 2"):
        gg_identity_test(one_level, f, IDENTITY, 1, Budget(4, 4), seq)
    with pytest.raises(ValueError, match="replica 3"):
        gg_identity_test(one_level, PairProduct(((1, 3, IDENTITY),)), IDENTITY,
                         2, Budget(4, 4), seq)
    with pytest.raises(ValueError, match="bootstrap"):
        gg_identity_test(one_level, f, IDENTITY, 2, Budget(4, 4), seq,
                         bootstrap=1)


def test_gg_dirac_is_bitwise_zero(dirac, seq):
    f = PairProduct(((1, 2, Polynomial((0.5, 1.0))),))
    rep = gg_identity_test(dirac, f, SQUARE, 2, Budget(4, 4), seq)
    assert rep.difference.mean == 0.0
    assert rep.difference.std_error == 0.0
    assert rep.z_score == 0.0
    assert rep.passed and rep.status == "pass"
    assert rep.metadata["pair_mean_exact"] is True


def test_gg_exchangeability_null_holds_for_non_reference_source(seq):
    # with f constant, both sides agree for ANY exchangeable source, so even
    # a finite spin model must come out statistically flat
    source = EnumeratedSpinSource(sk_model(3, 1.0))
    rep = gg_identity_test(source, UNIT, IDENTITY, 3,
                           Budget(realizations=200, groups=4), seq)
    assert abs(rep.z_score) < 3.5
    assert rep.asserted is False and rep.status in ("recorded",)
    assert rep.metadata["exact_inner"] is True


def test_gg_one_level_cascade_passes(one_level, seq):
    f = PairProduct(((1, 2, IDENTITY),))
    rep = gg_identity_test(one_level, f, IDENTITY, 3,
                           Budget(realizations=400, groups=24), seq)
    assert rep.asserted is True
    assert abs(rep.z_score) < 3.5, rep.to_dict()


def test_gg_se_shrinks_with_realizations(one_level):
    f = PairProduct(((1, 2, IDENTITY),))
    small = gg_identity_test(one_level, f, IDENTITY, 2,
                             Budget(realizations=250, groups=16), seed_root(21))
    big = gg_identity_test(one_level, f, IDENTITY, 2,
                           Budget(realizations=1000, groups=16), seed_root(22))
    ratio = small.difference.std_error / big.difference.std_error
    assert 1.6 < ratio < 2.5  # quadrupled realizations halve the error


# ---------------------------------------------------------------- mixture

def test_mixture_conditionals_match_hand_values():
    # zeta = 1/2: P(fresh = q* | pair at q*) = 3/4, and 1/4 given q_0.
    # Within a realization the conditional masses are exact weight moments
    # (sum w^2, sum w^3), so only realization-level noise remains.
    rng = generator(seed_root(23))
    draws = 8000
    pair = np.empty(draws)
    triple = np.empty(draws)
    for i in range(draws):
        w = sample_pd_weights(0.5, 256, rng)
        pair[i] = np.sum(w ** 2)
        triple[i] = np.sum(w ** 3)
    p_same = triple.mean() / pair.mean()
    p_cross = (pair.mean() - triple.mean()) / (1.0 - pair.mean())
    assert p_same == pytest.approx(0.75, abs=0.02)
    assert p_cross == pytest.approx(0.25, abs=0.02)


def test_mixture_law_check_one_level(one_level, seq):
    rep = mixture_law_check(one_level, 2, Budget(realizations=250, groups=48),
                            seq)
    assert rep.kind == "mixture"
    assert rep.passed, rep.metadata["worst_cell"]
    assert rep.applicable
    assert rep.metadata["pair_law_exact"] is True
    patterns = {tuple(p["pattern"]) for p in rep.metadata["patterns"]}
    assert patterns == {(0.0,), (0.4,)}
    for p in rep.metadata["patterns"]:
        if not p["flagged"]:
            assert p["tv"] < 0.05


def test_mixture_dirac_exact_mode(dirac, seq):
    rep = mixture_law_check(dirac, 2, Budget(realizations=8, groups=4), seq)
    assert rep.metadata["exact_conditionals"] is True
    assert rep.applicable
    assert rep.difference.mean == 0.0
    assert rep.z_score == 0.0 and rep.passed


def test_mixture_custom_bins(one_level, seq):
    rep = mixture_law_check(one_level, 2, Budget(realizations=40, groups=32),
                            seq, bins=[0.0, 0.4])
    assert rep.metadata["grid"] == [0.0, 0.4]


def test_mixture_validation(one_level, seq):
    with pytest.raises(ValueError, match="n >= 2"):
        mixture_law_check(one_level, 1, Budget(4, 4), seq)


def test_mixture_flags_starved_cells(one_level, seq):
    rep = mixture_law_check(one_level, 2, Budget(realizations=4, groups=2),
                            seq, min_count=10 ** 6)
    assert not rep.applicable
    assert rep.status == "not-applicable"
