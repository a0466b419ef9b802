import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlaplab.core import OverlapMatrix
from overlaplab.functions import Polynomial, Threshold
from overlaplab.measures import (CascadeSource, DiracSource,
                                 FiniteAtomicRealization, GroupSample,
                                 OverlapLaw, exact_overlap_law,
                                 sample_pd_weights, sample_replicas)
from overlaplab.rng import generator, seed_root, subseq

IDENTITY = Polynomial((0.0, 1.0))


# ---------------------------------------------------------------- weights

def test_pd_weights_are_sorted_normalized(rng):
    w = sample_pd_weights(0.5, 100, rng)
    assert w.shape == (100,)
    assert np.all(np.diff(w) <= 0)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w > 0)


def test_pd_weights_validation(rng):
    with pytest.raises(ValueError, match="zeta"):
        sample_pd_weights(0.0, 10, rng)
    with pytest.raises(ValueError, match="zeta"):
        sample_pd_weights(1.0, 10, rng)
    with pytest.raises(ValueError, match="truncation"):
        sample_pd_weights(0.5, 1, rng)


def test_pd_coincidence_prob_matches_closed_form():
    # E[sum w_k^2] = 1 - zeta, the textbook identity for these weights
    zeta = 0.5
    rng = np.random.default_rng(777)
    draws = 4000
    vals = np.empty(draws)
    for i in range(draws):
        w = sample_pd_weights(zeta, 2000, rng)
        vals[i] = float(w @ w)
    mean = vals.mean()
    se = vals.std(ddof=1) / np.sqrt(draws)
    assert abs(mean - (1.0 - zeta)) < 3.0 * se + 1e-3  # small truncation slack


def test_pd_small_zeta_concentrates_on_one_atom():
    rng = np.random.default_rng(5)
    tops = [sample_pd_weights(0.05, 256, rng)[0] for _ in range(200)]
    assert np.mean(tops) > 0.85


# ---------------------------------------------------------------- laws

def test_overlap_law_validation():
    with pytest.raises(ValueError):
        OverlapLaw((0.1, 0.2), (0.7,))
    with pytest.raises(ValueError):
        OverlapLaw((0.1,), (0.5,))


def test_overlap_law_mean_of():
    law = OverlapLaw((0.0, 0.4), (0.25, 0.75))
    assert law.mean_of(IDENTITY) == pytest.approx(0.3)
    assert law.mean_of(Threshold(0.2)) == pytest.approx(0.75)


def test_one_level_exact_law(one_level):
    law = exact_overlap_law(one_level)
    assert law.values == (0.0, 0.4)
    assert law.masses == (0.5, 0.5)
    assert law.truncation_bias > 0.0


def test_two_level_has_no_closed_form_law(two_level):
    with pytest.raises(ValueError, match="no exact overlap law"):
        exact_overlap_law(two_level)


# ---------------------------------------------------------------- dirac

def test_dirac_realization_is_single_atom(dirac, seq, rng):
    r = dirac.realize(seq)
    assert r.atom_count == 1
    assert r.q_star == pytest.approx(0.6)
    sample = r.sample_groups(5, 3, rng)
    law_value = exact_overlap_law(dirac).values[0]
    assert np.all(sample.overlaps == law_value)  # bit-for-bit


def test_dirac_validation():
    with pytest.raises(ValueError, match="q_star"):
        DiracSource(q_star=0.0)
    with pytest.raises(ValueError, match="q_star"):
        DiracSource(q_star=1.5)


# ---------------------------------------------------------------- cascades

def test_cascade_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        CascadeSource(zetas=(0.7, 0.3), overlaps=(0.0, 0.2, 0.5))
    with pytest.raises(ValueError, match="overlap values"):
        CascadeSource(zetas=(0.5,), overlaps=(0.4, 0.1))
    with pytest.raises(ValueError, match="need 2 overlap"):
        CascadeSource(zetas=(0.5,), overlaps=(0.0, 0.2, 0.5))
    with pytest.raises(ValueError, match="level parameters"):
        CascadeSource(zetas=(1.2,), overlaps=(0.0, 0.5))


def test_cascade_realization_is_seed_deterministic(two_level, seq):
    a = two_level.realize(seq)
    b = two_level.realize(seq)
    rng_a, rng_b = generator(subseq(seq, 9)), generator(subseq(seq, 9))
    sa = a.sample_groups(20, 3, rng_a)
    sb = b.sample_groups(20, 3, rng_b)
    assert np.array_equal(sa.overlaps, sb.overlaps)
    assert np.array_equal(sa.member, sb.member)


def test_cascade_query_order_does_not_change_tree(two_level, seq):
    # node weights are keyed by path, so visiting order is irrelevant
    a = two_level.realize(seq)
    b = two_level.realize(seq)
    a.sample_groups(50, 2, generator(subseq(seq, 1)))  # warm a only
    pa = a.exact_level_probs(node_cap=10 ** 5)
    pb = b.exact_level_probs(node_cap=10 ** 5)
    assert np.array_equal(pa, pb)


def test_cascade_overlaps_take_tree_values(two_level, seq, rng):
    r = two_level.realize(seq)
    sample = r.sample_groups(200, 3, rng)
    off = sample.overlaps[:, np.triu_indices(3, k=1)[0], np.triu_indices(3, k=1)[1]]
    assert set(np.unique(off)) <= set(two_level.overlaps)
    diag = sample.overlaps[:, np.arange(3), np.arange(3)]
    assert np.all(diag == two_level.q_star)


def test_cascade_level_probs_sum_to_one_and_match_sampling(one_level, seq):
    r = one_level.realize(seq)
    probs = r.exact_level_probs(node_cap=10 ** 4)
    assert probs.shape == (2,)
    assert probs.sum() == pytest.approx(1.0)
    rng = generator(subseq(seq, 3))
    sample = r.sample_groups(4000, 2, rng)
    shared = np.mean(sample.overlaps[:, 0, 1] == one_level.q_star)
    se = np.sqrt(probs[1] * (1 - probs[1]) / 4000)
    assert abs(shared - probs[1]) < 4 * se + 1e-3


def test_cascade_heaviest_atom_frequency_matches_weight(one_level, seq):
    r = one_level.realize(seq)
    w, _cum = r._node(())
    rng = generator(subseq(seq, 4))
    sample = r.sample_groups(6000, 1, rng)
    top = int(np.argmax(w))
    freq = np.mean(sample.member[:, 0, 0] == top)
    se = np.sqrt(w[top] * (1 - w[top]) / 6000)
    assert abs(freq - w[top]) < 4 * se + 1e-3


def test_cascade_exact_pair_mean_matches_level_probs(one_level, seq):
    r = one_level.realize(seq)
    probs = r.exact_level_probs()
    want = probs @ np.asarray(one_level.overlaps)
    assert r.exact_pair_mean(IDENTITY) == pytest.approx(want, abs=1e-12)


def test_cascade_inner_patterns_masses_and_values(two_level, seq, rng):
    r = two_level.realize(seq)
    sample = r.sample_groups(1, 3, rng)
    member = sample.member[0]
    masses, patterns = r.inner_patterns(member)
    assert masses.sum() == pytest.approx(1.0)
    assert np.all(masses >= 0)
    assert patterns.shape == (masses.size, 3)
    assert set(np.unique(patterns)) <= set(two_level.overlaps)
    # integrating the pattern against each replica reproduces the exact
    # two-replica mean conditioned on nothing (fresh replica vs sampled one)
    for col in range(3):
        got = float(masses @ patterns[:, col])
        # the fresh-replica overlap with a fixed leaf has mean
        # sum_d P(lcp with that leaf = d) q_d; check through sampling
        fresh = r.sample_groups(4000, 1, generator(subseq(seq, 10, col)))
        emp = r.overlap_of_paths(fresh.member[:, 0, :], member[col][None, :])
        se = emp.std(ddof=1) / np.sqrt(emp.size)
        assert abs(got - emp.mean()) < 4 * se + 1e-3


def test_cascade_embed_reproduces_overlaps(two_level, seq, rng):
    r = two_level.realize(seq)
    sample = r.sample_groups(1, 5, rng)
    vecs = r.embed(sample.member[0])
    gram = vecs @ vecs.T
    assert np.allclose(gram, sample.overlaps[0], atol=1e-12)
    assert vecs.shape[1] >= two_level.dimension


def test_cascade_enumerate_tuples_declined(one_level, seq):
    assert one_level.realize(seq).enumerate_tuples(2, 10 ** 6) is None


# ---------------------------------------------------------------- atomic

def test_finite_atomic_validation():
    atoms = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="sum to 1"):
        FiniteAtomicRealization(atoms, np.array([0.5, 0.6]))
    with pytest.raises(ValueError, match="self-overlap"):
        FiniteAtomicRealization(np.array([[1.0, 0.0], [0.0, 0.5]]),
                                np.array([0.5, 0.5]))


@pytest.fixture
def three_atoms():
    # orthogonal-ish atoms on a common sphere of q* = 0.25
    atoms = 0.5 * np.eye(3)
    return FiniteAtomicRealization(atoms, np.array([0.5, 0.3, 0.2]))


def test_enumerate_tuples_weights_and_cap(three_atoms):
    sample = three_atoms.enumerate_tuples(2, cap=100)
    assert sample.overlaps.shape == (9, 2, 2)
    assert sample.weights.sum() == pytest.approx(1.0)
    assert three_atoms.enumerate_tuples(2, cap=8) is None
    # weighting by atom products: P(atoms 0,1) = 0.5 * 0.3
    ids = np.asarray(sample.member)
    k = int(np.flatnonzero((ids[:, 0] == 0) & (ids[:, 1] == 1))[0])
    assert sample.weights[k] == pytest.approx(0.15)


def test_atomic_exact_pair_mean_is_weighted_double_sum(three_atoms):
    got = three_atoms.exact_pair_mean(IDENTITY)
    R = three_atoms.atoms @ three_atoms.atoms.T
    w = three_atoms.weights
    assert got == pytest.approx(float(w @ R @ w))


def test_atomic_triple_indicator_matches_brute_force(three_atoms):
    got = three_atoms.exact_triple_indicator_mean()
    R = three_atoms.atoms @ three_atoms.atoms.T
    w = three_atoms.weights
    total = 0.0
    for a in range(3):
        for b in range(3):
            for c in range(3):
                ind = 1.0 if R[a, b] >= min(R[a, c], R[b, c]) else 0.0
                total += w[a] * w[b] * w[c] * ind
    assert got == pytest.approx(total)


def test_atomic_inner_patterns_are_gram_columns(three_atoms, rng):
    sample = three_atoms.sample_groups(1, 2, rng)
    masses, patterns = three_atoms.inner_patterns(sample.member[0])
    assert np.array_equal(masses, three_atoms.weights)
    want = three_atoms.atoms @ three_atoms.atoms[sample.member[0]].T
    assert np.array_equal(patterns, want)


def test_group_sample_average_with_and_without_weights():
    overlaps = np.zeros((3, 2, 2))
    plain = GroupSample(overlaps, np.zeros((3, 2)))
    assert plain.average(np.array([1.0, 2.0, 3.0])) == pytest.approx(2.0)
    weighted = GroupSample(overlaps, np.zeros((3, 2)),
                           weights=np.array([0.2, 0.3, 0.5]))
    assert weighted.average(np.array([1.0, 2.0, 3.0])) == pytest.approx(2.3)


# ---------------------------------------------------------------- replicas

def test_sample_replicas_shapes_and_gram(two_level, seq):
    vectors, om = sample_replicas(two_level, 4, seq)
    assert vectors.shape[0] == 4
    assert isinstance(om, OverlapMatrix)
    assert np.allclose(vectors @ vectors.T, om.entries, atol=1e-12)


def test_sample_replicas_single_replica_is_self_overlap(one_level, seq):
    _vectors, om = sample_replicas(one_level, 1, seq)
    assert om.entries.shape == (1, 1)
    assert om.q_star == pytest.approx(one_level.q_star)


def test_sample_replicas_rejects_zero(one_level, seq):
    with pytest.raises(ValueError, match="n >= 1"):
        sample_replicas(one_level, 0, seq)


@given(st.integers(min_value=2, max_value=5),
       st.integers(min_value=1, max_value=4),
       st.integers(min_value=0, max_value=2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_random_atomic_measures_behave(n_atoms, dim, seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n_atoms, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True) * 2.0  # common q* = 0.25
    w = rng.dirichlet(np.ones(n_atoms))
    r = FiniteAtomicRealization(raw, w)
    sample = r.enumerate_tuples(2, cap=1000)
    assert sample.weights.sum() == pytest.approx(1.0)
    got = r.exact_pair_mean(IDENTITY)
    R = raw @ raw.T
    assert got == pytest.approx(float(w @ R @ w), abs=1e-12)
