import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlaplab.core import (ConstraintMatrix, Estimate, OverlapMatrix,
                             ReplicaVector, a_star, matrix_approx,
                             mean_estimate, overlap_matrix,
                             ultrametric_indicator)


def test_replica_vector_norm_and_overlap():
    v = ReplicaVector(np.array([0.6, 0.8]))
    w = ReplicaVector(np.array([0.8, -0.6]))
    assert v.dimension == 2
    assert v.overlap(w) == pytest.approx(0.0)
    assert v.overlap(v) == pytest.approx(1.0)


def test_replica_vector_rejects_norm_above_one():
    with pytest.raises(ValueError, match="exceeds 1"):
        ReplicaVector(np.array([1.0, 0.2]))


def test_replica_vector_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ReplicaVector(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ReplicaVector(np.array([np.nan]))


def test_overlap_matrix_from_vectors_matches_manual_gram():
    x = np.array([[0.5, 0.5], [0.5, -0.5], [0.7, 0.1]])
    om = overlap_matrix(x)
    assert np.allclose(om.entries, x @ x.T)
    rows = [ReplicaVector(r) for r in x]
    om2 = overlap_matrix(rows)
    assert np.array_equal(om.entries, om2.entries)


def test_overlap_matrix_requires_constant_diagonal():
    bad = np.array([[1.0, 0.2], [0.2, 0.5]])
    with pytest.raises(ValueError, match="diagonal"):
        OverlapMatrix(bad)


def test_overlap_matrix_rejects_non_psd():
    # symmetric, constant diagonal, but eigenvalue 1 - 2*0.9 < 0
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(ValueError, match="positive semidefinite"):
        OverlapMatrix(bad)


def test_overlap_matrix_rejects_asymmetry_and_nonfinite():
    with pytest.raises(ValueError, match="symmetric"):
        OverlapMatrix(np.array([[1.0, 0.3], [0.2, 1.0]]))
    with pytest.raises(ValueError, match="finite"):
        OverlapMatrix(np.array([[1.0, np.inf], [np.inf, 1.0]]))


def test_overlap_matrix_entries_frozen():
    om = overlap_matrix(np.eye(2) * 0.7)
    with pytest.raises(ValueError):
        om.entries[0, 1] = 0.5


def test_overlap_matrix_json_round_trip():
    x = np.array([[0.5, 0.5, 0.0], [0.5, -0.5, 0.0],
                  [0.1, 0.1, math.sqrt(0.48)]])
    om = overlap_matrix(x)
    back = OverlapMatrix.from_json(om.to_json())
    assert np.array_equal(back.entries, om.entries)
    obj = json.loads(om.to_json())
    assert obj["n"] == 3 and obj["q_star"] == pytest.approx(om.q_star)


def test_constraint_matrix_json_round_trip():
    a = ConstraintMatrix.constant(3, 1.0, 0.25, 0.05)
    back = ConstraintMatrix.from_json(a.to_json())
    assert np.array_equal(back.entries, a.entries)
    assert back.epsilon == a.epsilon


def test_constraint_matrix_validation():
    with pytest.raises(ValueError, match="epsilon"):
        ConstraintMatrix.constant(2, 1.0, 0.3, 0.0)
    with pytest.raises(ValueError, match="positive semidefinite"):
        ConstraintMatrix.constant(3, 0.5, -0.5, 0.1)


def test_matrix_approx_open_interval():
    a = ConstraintMatrix.constant(2, 1.0, 0.3, 0.1)
    good = np.array([[1.0, 0.35], [0.35, 1.0]])
    boundary = np.array([[1.0, 0.4], [0.4, 1.0]])
    assert matrix_approx(good, a)
    assert not matrix_approx(boundary, a)  # strict inequality at the edge
    # diagonal is ignored entirely
    off_diag_only = np.array([[7.0, 0.3], [0.3, 7.0]])
    assert matrix_approx(off_diag_only, a)


def test_a_star_is_max_of_last_column():
    entries = np.array([[1.0, 0.1, 0.5], [0.1, 1.0, 0.2], [0.5, 0.2, 1.0]])
    a = ConstraintMatrix(entries, epsilon=0.05)
    assert a_star(a) == 0.5


def test_ultrametric_indicator_scalar_and_array():
    assert ultrametric_indicator(0.5, 0.2, 0.2) == 1
    assert ultrametric_indicator(0.1, 0.2, 0.3) == 0
    arr = ultrametric_indicator(np.array([0.5, 0.1]), np.array([0.2, 0.2]),
                                np.array([0.2, 0.3]))
    assert arr.tolist() == [1, 0]


def test_estimate_validation():
    with pytest.raises(ValueError, match="at least one sample"):
        Estimate(0.0, 0.0, 0)
    with pytest.raises(ValueError, match="non-negative"):
        Estimate(0.0, -1.0, 5)


def test_estimate_merge_pools_counts_and_errors():
    a = Estimate(1.0, 0.1, 100)
    b = Estimate(3.0, 0.1, 100)
    m = a.merge(b)
    assert m.n_samples == 200
    assert m.mean == pytest.approx(2.0)
    # equal halves: pooled SE is se / sqrt(2)
    assert m.std_error == pytest.approx(0.1 / math.sqrt(2))


def test_mean_estimate_against_manual_formula():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    est = mean_estimate(v)
    assert est.mean == pytest.approx(2.5)
    assert est.std_error == pytest.approx(v.std(ddof=1) / 2.0)
    assert est.n_samples == 4


def test_mean_estimate_single_value_has_zero_se():
    est = mean_estimate(np.array([0.7]))
    assert est.std_error == 0.0 and est.n_samples == 1


@st.composite
def replica_batches(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    d = draw(st.integers(min_value=1, max_value=4))
    rows = draw(st.lists(
        st.lists(st.floats(min_value=-0.4, max_value=0.4), min_size=d, max_size=d),
        min_size=n, max_size=n))
    return np.asarray(rows, dtype=np.float64)


@given(replica_batches())
@settings(max_examples=60, deadline=None)
def test_gram_matrices_always_accepted(batch):
    # any true Gram matrix with equalized diagonal passes validation
    g = batch @ batch.T
    shift = float(np.max(np.diag(g))) - np.diag(g)
    g = g + np.diag(shift)
    om = OverlapMatrix(g)
    assert np.allclose(om.entries, om.entries.T)
    assert np.linalg.eigvalsh(om.entries)[0] >= -1e-9 * max(1.0, om.q_star)


@given(st.floats(min_value=-1, max_value=1), st.floats(min_value=-1, max_value=1),
       st.floats(min_value=-1, max_value=1))
@settings(max_examples=100, deadline=None)
def test_indicator_matches_sort_rule(r12, r13, r23):
    # indicator is 1 exactly when r12 is not the strict minimum
    by_sort = 0 if r12 < min(r13, r23) else 1
    assert ultrametric_indicator(r12, r13, r23) == by_sort
