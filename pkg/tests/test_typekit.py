import itertools
import math
from fractions import Fraction

import numpy as np
from hypothesis import given, settings as hsettings, strategies as st
from pytest import approx, mark, raises

from conftest import joint_laws
from typekit import (
    Alphabet,
    EmpiricalType,
    JointDistribution,
    Sequence,
    approximate_conditional_type,
    batch_multi_information,
    conditional_class_size,
    conditional_divergence,
    conditional_variational_distance,
    count_log_table,
    entropy,
    enumerate_conditional_types,
    enumerate_joint_types,
    enumerate_types,
    joint_type_of,
    kl_divergence,
    log2_type_class_size,
    multi_info_partition_identity_residual,
    multi_information,
    mutual_information,
    rank_in_conditional_class,
    rank_in_type_class,
    sample_conditional_class,
    type_class_probability,
    type_class_size,
    unrank_conditional_class,
    unrank_type_class,
    variational_distance,
)


def test_alphabet_rejects_bad_labels():
    with raises(ValueError):
        Alphabet(0)
    with raises(ValueError):
        Alphabet(2, ("a", "a"))
    assert Alphabet(3).labels == ("0", "1", "2")


def test_distribution_checks_mass():
    with raises(ValueError, match="total mass"):
        JointDistribution.from_array([0.5, 0.4])
    with raises(ValueError):
        JointDistribution.from_array([1.2, -0.2])
    P = JointDistribution.normalized([1.0, 3.0])
    assert P.probs.tolist() == [0.25, 0.75]


def test_marginal_and_conditional():
    P = JointDistribution.from_array([[0.1, 0.3], [0.2, 0.4]])
    assert P.marginal((0,)).probs == approx([0.4, 0.6])
    cond = P.conditional((0,))
    assert cond.sum(axis=1) == approx([1.0, 1.0])
    assert cond[0] == approx([0.25, 0.75])


def test_entropy_examples():
    assert entropy(np.array([0.5, 0.5]), (0,)) == approx(1.0)
    assert entropy(np.array([1.0, 0.0]), (0,)) == 0.0
    uniform = np.full((2, 2), 0.25)
    assert mutual_information(uniform, (0,), (1,)) == approx(0.0, abs=1e-12)
    copy = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert mutual_information(copy, (0,), (1,)) == approx(1.0)


def test_axis_sets_must_be_disjoint():
    with raises(ValueError):
        mutual_information(np.full((2, 2), 0.25), (0,), (0,))
    with raises(ValueError):
        entropy(np.full((2, 2), 0.25), (2,))


def test_multi_information_of_three_copies():
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 1, 1] = 0.5
    assert multi_information(P, [(0,), (1,), (2,)]) == approx(2.0)


@hsettings(max_examples=200, deadline=None)
@given(joint_laws())
def test_measures_nonnegative(P):
    axes = list(range(P.ndim))
    assert entropy(P, axes) >= -1e-12
    assert mutual_information(P, (0,), (1,), tuple(axes[2:])) >= -1e-10
    assert multi_information(P, [(a,) for a in axes]) >= -1e-10


@hsettings(max_examples=200, deadline=None)
@given(joint_laws(min_axes=3))
def test_partition_identity(P):
    axes = list(range(P.ndim))
    if P.ndim == 3:
        residual = multi_info_partition_identity_residual(P, [(0,)], [(1,), (2,)])
    else:
        residual = multi_info_partition_identity_residual(P, [(0,), (1,)], [(2,)], (3,))
    assert abs(residual) <= 1e-10
    assert abs(multi_info_partition_identity_residual(P, [(a,) for a in axes[:1]], [(a,) for a in axes[1:]])) <= 1e-10


@hsettings(max_examples=100, deadline=None)
@given(joint_laws(min_axes=3, max_axes=3), st.permutations([0, 1, 2]))
def test_multi_information_permutation_invariant(P, order):
    base = multi_information(P, [(0,), (1,), (2,)])
    permuted = np.transpose(P, order)
    assert multi_information(permuted, [(0,), (1,), (2,)]) == approx(base, abs=1e-10)


def test_divergence_infinite_off_support():
    assert math.isinf(kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0])))
    assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == approx(1.0)


def test_conditional_divergence_ignores_massless_rows():
    base = np.array([1.0, 0.0])
    P = np.array([[0.5, 0.5], [1.0, 0.0]])
    W = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert conditional_divergence(P, W, base) == approx(0.0)


def test_variational_distances():
    assert variational_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == approx(2.0)
    V = np.array([[0.5, 0.0], [0.0, 0.5]])
    P = np.array([[0.25, 0.25], [0.25, 0.25]])
    assert conditional_variational_distance(V, P) == approx(1.0)


def test_enumerate_types_counts_and_order():
    types = enumerate_types(2, 4)
    assert [t.key() for t in types] == [(0, 4), (1, 3), (2, 2), (3, 1), (4, 0)]
    assert len(enumerate_types(3, 5)) == math.comb(7, 2)
    assert len(enumerate_joint_types((2, 2), 3)) == math.comb(6, 3)


def test_enumerate_conditional_types():
    base = EmpiricalType((2,), np.array([1, 2]), 3)
    cond = enumerate_conditional_types(2, base)
    assert len(cond) == 2 * 3
    for t in cond:
        assert t.counts.sum(axis=1).tolist() == [1, 2]


@mark.parametrize("size", [2, 3])
def test_type_class_sandwich(size):
    for n in range(1, 11):
        for t in enumerate_types(size, n):
            h = entropy(t.probs, (0,))
            count = type_class_size(t)
            assert (n + 1) ** -size * 2 ** (n * h) <= count * (1 + 1e-9)
            assert count <= 2 ** (n * h) * (1 + 1e-9)
            assert log2_type_class_size(t) == approx(math.log2(count))


def test_type_class_size_small():
    assert type_class_size(EmpiricalType((2,), np.array([2, 2]), 4)) == 6
    t = EmpiricalType((2, 2), np.array([[1, 1], [2, 0]]), 4)
    assert conditional_class_size(t) == 2


def test_class_probabilities_sum_to_one_exactly():
    q = [Fraction(89, 100), Fraction(11, 100)]
    for n in (1, 6, 12):
        assert sum(type_class_probability(t, q) for t in enumerate_types(2, n)) == 1


def test_class_probability_matches_float():
    t = EmpiricalType((2,), np.array([3, 1]), 4)
    exact = type_class_probability(t, [Fraction(1, 4), Fraction(3, 4)])
    assert float(exact) == approx(type_class_probability(t, [0.25, 0.75]))
    assert type_class_probability(t, [1.0, 0.0]) == 0.0


def test_rank_unrank_is_lexicographic_bijection():
    counts = [2, 1, 1]
    members = sorted(set(itertools.permutations([0, 0, 1, 2])))
    for rank, seq in enumerate(members):
        assert rank_in_type_class(seq, counts) == rank
        assert unrank_type_class(rank, counts) == seq
    with raises(ValueError):
        unrank_type_class(len(members), counts)
    with raises(ValueError):
        rank_in_type_class([1, 1, 0, 2], counts)


def test_conditional_rank_roundtrip():
    u = np.array([0, 0, 0, 1, 1])
    cond = np.array([[1, 2], [1, 1]])
    size = 3 * 2
    seen = set()
    for r in range(size):
        x = unrank_conditional_class(r, u, cond)
        assert rank_in_conditional_class(x, u, cond) == r
        seen.add(tuple(x))
    assert len(seen) == size


def test_sample_conditional_class_members_distinct():
    rng = np.random.default_rng(3)
    u = np.array([0, 0, 0, 0, 1, 1])
    cond = np.array([[2, 2], [1, 1]])
    rows = sample_conditional_class(u, cond, 12, rng)
    assert len({r.tobytes() for r in rows}) == 12
    for r in rows:
        counts = np.zeros((2, 2), dtype=int)
        np.add.at(counts, (u, r), 1)
        assert counts.tolist() == cond.tolist()
    with raises(ValueError):
        sample_conditional_class(u, cond, 13, rng)


def test_joint_type_of_sequences():
    a = Sequence(Alphabet(2), (0, 1, 1))
    b = Sequence(Alphabet(3), (2, 2, 0))
    t = joint_type_of([a, b])
    assert t.counts.tolist() == [[0, 0, 1], [1, 0, 1]]
    with raises(ValueError):
        joint_type_of([a, Sequence(Alphabet(2), (0, 1))])


def test_sequence_rejects_foreign_symbols():
    with raises(ValueError):
        Sequence(Alphabet(2), (0, 2))


def test_empirical_type_validation():
    with raises(ValueError):
        EmpiricalType((2,), np.array([1, 1]), 3)
    with raises(ValueError):
        EmpiricalType((2,), np.array([-1, 4]), 3)
    t = EmpiricalType((2,), np.array([1, 2]), 3)
    assert t.as_fractions().tolist() == [Fraction(1, 3), Fraction(2, 3)]
    assert EmpiricalType.from_json(t.to_json()) == t


def test_approximate_conditional_type():
    u_counts, cond, nu = approximate_conditional_type(5, np.array([1.0]), np.array([[0.5, 0.5]]))
    assert u_counts.tolist() == [5]
    assert cond.tolist() == [[3, 2]]
    assert nu == approx(0.2)


def test_batch_multi_information_matches_scalar():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(8), size=5).reshape(5, 2, 2, 2)
    batch = batch_multi_information(probs, [(1,), (2,)], (0,))
    for b in range(5):
        assert batch[b] == approx(multi_information(probs[b], [(1,), (2,)], (0,)), abs=1e-12)


def test_count_log_table():
    table = count_log_table(4)
    assert table[0] == 0.0
    assert table[1] == 0.0
    assert table[4] == approx(8.0)
