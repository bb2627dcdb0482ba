import numpy as np
from pytest import approx, raises

from codebooks import (
    CodebookLibraryPair,
    LibraryParams,
    audit_packing,
    build_library,
    codebook_size,
    library_from_codewords,
    packing_functions,
    packing_threshold_log2,
    resample_until_packed,
)
from conftest import HAND_A, HAND_B, balanced_params
from typekit import Alphabet, Sequence, joint_type_of


def test_codebook_size():
    assert codebook_size(6, 1 / 6) == 2
    assert codebook_size(10, 0.3) == 8
    assert codebook_size(5, 0.5) == 5
    assert codebook_size(7, 0.0) == 1
    with raises(ValueError):
        codebook_size(4, -0.1)


def test_params_reject_oversized_codebook():
    with raises(ValueError, match="codebook A0 needs 8 codewords"):
        LibraryParams(3, np.array([3]), (np.array([[1, 2]]),), (np.array([[1, 2]]),), (1.0,), (0.0,))


def test_params_reject_wrong_row_sums():
    with raises(ValueError, match="row sums"):
        LibraryParams(4, np.array([4]), (np.array([[1, 2]]),), (np.array([[2, 2]]),), (0.0,), (0.0,))
    with raises(ValueError):
        LibraryParams(4, np.array([4]), (np.array([[2, 2]]),), (np.array([[2, 2]]),), (0.0, 0.5), (0.0,))


def test_params_from_kernels():
    params, nu = LibraryParams.from_kernels(5, [1.0], [[[0.5, 0.5]]], [[[0.2, 0.8]]], [0.0], [0.0])
    assert params.x_types[0].tolist() == [[3, 2]]
    assert params.y_types[0].tolist() == [[1, 4]]
    assert nu == approx(0.2)
    assert LibraryParams.from_json(params.to_json()).y_types[0].tolist() == [[1, 4]]


def test_build_library_is_deterministic():
    params = balanced_params(8, (0.25, 0.25), (0.25,))
    first = build_library(params, seed=7)
    second = build_library(params, seed=7)
    for a, b in zip(first.A + first.B, second.A + second.B):
        assert np.array_equal(a, b)
    first.validate()
    assert [len(cb) for cb in first.A] == [4, 4]


def test_whole_class_codebook():
    params = balanced_params(4, (np.log2(6) / 4,))
    lib = build_library(params, seed=0)
    assert lib.whole_class[0] == [True]
    assert len({w.tobytes() for w in lib.A[0]}) == 6


def test_library_json_roundtrip_and_tamper(hand_library):
    data = hand_library.to_json()
    back = CodebookLibraryPair.from_json(data)
    assert back.A[0].tolist() == HAND_A[0]
    data["A"][0][0] = [1, 1, 1, 1, 0, 0]
    with raises(ValueError, match="conditional type class"):
        CodebookLibraryPair.from_json(data)


def test_repeated_codeword_rejected_when_distinct():
    params = balanced_params(6, (1 / 6,), (1 / 6,))
    with raises(ValueError, match="repeats a codeword"):
        library_from_codewords(params, [[HAND_A[0][0], HAND_A[0][0]]], HAND_B)


def test_packing_functions_of_hand_library(hand_library):
    u = Sequence(Alphabet(1), (0,) * 6)
    words = [Sequence(Alphabet(2), tuple(w)) for w in (HAND_A[0][0], HAND_A[0][1], HAND_B[0][0], HAND_B[0][1])]
    V = joint_type_of([u] + words)
    assert packing_functions(hand_library, 0, 0, 0, 0, V) == {"pair": 1, "pair_k": 1, "pair_l": 1, "pair_kl": 1}
    with raises(ValueError):
        packing_functions(hand_library, 1, 0, 0, 0, V)


def test_audit_counts_every_tuple(hand_library):
    report = audit_packing(hand_library)
    assert report.passed
    assert report.tuples == 4 + 8 + 8 + 16
    assert report.delta_prime >= 0
    assert report.to_json()["worst_case"]["pair"]["K"] >= 1


def test_audit_flags_repeated_codeword():
    params = LibraryParams(
        6, np.array([6]), (np.array([[3, 3]]),), (np.array([[3, 3]]),), (1 / 6,), (1 / 6,), distinct=False
    )
    lib = build_library(params, seed=0)
    lib.A[0][1] = lib.A[0][0]
    assert not audit_packing(lib, delta_prime=0.0).passed


def test_resample_until_packed_small_library():
    params = balanced_params(8, (1 / 8,), (1 / 8,))
    lib, report = resample_until_packed(params, max_tries=3, seed=2)
    assert report.passed
    assert report.log2_s <= packing_threshold_log2(params)
    lib.validate()
    with raises(ValueError):
        resample_until_packed(params, max_tries=0)


def test_two_codebooks_per_sender_pack_at_n8():
    params, _ = LibraryParams.from_kernels(
        8, [1.0], [[[0.5, 0.5]], [[0.25, 0.75]]], [[[0.5, 0.5]], [[0.25, 0.75]]], [1 / 8, 1 / 8], [1 / 8, 1 / 8]
    )
    assert (params.m1, params.m2) == (2, 2)
    assert params.x_types[1].tolist() == [[2, 6]]
    lib, report = resample_until_packed(params, max_tries=10, seed=0)
    assert report.passed
    assert report.log2_s <= packing_threshold_log2(params)
    # every slot ranges over the codewords of both codebooks of its sender
    assert report.tuples == 4 * 4 + 4 * 4 * 4 * 2 + 4 ** 4
    lib.validate()
