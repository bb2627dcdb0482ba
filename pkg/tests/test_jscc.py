import itertools
import math

import numpy as np
from pytest import approx, fixture, mark, raises

from config import settings
from conftest import within_three_sigma
from exponents import PairRateCompositionMap, RateToCompositionMap
from jscc import (
    CLASSICAL,
    TYPE_INFORMED,
    SourceSpec,
    build_classical,
    build_type_informed,
    direct_error,
    direct_error_mc,
    jscc_error,
)
from simulator import EXACT, MONTE_CARLO
from utils import GuardExceeded

UNIFORM_KERNEL = [[0.5, 0.5]]


@fixture
def source():
    return SourceSpec.bernoulli(0.11)


@fixture
def classical(source, noiseless):
    g = RateToCompositionMap.constant(UNIFORM_KERNEL)
    return build_classical(source, source, noiseless, [1.0], g, g, n=4, seed=3)


def test_source_spec(source):
    assert source.size == 2
    assert source.entropy == approx(-(0.89 * math.log2(0.89) + 0.11 * math.log2(0.11)))
    with raises(ValueError):
        SourceSpec.bernoulli(1.5)
    with raises(ValueError):
        SourceSpec.from_probs([0.5, 0.6])


def test_classical_code_layout(classical):
    assert classical.mode == CLASSICAL
    assert classical.m1 == classical.m2 == 5
    assert classical.library.params.rates1[2] == approx(math.log2(6) / 4)
    assert [len(cb) for cb in classical.library.A] == [1, 4, 6, 4, 1]
    assert classical.own_type1 == classical.own_type2 == [0, 1, 2, 3, 4]
    assert classical.audited


def test_encode_invert_is_a_bijection(classical):
    sequences = list(itertools.product(range(2), repeat=4))
    seen = set()
    for s1 in sequences:
        for s2 in sequences:
            x, y, message = classical.encode(s1, s2)
            assert classical.invert(message) == (s1, s2)
            i, a, j, b = message
            assert np.array_equal(x, classical.library.A[i][a])
            seen.add(message)
    assert len(seen) == 256
    assert classical.invert(None) is None
    with raises(ValueError):
        classical.encode((0, 1), (0, 1, 1, 0))


def test_class_weights_sum_to_one_exactly(classical):
    exact = classical.class_weights(exact=True)
    assert sum(exact.ravel()) == 1
    assert classical.class_weights().sum() == approx(1.0)


def test_decomposition_matches_direct_enumeration(classical, noiseless, constant_eta):
    report = jscc_error(classical, noiseless, cfg=constant_eta)
    assert report.total.mode == EXACT
    weighted = sum(c.contribution for c in report.contributions)
    assert report.total.mean == approx(weighted, abs=1e-12)
    assert abs(report.total.mean - direct_error(classical, noiseless, constant_eta)) <= 1e-12
    assert len(report.dominant(3)) == 3


def test_type_informed_matches_classical(source, noiseless, classical, constant_eta):
    single = RateToCompositionMap.constant(UNIFORM_KERNEL)
    g1 = PairRateCompositionMap.from_single(single, [0.0], [0.0], sender=1)
    g2 = PairRateCompositionMap.from_single(single, [0.0], [0.0], sender=2)
    informed = build_type_informed(source, source, noiseless, [1.0], g1, g2, n=4, seed=3)
    assert informed.mode == TYPE_INFORMED
    assert informed.m1 == informed.m2 == 25
    assert informed.library.params.m1 == 5
    assert informed.own_type1 == informed.own_type2 == [0, 1, 2, 3, 4]
    a = jscc_error(informed, noiseless, cfg=constant_eta).total.mean
    b = jscc_error(classical, noiseless, cfg=constant_eta).total.mean
    assert a == approx(b, abs=1e-12)


def test_type_informed_decodes_across_logical_pairs(source, noiseless, monkeypatch):
    # sender 1 switches kernel with the other sender's rate; both round to [2, 2] at n=4
    monkeypatch.setattr(settings, "audit_guard", 0.0)
    g1 = PairRateCompositionMap([0.0], [0.0, 0.6], (UNIFORM_KERNEL, [[0.45, 0.55]]), [[0, 1]])
    single = RateToCompositionMap.constant(UNIFORM_KERNEL)
    g2 = PairRateCompositionMap.from_single(single, [0.0], [0.0], sender=2)
    code = build_type_informed(source, source, noiseless, [1.0], g1, g2, n=4, seed=5)
    assert not code.audited
    assert (code.library.params.m1, code.library.params.m2) == (10, 5)
    assert code.own_type1 == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    assert code.book1[2, 0] != code.book1[2, 2]

    x, y, _ = code.encode((0, 1, 1, 0), (1, 0, 0, 1))
    scores = code.decoder(noiseless).scores(2 * x + y)
    assert np.isfinite(scores).all()

    # book1[2, 0] is never paired with a type-2 codebook of sender 2
    i, j = code.book1[2, 0], code.book2[0, 2]
    s1, s2 = code.invert((i, 0, j, 3))
    assert len(s1) == len(s2) == 4
    assert sum(s1) == sum(s2) == 2


def test_monte_carlo_mode(classical, noiseless, constant_eta):
    report = jscc_error(classical, noiseless, mode="mc", trials=500, seed=1, cfg=constant_eta)
    assert report.total.mode == MONTE_CARLO
    assert report.total.trials >= 25
    assert 0.0 <= report.total.mean <= 1.0
    with raises(ValueError):
        jscc_error(classical, noiseless, mode="sampled")


@mark.parametrize("seed", [2, 3, 4])
def test_end_to_end_monte_carlo_near_exact(classical, noiseless, constant_eta, seed):
    exact = direct_error(classical, noiseless, constant_eta)
    mc = direct_error_mc(classical, noiseless, trials=1000, seed=seed, cfg=constant_eta)
    assert within_three_sigma(mc, exact)
    with raises(ValueError):
        direct_error_mc(classical, noiseless, trials=0)


def test_codebook_pair_guard(source, noiseless, monkeypatch):
    monkeypatch.setattr(settings, "codebook_pair_guard", 4.0)
    g = RateToCompositionMap.constant(UNIFORM_KERNEL)
    with raises(GuardExceeded):
        build_classical(source, source, noiseless, [1.0], g, g, n=4)


def test_composition_alphabet_must_match_channel(source, noiseless):
    g = RateToCompositionMap.constant([[1 / 3, 1 / 3, 1 / 3]])
    with raises(ValueError, match="input alphabets"):
        build_classical(source, source, noiseless, [1.0], g, g, n=4)


@mark.slow
def test_decomposition_on_noisy_channel(classical, bsc, constant_eta):
    report = jscc_error(classical, bsc, cfg=constant_eta)
    assert abs(report.total.mean - direct_error(classical, bsc, constant_eta)) <= 1e-12
