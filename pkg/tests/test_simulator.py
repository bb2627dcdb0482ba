import math

import numpy as np
from pytest import approx, mark, raises

from codebooks import build_library
from config import settings
from conftest import balanced_params, within_three_sigma
from mac_model import MacChannel, preset_channel
from models import DecoderConfig, SolverConfig
from simulator import (
    EXACT,
    MONTE_CARLO,
    DecayRow,
    ErrorEstimate,
    decay_profile,
    decreasing_to_zero,
    derive_seed,
    estimate_err_c,
    estimate_err_d,
    estimate_errors,
    exact_error,
    exact_feasible,
    exponent_nondecreasing,
    oracle_size,
    prepare_library,
    proposition2_witness,
    strictly_decreasing,
)
from typekit import Alphabet
from utils import GuardExceeded, derive_rng


def test_error_estimate_validation():
    with raises(ValueError):
        ErrorEstimate(1.5, 0.0, 10, MONTE_CARLO)
    with raises(ValueError):
        ErrorEstimate(0.5, 0.1, 10, EXACT)
    est = ErrorEstimate.from_count(3, 10)
    assert est.mean == approx(0.3)
    assert est.std_err == approx(math.sqrt(0.021))


def test_exact_errors_of_hand_library(hand_library, noiseless, constant_eta):
    err_d, err_c = exact_error(hand_library, noiseless, 0, 0, constant_eta)
    assert err_d.mean == 0.0
    assert err_c.mean == approx(1.0)
    assert err_d.mode == EXACT
    assert exact_feasible(hand_library, noiseless, 0, 0)


def test_oracle_guard_counts_classes_times_candidates(hand_library, noiseless, constant_eta, monkeypatch):
    # deterministic channel: one output class per message, 2 x 2 messages, 2 x 2 candidates
    assert oracle_size(hand_library, noiseless, 0, 0) == 16
    monkeypatch.setattr(settings, "exact_guard", 15)
    assert not exact_feasible(hand_library, noiseless, 0, 0)
    with raises(GuardExceeded, match=r"support output classes x candidate codeword pairs\) needs 16 "):
        exact_error(hand_library, noiseless, 0, 0, constant_eta)
    monkeypatch.setattr(settings, "exact_guard", 16)
    assert exact_feasible(hand_library, noiseless, 0, 0)


def test_monte_carlo_agrees_on_noiseless(hand_library, noiseless, constant_eta):
    err_d, err_c = estimate_errors(hand_library, noiseless, 0, 0, constant_eta, trials=100, seed=1)
    assert err_d.mean == 0.0
    assert err_c.mean == 1.0
    assert err_d.mode == MONTE_CARLO
    assert estimate_err_d(hand_library, noiseless, 0, 0, constant_eta, trials=100, seed=1) == err_d
    assert estimate_err_c(hand_library, noiseless, 0, 0, constant_eta, trials=100, seed=1) == err_c


def test_monte_carlo_independent_of_threads(hand_library, bsc, constant_eta):
    one = estimate_errors(hand_library, bsc, 0, 0, constant_eta, trials=600, seed=4, threads=1)
    three = estimate_errors(hand_library, bsc, 0, 0, constant_eta, trials=600, seed=4, threads=3)
    assert one == three


def test_monte_carlo_close_to_exact(hand_library, bsc, constant_eta):
    exact_d, exact_c = exact_error(hand_library, bsc, 0, 0, constant_eta)
    mc_d, mc_c = estimate_errors(hand_library, bsc, 0, 0, constant_eta, trials=4000, seed=9)
    assert 0.0 < exact_d.mean < 1.0
    assert within_three_sigma(mc_d, exact_d.mean)
    assert within_three_sigma(mc_c, exact_c.mean)


MC_CASES = [
    (channel, n, seed)
    for channel in ("bsc-pair:0.1", "bsc-pair:0.2", "adder", "random")
    for n in (4, 5, 6)
    for seed in (0, 1)
]


def case_channel(name, n, seed):
    if name != "random":
        return preset_channel(name)
    kernel = derive_rng(seed, n, 141).dirichlet(np.ones(2), size=(2, 2))
    return MacChannel(Alphabet(2), Alphabet(2), Alphabet(2), kernel)


@mark.slow
@mark.parametrize("channel,n,seed", MC_CASES)
def test_monte_carlo_within_three_sigma_of_exact(channel, n, seed, constant_eta):
    W = case_channel(channel, n, seed)
    # sender 1 has two codebooks; odd seeds transmit from the second one
    lib = build_library(balanced_params(n, (1 / n, 1 / n), (1 / n,)), seed)
    i = seed % 2
    assert exact_feasible(lib, W, i, 0)
    exact_d, exact_c = exact_error(lib, W, i, 0, constant_eta)
    mc_d, mc_c = estimate_errors(lib, W, i, 0, constant_eta, trials=2000, seed=seed + 100 * n)
    assert within_three_sigma(mc_d, exact_d.mean)
    assert within_three_sigma(mc_c, exact_c.mean)


def test_codebook_checks(hand_library, noiseless):
    with raises(ValueError):
        exact_error(hand_library, noiseless, 1, 0)
    wide = MacChannel(Alphabet(3), Alphabet(2), Alphabet(2), np.full((3, 2, 2), 0.5))
    with raises(ValueError):
        estimate_errors(hand_library, wide, 0, 0, trials=10)
    with raises(ValueError):
        estimate_errors(hand_library, noiseless, 0, 0, trials=0)


def test_decay_row_exponent():
    row = DecayRow(8, ErrorEstimate(0.25, 0.0, 1, EXACT), ErrorEstimate(0.0, 0.0, 1, EXACT), None, False)
    assert row.exponent_d == approx(0.25)
    zero = DecayRow(8, ErrorEstimate(0.0, 0.0, 1, EXACT), ErrorEstimate(0.0, 0.0, 1, EXACT), None, False)
    assert math.isinf(zero.exponent_d)
    assert exponent_nondecreasing([row, zero])
    assert not exponent_nondecreasing([zero, row])


def test_strictly_decreasing():
    assert strictly_decreasing([0.3, 0.2, 0.1])
    assert not strictly_decreasing([0.3, 0.3])
    assert decreasing_to_zero([0.3, 0.1, 0.0, 0.0])
    assert not decreasing_to_zero([0.3, 0.3, 0.0])


def test_derive_seed():
    assert derive_seed(1, 8) == derive_seed(1, 8)
    assert derive_seed(1, 8) != derive_seed(1, 10)


def test_prepare_library_audits_small_params():
    lib, delta, audited = prepare_library(balanced_params(6, (1 / 6,), (1 / 6,)), seed=0)
    assert audited
    assert delta is not None and delta >= 0
    lib.validate()


def test_decay_profile_on_noiseless(noiseless, constant_eta):
    profile = decay_profile(lambda n: balanced_params(n), [4, 6], noiseless, constant_eta)
    assert [r.n for r in profile.rows] == [4, 6]
    assert all(r.err_d.mean == 0.0 for r in profile.rows)
    assert all(r.audited for r in profile.rows)
    assert not profile.truncated
    with raises(ValueError):
        decay_profile(lambda n: balanced_params(n), [4], noiseless, mode="fast")


def test_decay_profile_truncates_in_exact_mode(noiseless, constant_eta, monkeypatch):
    monkeypatch.setattr(settings, "exact_guard", 0.5)
    profile = decay_profile(lambda n: balanced_params(n), [4], noiseless, constant_eta, mode="exact")
    assert profile.truncated
    assert profile.rows == []


def test_mixture_witness_on_bsc_pair(bsc):
    uniform = [[0.5, 0.5]]
    witness = proposition2_witness(bsc, [1.0], uniform, uniform, uniform, 0.1, 0.1, 0.05, cross_check=False)
    assert witness.feasible
    assert witness.checks["r_above_eta"]
    assert witness.checks["objective_near_eta"]
    assert witness.checks["r_at_one_is_minus_rate"]
    assert witness.objective == approx(0.05, abs=1e-3)


@mark.slow
def test_mixture_witness_cross_check(bsc):
    uniform = [[0.5, 0.5]]
    witness = proposition2_witness(
        bsc, [1.0], uniform, uniform, uniform, 0.1, 0.1, 0.05, config=SolverConfig(restarts=4)
    )
    assert witness.checks["ecthx_at_most_eta"]


def test_mixture_witness_rejects_large_eta(bsc):
    uniform = [[0.5, 0.5]]
    with raises(ValueError, match="x_given_yz"):
        proposition2_witness(bsc, [1.0], uniform, uniform, uniform, 0.1, 0.1, 5.0, cross_check=False)
    with raises(ValueError):
        proposition2_witness(bsc, [1.0], uniform, [[0.3, 0.7]], uniform, 0.1, 0.1, 0.05, cross_check=False)


def test_decoder_config_is_threaded_through(hand_library, noiseless):
    strict = DecoderConfig(eta=5.0, eta_schedule="constant")
    err_d, err_c = exact_error(hand_library, noiseless, 0, 0, strict)
    assert err_d.mean == 1.0
    assert err_c.mean == 0.0
