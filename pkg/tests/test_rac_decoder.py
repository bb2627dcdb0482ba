import math

import numpy as np
from pytest import approx, mark, raises

from conftest import HAND_A, HAND_B
from models import DecoderConfig
from rac_decoder import (
    COLLISION,
    MESSAGE,
    Decoder,
    alpha,
    decode,
    decode_batch,
    default_eta,
    min_conditional_entropy_pair,
    resolve_eta,
)
from typekit import Alphabet, Sequence


def noiseless_output(a, b):
    x = np.array(HAND_A[0][a])
    y = np.array(HAND_B[0][b])
    return Sequence(Alphabet(4), tuple((2 * x + y).tolist()))


def test_default_eta_value():
    assert default_eta(16, (1, 2, 2, 2), 1, 1) == approx(2 * math.log2(17))
    with raises(ValueError):
        default_eta(0, (2,), 1, 1)


def test_eta_follows_the_schedule():
    constant = DecoderConfig(eta=0.3, eta_schedule="constant")
    assert resolve_eta(constant, 16, (1, 2, 2, 2), 1, 1) == 0.3
    assert resolve_eta(constant, 4, (1, 2, 2, 2), 1, 1) == 0.3
    assert resolve_eta(None, 16, (1, 2, 2, 2), 1, 1) == approx(2 * math.log2(17))
    assert resolve_eta(DecoderConfig(), 16, (1, 2, 2, 2), 1, 1) == approx(2 * math.log2(17))
    with raises(ValueError, match="needs eta > 0"):
        DecoderConfig(eta_schedule="constant")
    with raises(ValueError, match="constant schedule"):
        DecoderConfig(eta=0.3)
    with raises(ValueError, match="constant schedule"):
        DecoderConfig.model_validate({"eta": 0.3, "etaSchedule": "default"})


def test_alpha_needs_four_axes():
    with raises(ValueError):
        alpha(np.full((2, 2, 2), 0.125))


@mark.parametrize("a,b", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_hand_library_decodes_noiseless_output(hand_library, constant_eta, a, b):
    out = decode(hand_library, noiseless_output(a, b), constant_eta)
    assert out.verdict == MESSAGE
    assert out.message == (0, a, 0, b)
    assert all(m > 0 for m in out.margins)
    assert out.stage1_score == approx(2.0 - 1 / 3)


def test_default_threshold_is_too_strict_at_small_n(hand_library):
    out = decode(hand_library, noiseless_output(1, 0))
    assert out.verdict == COLLISION
    assert out.candidate == (0, 1, 0, 0)
    assert out.eta > 2.0


def test_larger_eta_never_turns_collision_into_message(hand_library):
    z = noiseless_output(0, 1)
    configs = [DecoderConfig(eta=eta, eta_schedule="constant") for eta in (0.05, 0.5, 1.0, 5.0)]
    verdicts = [decode(hand_library, z, cfg).verdict for cfg in configs]
    first_collision = verdicts.index(COLLISION)
    assert all(v == COLLISION for v in verdicts[first_collision:])


def test_tied_candidates_give_collision(hand_library, constant_eta):
    out = decode(hand_library, np.zeros(6, dtype=np.int64), constant_eta, z_size=2)
    assert out.is_collision
    assert out.tie
    assert out.margins is None


def test_every_codeword_pair_is_scored(hand_library):
    dec = Decoder(hand_library, 4)
    scores = dec.scores(noiseless_output(0, 0))
    assert scores.shape == (len(dec.X), len(dec.Y))
    assert np.isfinite(scores).all()


def test_scores_match_alpha_of_joint_type(hand_library):
    dec = Decoder(hand_library, 4)
    z = noiseless_output(1, 1)
    scores = dec.scores(z)
    for c in range(2):
        for d in range(2):
            expected = alpha(dec.joint_type(c, d, z)) - 2 / 6
            assert scores[c, d] == approx(expected, abs=1e-9)


def test_bad_outputs_rejected(hand_library):
    with raises(ValueError):
        decode(hand_library, Sequence(Alphabet(4), (0, 1, 2)))
    with raises(ValueError):
        decode(hand_library, np.full(6, 4), z_size=4)
    with raises(ValueError):
        decode(hand_library, np.zeros(6, dtype=np.int64))


def test_decode_batch_matches_single(hand_library, constant_eta):
    zs = [noiseless_output(a, b) for a in range(2) for b in range(2)]
    serial = decode_batch(hand_library, zs, constant_eta, threads=1)
    pooled = decode_batch(hand_library, zs, constant_eta, threads=3)
    assert [o.message for o in serial] == [o.message for o in pooled]
    assert decode_batch(hand_library, [], constant_eta) == []


def test_conditional_entropy_decoder_agrees(hand_library):
    for a in range(2):
        for b in range(2):
            z = noiseless_output(a, b)
            c, d, h = min_conditional_entropy_pair(hand_library, z)
            assert (c, d) == (a, b)
            assert h == approx(0.0, abs=1e-12)
            scores = Decoder(hand_library, 4).scores(z)
            assert np.unravel_index(int(np.argmax(scores)), scores.shape) == (a, b)
