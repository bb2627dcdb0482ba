import math

import numpy as np
from hypothesis import strategies as st
from pytest import fixture

from codebooks import LibraryParams, library_from_codewords
from mac_model import bsc_pair, noiseless_pair
from models import DecoderConfig

# codewords of the n=6 noiseless example: every wrong candidate splits a
# group of positions that share one (x, y) value
HAND_A = [[[1, 1, 1, 0, 0, 0], [0, 1, 1, 1, 0, 0]]]
HAND_B = [[[1, 0, 1, 0, 1, 0], [1, 0, 0, 1, 0, 1]]]


def balanced_params(n, rates1=(0.0,), rates2=(0.0,)):
    half = np.array([[n // 2, n - n // 2]])
    return LibraryParams(
        n, np.array([n]), tuple(half for _ in rates1), tuple(half for _ in rates2), tuple(rates1), tuple(rates2)
    )


def within_three_sigma(estimate, exact):
    """
    |mean - exact| <= 3 sigma, with sigma the larger of the sample std_err
    and the binomial spread at the exact value. A sample with no errors
    reports std_err 0, so the exact spread is the small-sample allowance;
    the extra 1e-9 covers float residue in the exact sum.
    """
    spread = math.sqrt(exact * (1.0 - exact) / estimate.trials) if 0.0 < exact < 1.0 else 0.0
    return abs(estimate.mean - exact) <= 3 * max(estimate.std_err, spread) + 1e-9


@fixture
def noiseless():
    return noiseless_pair()


@fixture
def bsc():
    return bsc_pair(0.1)


@fixture
def constant_eta():
    return DecoderConfig(eta=0.05, eta_schedule="constant")


@fixture
def hand_library():
    params = balanced_params(6, (1 / 6,), (1 / 6,))
    return library_from_codewords(params, HAND_A, HAND_B)


@st.composite
def joint_laws(draw, min_axes=2, max_axes=4, max_size=3):
    """Random dense joint law with 2..4 axes of size 2..3, some zeros allowed"""
    ndim = draw(st.integers(min_axes, max_axes))
    shape = tuple(draw(st.lists(st.integers(2, max_size), min_size=ndim, max_size=ndim)))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    if draw(st.booleans()):
        probs = np.where(probs < np.quantile(probs, 0.2), 0.0, probs)
        probs = probs / probs.sum()
    return probs
