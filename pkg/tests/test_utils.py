import numpy as np
from pytest import raises

from config import settings
from utils import GuardExceeded, check_guard, derive_rng, largest_remainder, validate_stochastic


def test_check_guard(monkeypatch):
    check_guard(10, 10, "exact error")
    with raises(GuardExceeded, match="exact error needs 11") as exc:
        check_guard(11, 10, "exact error")
    assert exc.value.limit == 10
    monkeypatch.setattr(settings, "guard_override", True)
    check_guard(11, 10, "exact error")


def test_derive_rng_streams():
    a = derive_rng(3, 1, 2).integers(0, 2 ** 31, 5)
    b = derive_rng(3, 1, 2).integers(0, 2 ** 31, 5)
    c = derive_rng(3, 1, 3).integers(0, 2 ** 31, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with raises(ValueError):
        derive_rng(3, -1)


def test_validate_stochastic_names_the_row():
    rows = validate_stochastic([[0.5, 0.5], [0.2, 0.8]], "kernel")
    assert rows.dtype == float
    with raises(ValueError, match=r"kernel row \(1,\) sums to 0.9"):
        validate_stochastic([[0.5, 0.5], [0.2, 0.7]], "kernel")
    with raises(ValueError, match="negative"):
        validate_stochastic([[1.5, -0.5]], "kernel")


def test_largest_remainder():
    assert largest_remainder([0.5, 0.5], 3).tolist() == [2, 1]
    assert largest_remainder([1 / 3] * 3, 4).tolist() == [2, 1, 1]
    assert largest_remainder([0.1, 0.9], 10).tolist() == [1, 9]
    with raises(ValueError):
        largest_remainder([0.0, 0.0], 3)
