import pytest

from constelsched.steps import Constant, Harmonic


def test_harmonic():
    h = Harmonic(1.0, 10.0)
    assert h(0) == pytest.approx(0.1)
    assert h(90) == pytest.approx(0.01)
    assert h.divergent and h.square_summable


def test_constant_is_not_square_summable():
    c = Constant(0.5)
    assert c(0) == c(1000) == 0.5
    assert not c.square_summable


def test_invalid_schedules():
    with pytest.raises(AssertionError):
        Harmonic(0.0)
    with pytest.raises(AssertionError):
        Harmonic(1.0, 0.0)
