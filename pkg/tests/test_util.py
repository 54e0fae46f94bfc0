import numpy as np
import pytest

from constelsched.util import THREADS_ENV, batched, config_hash, gray_bits, to_jsonable, worker_count


def test_batched():
    assert list(batched(range(7), 3)) == [(0, 1, 2), (3, 4, 5), (6,)]
    with pytest.raises(ValueError):
        list(batched(range(3), 0))


def test_gray_bits_visits_every_assignment_once():
    bits = gray_bits(0, 16, 4)
    assert bits.shape == (16, 4)
    assert len({tuple(row) for row in bits}) == 16
    # consecutive codes differ in exactly one bit
    assert (np.abs(np.diff(bits.astype(int), axis=0)).sum(axis=1) == 1).all()


def test_gray_bits_chunks_concatenate():
    whole = gray_bits(0, 32, 5)
    parts = np.vstack([gray_bits(0, 10, 5), gray_bits(10, 32, 5)])
    assert np.array_equal(whole, parts)


def test_config_hash_is_canonical():
    a = config_hash({"b": 1, "a": np.arange(3)})
    b = config_hash({"a": [0, 1, 2], "b": 1})
    assert a == b
    assert a != config_hash({"a": [0, 1, 2], "b": 2})
    assert to_jsonable({"x": np.float64(0.5), 1: (np.int64(2),)}) == {"x": 0.5, "1": [2]}


def test_worker_count(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(THREADS_ENV, "4")
    assert worker_count() == 4
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert worker_count() == 1
