import numpy as np
import pytest

from partvar.streams import Stream, replicate_generator


def test_same_stream_same_numbers():
    a = Stream(5).substream(10).generator().random(8)
    b = Stream(5).substream(10).generator().random(8)
    np.testing.assert_array_equal(a, b)


def test_substreams_differ():
    draws = {tuple(Stream(5).substream(r).generator().integers(0, 2**62, 4)) for r in range(200)}
    assert len(draws) == 200


def test_seeds_differ():
    a = Stream(1).substream(0).generator().random(4)
    b = Stream(2).substream(0).generator().random(4)
    assert not np.array_equal(a, b)


def test_nested_paths_differ():
    a = Stream(1).substream(0).substream(1).generator().random(4)
    b = Stream(1).substream(1).substream(0).generator().random(4)
    c = Stream(1).substream(1).generator().random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(b, c)


def test_order_independent():
    forward = [Stream(9).substream(r).generator().random() for r in range(50)]
    backward = [Stream(9).substream(r).generator().random() for r in reversed(range(50))][::-1]
    assert forward == backward


def test_replicate_generator_matches_stream():
    assert replicate_generator(3, 4).random() == Stream(3).substream(4).generator().random()


def test_large_index():
    Stream(1).substream(2**70).generator().random()


def test_negative_rejected():
    with pytest.raises(ValueError):
        Stream(-1)
    with pytest.raises(ValueError):
        Stream(1).substream(-2)
