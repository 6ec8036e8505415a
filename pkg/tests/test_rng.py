"""Tests for deterministic substreams and Gaussian sampling."""
from __future__ import annotations

import numpy as np

from linrep.rng import standard_normal, substream


def test_same_substream_identical_draws() -> None:
    a = substream(123, 0, "tasks").random(32)
    b = substream(123, 0, "tasks").random(32)
    np.testing.assert_array_equal(a, b)


def test_distinct_tags_and_trials_decorrelate_streams() -> None:
    base = substream(123, 0, "tasks").random(64)
    other_tag = substream(123, 0, "env").random(64)
    other_trial = substream(123, 1, "tasks").random(64)
    other_seed = substream(124, 0, "tasks").random(64)
    assert not np.array_equal(base, other_tag)
    assert not np.array_equal(base, other_trial)
    assert not np.array_equal(base, other_seed)


def test_standard_normal_shapes_and_determinism() -> None:
    draws = standard_normal(substream(7, 0, "x"), (3, 5))
    assert draws.shape == (3, 5)
    again = standard_normal(substream(7, 0, "x"), (3, 5))
    np.testing.assert_array_equal(draws, again)
    # Odd element counts exercise the pair-splitting path.
    odd = standard_normal(substream(7, 0, "y"), 7)
    assert odd.shape == (7,)
    scalar_shape = standard_normal(substream(7, 0, "z"), ())
    assert scalar_shape.shape == ()


def test_standard_normal_moments_match_gaussian() -> None:
    m = 200_000
    draws = standard_normal(substream(99, 0, "moments"), m)
    assert np.all(np.isfinite(draws))
    assert abs(float(draws.mean())) < 5.0 / np.sqrt(m)
    assert abs(float(draws.var()) - 1.0) < 10.0 / np.sqrt(m)
    # Tail mass sanity: P(|Z| > 3) ~ 0.0027.
    tail = float(np.mean(np.abs(draws) > 3.0))
    assert 0.001 < tail < 0.005


def test_standard_normal_consumes_stream_sequentially() -> None:
    gen = substream(5, 0, "seq")
    first = standard_normal(gen, 4)
    second = standard_normal(gen, 4)
    assert not np.array_equal(first, second)

    gen2 = substream(5, 0, "seq")
    both = standard_normal(gen2, 4), standard_normal(gen2, 4)
    np.testing.assert_array_equal(first, both[0])
    np.testing.assert_array_equal(second, both[1])
