import numpy as np

from decent_opt import rng


def test_same_key_same_stream():
    a = rng.substream(7, rng.QUAD_DESIGN, 3).standard_normal(16)
    b = rng.substream(7, rng.QUAD_DESIGN, 3).standard_normal(16)
    assert np.array_equal(a, b)


def test_purpose_isolation():
    a = rng.substream(7, rng.QUAD_DESIGN, 3).standard_normal(16)
    b = rng.substream(7, rng.QUAD_CENTERS, 3).standard_normal(16)
    c = rng.substream(8, rng.QUAD_DESIGN, 3).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_agent_streams_match_sequential_blocks():
    streams = rng.agent_noise_streams(11, n=3)
    drawn = [[s.standard_normal(5) for s in streams] for _ in range(4)]
    for t in range(4):
        for agent in range(3):
            replayed = rng.noise_block(11, agent, t, size=5)
            assert np.array_equal(drawn[t][agent], replayed)


def test_noise_streams_do_not_depend_on_consumer():
    # Two independent consumers of the same seed see identical sequences.
    first = [s.standard_normal(8) for s in rng.agent_noise_streams(5, 4)]
    second = [s.standard_normal(8) for s in rng.agent_noise_streams(5, 4)]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
