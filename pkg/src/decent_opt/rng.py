"""Keyed random-number substreams for reproducible parallel simulation.

Every random draw in this package comes from a stream keyed by
``(seed, purpose, *indices)``. Changing one generation knob therefore never
reshuffles unrelated draws, and independently executed workers reproduce the
exact sequences of a serial run.

Gradient-noise streams deserve a note: the per-round noise for agent ``i`` at
iteration ``t`` is block ``t`` of the Philox stream keyed by
``(seed, GRAD_NOISE, i)``, consumed one fixed-size block per round. That is the
same mathematical object as keying a fresh stream by ``(seed, agent, t)`` every
round, but costs O(1) per draw instead of a generator construction; the stream
never depends on which algorithm consumes it.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Fixed small integers so keys are stable across releases.
QUAD_DESIGN = 1
QUAD_CENTERS = 2
LOGISTIC_CENTERS = 3
LOGISTIC_COVARIATES = 4
LOGISTIC_LABELS = 5
WELSCH_CENTERS = 6
WELSCH_COVARIATES = 7
GRAD_NOISE = 8
INIT_POINT = 9


def substream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    """Return an independent generator keyed by (seed, purpose, *key)."""
    ss = np.random.SeedSequence((int(seed), int(purpose)) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def agent_noise_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Per-agent gradient-noise streams, consumed one block per round.

    All algorithms draw exactly one noise block per (agent, round), so two
    algorithms run from the same seed see identical noise realizations.
    """
    return [substream(seed, GRAD_NOISE, i) for i in range(n)]


def noise_block(seed: int, agent: int, t: int, size: int) -> np.ndarray:
    """Replay the noise block of (agent, t) without running an algorithm.

    Equivalent to the ``size`` values the sequential stream of ``agent`` yields
    at round ``t``, assuming every earlier round consumed ``size`` values.
    O(t); meant for spot checks, not inner loops.
    """
    gen = substream(seed, GRAD_NOISE, agent)
    if t > 0:
        gen.standard_normal((t, size))  # discard earlier rounds' blocks
    return gen.standard_normal(size)
