"""Synchronous-round decentralized optimizers sharing one stepping interface.

All methods consume identical per-(agent, round) gradient-noise streams, so
runs of different methods from one seed see the same noise realizations and
their traces are directly comparable. Implemented kinds:

- ``dsgd``     diffusion: combine after a local stochastic-gradient step;
- ``dmsgd``    diffusion with momentum on the local direction;
- ``ed2``      exact diffusion / bias-corrected two-step recursion;
- ``edm``      exact diffusion with momentum (adapt, correct, combine);
- ``dsgt``     gradient tracking (standard adapt-then-track form);
- ``dsgt_hb``  gradient tracking with momentum on the tracked direction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis, rng as rngmod
from .topology import MixingMatrix

KINDS = ("dsgd", "dmsgd", "ed2", "edm", "dsgt", "dsgt_hb")

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """A parameter row left the representable range; expected for bad steps."""

    def __init__(self, t: int, agent: int, partial_trace=None):
        self.t = t
        self.agent = agent
        self.partial_trace = partial_trace
        super().__init__(f"divergence at iteration {t}, agent {agent}")


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str
    alpha: float
    beta: float = 0.0
    lr_drop_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown algorithm {self.kind!r}; supported: {', '.join(KINDS)}")
        if self.alpha <= 0.0:
            raise ValueError(f"step size must be positive, got {self.alpha}")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.beta}")

    def alpha_at(self, t: int) -> float:
        """Step size in force at round t (each listed drop multiplies by 0.1)."""
        a = self.alpha
        for d in self.lr_drop_steps:
            if t >= d:
                a *= 0.1
        return a


@dataclass
class OptimizerState:
    """Two-iterate window plus the last round's descent direction.

    ``m_curr`` holds whatever the last completed round descended along: the
    momentum for momentum methods, the raw stochastic gradient for dsgd/ed2,
    the tracked direction for dsgt. ``m_prev`` is the one before it; the pair
    is what the two-step recursions difference. ``aux`` carries kind-specific
    extras (gradient-tracking state, previous raw gradients).
    """

    t: int
    x_curr: np.ndarray
    x_prev: np.ndarray
    m_curr: np.ndarray
    m_prev: np.ndarray
    aux: dict = field(default_factory=dict)
    alpha_last: float = 0.0


@dataclass(frozen=True)
class MonitorSet:
    lemma1: bool = False
    lemma2: bool = False
    shadow: bool = False
    shadow_variant: str = "nonconvex"
    avg_identity: bool = False

    @property
    def any_lemma(self) -> bool:
        return self.lemma1 or self.lemma2


def init(spec: AlgorithmSpec, problem, x0: np.ndarray | None) -> OptimizerState:
    """All agents start at the same point; momentum and trackers are empty."""
    if x0 is None:
        x0 = np.zeros(problem.d)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.d,):
        raise ValueError(f"x0 must have shape ({problem.d},), got {x0.shape}")
    rows = np.tile(x0, (problem.n, 1))
    zeros = np.zeros_like(rows)
    return OptimizerState(
        t=0,
        x_curr=rows.copy(),
        x_prev=rows.copy(),
        m_curr=zeros.copy(),
        m_prev=zeros.copy(),
        aux={},
        alpha_last=spec.alpha_at(0),
    )


def _two_step_combine(wm, x, x_prev, a_new, d_new, a_prev, d_prev):
    return wm @ (2.0 * x - x_prev - a_new * d_new + a_prev * d_prev)


def step(state: OptimizerState, spec: AlgorithmSpec, w: MixingMatrix, problem,
         streams) -> OptimizerState:
    """Advance one synchronous round: draw gradients, update directions,
    combine through the mixing matrix. Raises DivergenceError on blow-up."""
    t = state.t
    a = spec.alpha_at(t)
    x = state.x_curr
    wm = w.w
    g = problem.noisy_gradient_matrix(x, streams)
    aux = dict(state.aux)

    if spec.kind == "dsgd":
        direction = g
        x_next = wm @ (x - a * direction)
    elif spec.kind == "dmsgd":
        direction = spec.beta * state.m_curr + (1.0 - spec.beta) * g
        x_next = wm @ (x - a * direction)
    elif spec.kind == "ed2":
        # The previous direction is the previous raw gradient (zeros at t=0),
        # exactly the window the momentum variant differences.
        direction = g
        x_next = _two_step_combine(wm, x, state.x_prev, a, g, state.alpha_last,
                                   state.m_curr)
    elif spec.kind == "edm":
        direction = spec.beta * state.m_curr + (1.0 - spec.beta) * g
        x_next = _two_step_combine(wm, x, state.x_prev, a, direction,
                                   state.alpha_last, state.m_curr)
    elif spec.kind in ("dsgt", "dsgt_hb"):
        g_prev = aux.get("g_prev")
        if g_prev is None:
            y = g  # tracker starts at the first stochastic gradients
        else:
            y = wm @ aux["y"] + g - g_prev
        aux["y"] = y
        aux["g_prev"] = g
        if spec.kind == "dsgt":
            direction = y
        else:
            direction = spec.beta * state.m_curr + (1.0 - spec.beta) * y
        x_next = wm @ (x - a * direction)
    else:  # pragma: no cover - guarded by AlgorithmSpec
        raise ValueError(spec.kind)

    bad = ~np.isfinite(x_next).all(axis=1)
    if bad.any():
        raise DivergenceError(t=t, agent=int(np.argmax(bad)))
    if float(np.linalg.norm(x_next)) > DIVERGENCE_NORM:
        agent = int(np.argmax((x_next ** 2).sum(axis=1)))
        raise DivergenceError(t=t, agent=agent)

    return OptimizerState(
        t=t + 1,
        x_curr=x_next,
        x_prev=x,
        m_curr=direction,
        m_prev=state.m_curr,
        aux=aux,
        alpha_last=a,
    )


def run(spec: AlgorithmSpec, problem, w: MixingMatrix, T: int,
        x0: np.ndarray | None = None, seed: int = 0,
        monitors: MonitorSet | None = None) -> analysis.Trace:
    """Execute T rounds and collect per-iteration metrics.

    Row t of the trace describes the iterates after t completed rounds
    (t = 1..T). Deterministic for fixed arguments regardless of how callers
    schedule runs. On divergence the partial trace rides on the exception.
    """
    if T < 1:
        raise ValueError(f"need T >= 1, got T={T}")
    monitors = monitors or MonitorSet()
    if (monitors.shadow or monitors.any_lemma) and spec.lr_drop_steps:
        raise ValueError("monitors assume a constant step size; disable lr drops")
    if w.n != problem.n:
        raise ValueError(f"matrix is {w.n}-agent but problem has {problem.n}")

    state = init(spec, problem, x0)
    streams = rngmod.agent_noise_streams(seed, problem.n)

    lemma = None
    if monitors.any_lemma:
        if spec.kind != "edm":
            raise ValueError("lemma monitors apply to the edm recursion")
        lemma = analysis.LemmaMonitors(problem, w, alpha=spec.alpha, beta=spec.beta,
                                       check_pl=monitors.lemma2)
    shadow = None
    shadow_gaps = None
    rep_gap_max = 0.0
    shadow_rel_max = 0.0
    if monitors.shadow:
        if spec.kind != "edm":
            raise ValueError("the shadow sequence is defined for the edm recursion")
        shadow = analysis.shadow_init(state.x_curr, problem, spec.beta,
                                      monitors.shadow_variant)
        shadow_gaps = [0.0]  # t = 0: both trajectories start together

    rows = []
    identity_res = [] if monitors.avg_identity else None
    row_gaps = [] if monitors.shadow else None
    wall_start = time.perf_counter()
    try:
        for t in range(T):
            if lemma is not None:
                lemma.before_step(t, state.x_curr, state.m_curr.mean(axis=0))
            if shadow is not None:
                shadow = analysis.shadow_step(shadow, state.x_curr, w, problem,
                                              spec.beta, spec.alpha,
                                              monitors.shadow_variant)
                rep_gap_max = max(rep_gap_max, shadow.rep_gap)
            x_bar_before = state.x_curr.mean(axis=0)
            state = step(state, spec, w, problem, streams)
            if lemma is not None:
                lemma.after_step(state.x_curr.mean(axis=0), state.m_curr.mean(axis=0))
            if identity_res is not None:
                predicted = x_bar_before - state.alpha_last * state.m_curr.mean(axis=0)
                res = float(np.linalg.norm(state.x_curr.mean(axis=0) - predicted))
                identity_res.append(res / (1.0 + float(np.linalg.norm(x_bar_before))))
            if shadow is not None:
                gap = analysis.consensus_sq(state.x_curr - shadow.x_one)
                shadow_gaps.append(gap)
                row_gaps.append(gap)
                xnorm = float(np.linalg.norm(state.x_curr))
                rel = float(np.linalg.norm(shadow.x_one - state.x_curr)) / (1.0 + xnorm)
                shadow_rel_max = max(shadow_rel_max, rel)
            rows.append(analysis.metrics(problem, state))
    except DivergenceError as err:
        err.partial_trace = _build_trace(spec, problem, rows, monitors, lemma,
                                         identity_res, row_gaps, shadow_gaps,
                                         rep_gap_max, shadow_rel_max, wall_start)
        raise

    return _build_trace(spec, problem, rows, monitors, lemma, identity_res,
                        row_gaps, shadow_gaps, rep_gap_max, shadow_rel_max,
                        wall_start)


def _build_trace(spec, problem, rows, monitors, lemma, identity_res, row_gaps,
                 shadow_gaps, rep_gap_max, shadow_rel_max, wall_start):
    mon = {}
    if lemma is not None:
        mon["monitor_lemma1_residual"] = np.array(lemma.eq6_residuals)
        if lemma.eq7_residuals:
            mon["monitor_lemma2_residual"] = np.array(lemma.eq7_residuals)
    if identity_res is not None:
        mon["avg_identity_residual"] = np.array(identity_res)
    if row_gaps is not None:
        mon["shadow_gap"] = np.array(row_gaps)
    meta = {
        "kind": spec.kind,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "gradient_calls_per_step": problem.n,
        "gradient_calls": problem.n * len(rows),
        "wall_time_s": time.perf_counter() - wall_start,
        "dsgt_tracker_init": "first_stochastic_gradients",
    }
    if lemma is not None:
        meta["lemma5_lhs"] = lemma.lemma5_lhs
        meta["lemma5_rhs"] = lemma.lemma5_rhs
        meta["lemma_eq6_scales"] = np.array(lemma.eq6_scales)
        if lemma.eq7_scales:
            meta["lemma_eq7_scales"] = np.array(lemma.eq7_scales)
    if shadow_gaps is not None:
        meta["shadow_gap_full"] = np.array(shadow_gaps)
        meta["shadow_rep_gap_max"] = rep_gap_max
        meta["shadow_vs_real_rel_max"] = shadow_rel_max
        meta["shadow_variant"] = monitors.shadow_variant
    return analysis.Trace.from_rows(rows, monitors=mon, meta=meta)


def max_step_size(beta: float, lam: float, L: float, regime: str) -> float:
    """Admissible step-size ceiling; see analysis.max_step_size."""
    return analysis.max_step_size(beta, lam, L, regime)
