"""Metrics, shadow sequences, per-step lemma monitors, and rate-bound evaluators.

The shadow sequence is the pseudo-deterministic trajectory driven by exact
gradients of the *real* iterates: it follows the same two-step recursion as
the optimizer but with the stochastic momentum replaced by its deterministic
counterpart. Splitting the consensus deviation into shadow drift plus noise is
what the convergence analysis does, and this module reproduces that split
numerically, in two independently-implemented representations that are checked
against each other.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .topology import MixingMatrix


def demean_rows(x: np.ndarray) -> np.ndarray:
    """Apply the consensus projector I - (1/n) ones ones^T without forming it."""
    return x - x.mean(axis=0, keepdims=True)


def consensus_sq(x: np.ndarray) -> float:
    """|| X - Xbar ||_F^2."""
    return float((demean_rows(x) ** 2).sum())


@dataclass(frozen=True)
class MetricRow:
    t: int
    consensus_dev: float
    grad_avg_sq: float
    grad_bar_sq: float
    subopt: float
    dist_sq: float
    m_bar_sq: float


METRIC_FIELDS = ("consensus_dev", "grad_avg_sq", "grad_bar_sq", "subopt", "dist_sq", "m_bar_sq")


def metrics(problem, state) -> MetricRow:
    """Per-iteration metrics of an optimizer state.

    ``m_bar_sq`` uses the momentum computed in the round that produced the
    current iterates, so the averaged update identity pairs the two.
    """
    x = state.x_curr
    x_bar = x.mean(axis=0)
    grad_rows = problem.gradient_matrix(x)
    grad_avg = problem.grad_f(x_bar)
    f_star = problem.f_star
    x_star = problem.x_star
    return MetricRow(
        t=state.t,
        consensus_dev=consensus_sq(x) / problem.n,
        grad_avg_sq=float(grad_avg @ grad_avg),
        grad_bar_sq=float(np.sum(grad_rows.mean(axis=0) ** 2)),
        subopt=(problem.f(x_bar) - f_star) if f_star is not None else float("nan"),
        dist_sq=float(np.sum((x_bar - x_star) ** 2)) if x_star is not None else float("nan"),
        m_bar_sq=float(np.sum(state.m_curr.mean(axis=0) ** 2)),
    )


@dataclass
class Trace:
    """Columnar per-iteration records for one run; row t describes X^(t)."""

    t: np.ndarray
    columns: dict[str, np.ndarray]
    monitors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    # CSV column order is part of the external contract.
    MONITOR_COLUMNS = ("monitor_lemma1_residual", "monitor_lemma2_residual", "shadow_gap")

    def __len__(self) -> int:
        return len(self.t)

    def __getattr__(self, name):
        cols = object.__getattribute__(self, "columns")
        if name in cols:
            return cols[name]
        mons = object.__getattribute__(self, "monitors")
        if name in mons:
            return mons[name]
        raise AttributeError(name)

    def header(self) -> list[str]:
        cols = ["t", *METRIC_FIELDS]
        cols += [c for c in self.MONITOR_COLUMNS if c in self.monitors]
        return cols

    def to_csv(self, path) -> None:
        names = self.header()
        series = {"t": self.t, **self.columns, **self.monitors}
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for k in range(len(self.t)):
                fh.write(",".join(_fmt(series[name][k]) for name in names) + "\n")

    @staticmethod
    def from_rows(rows: list[MetricRow], monitors=None, meta=None) -> "Trace":
        cols = {name: np.array([getattr(r, name) for r in rows]) for name in METRIC_FIELDS}
        return Trace(
            t=np.array([r.t for r in rows], dtype=int),
            columns=cols,
            monitors={k: np.asarray(v) for k, v in (monitors or {}).items()},
            meta=meta or {},
        )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def aux_z(x_bar_t: np.ndarray, x_bar_prev: np.ndarray, beta: float) -> np.ndarray:
    """Momentum-corrected average: z = x_bar/(1-b) - b * x_bar_prev/(1-b)."""
    return (x_bar_t - beta * x_bar_prev) / (1.0 - beta)


# ---------------------------------------------------------------------------
# Shadow sequence


@dataclass
class ShadowState:
    """Both representations of the shadow trajectory, advanced in lockstep.

    One-step form: (x_one, y) with the momentum m; two-step form keeps a
    two-iterate window (x_two_curr, x_two_prev). ``n_seq`` is the comparison
    sequence of gradients at the averaged iterates and ``r = m - n_seq``.
    """

    t: int
    x_one: np.ndarray
    y: np.ndarray
    m: np.ndarray
    x_two_curr: np.ndarray
    x_two_prev: np.ndarray
    n_seq: np.ndarray
    r: np.ndarray
    rep_gap: float  # Frobenius gap between the representations at time t


SHADOW_VARIANTS = ("nonconvex", "pl")


def shadow_init(x0_rows: np.ndarray, problem, beta: float, variant: str) -> ShadowState:
    if variant not in SHADOW_VARIANTS:
        raise ValueError(f"unknown shadow variant {variant!r}; use one of {SHADOW_VARIANTS}")
    x0_rows = np.array(x0_rows, dtype=float)
    x_bar0 = x0_rows.mean(axis=0)
    n0 = problem.gradient_matrix_at(x_bar0)
    return ShadowState(
        t=0,
        x_one=x0_rows.copy(),
        y=np.zeros_like(x0_rows),
        m=np.zeros_like(x0_rows),  # momentum before the first round
        x_two_curr=x0_rows.copy(),
        x_two_prev=x0_rows.copy(),
        n_seq=n0,
        r=np.zeros_like(x0_rows),
        rep_gap=0.0,
    )


def shadow_step(shadow: ShadowState, trajectory_x_t: np.ndarray, w: MixingMatrix,
                problem, beta: float, alpha: float, variant: str = "nonconvex") -> ShadowState:
    """Advance the shadow by one round, consuming the real iterates X^(t).

    The momentum feeds on exact gradients of the real trajectory in *both*
    representations; the one-step form additionally threads the running
    (I - W)^{1/2}-weighted residual y. The Frobenius discrepancy between the
    two X propagations is recorded (it should be pure roundoff).
    """
    if variant not in SHADOW_VARIANTS:
        raise ValueError(f"unknown shadow variant {variant!r}; use one of {SHADOW_VARIANTS}")
    s_half = w.sqrt_i_minus_w
    grad_real = problem.gradient_matrix(trajectory_x_t)
    m_prev = shadow.m
    m_new = beta * m_prev + (1.0 - beta) * grad_real

    grad_at_bar = problem.gradient_matrix_at(trajectory_x_t.mean(axis=0))
    if variant == "nonconvex":
        n_new = beta * shadow.n_seq + (1.0 - beta) * grad_at_bar if shadow.t > 0 else shadow.n_seq
    else:
        n_new = grad_at_bar

    x_two_next = w.w @ (2.0 * shadow.x_two_curr - shadow.x_two_prev
                        - alpha * m_new + alpha * m_prev)
    x_one_next = w.w @ (shadow.x_one - alpha * m_new) - s_half @ shadow.y
    y_next = shadow.y + s_half @ x_one_next

    return ShadowState(
        t=shadow.t + 1,
        x_one=x_one_next,
        y=y_next,
        m=m_new,
        x_two_curr=x_two_next,
        x_two_prev=shadow.x_two_curr,
        n_seq=n_new,
        r=m_new - n_new,
        rep_gap=float(np.linalg.norm(x_one_next - x_two_next)),
    )


# ---------------------------------------------------------------------------
# Deterministic lemma monitors (valid pathwise only when sigma = 0)


class MonitorRefusalError(ValueError):
    """Raised when a per-path monitor is requested for a stochastic run."""


class LemmaMonitors:
    """Per-step residuals of the two descent inequalities, sigma = 0 only.

    The inequalities are statements about expectations; a single noisy path
    need not satisfy them, so construction refuses sigma > 0 and points the
    caller at the Monte Carlo noise-bound estimator instead.
    """

    def __init__(self, problem, w: MixingMatrix, alpha: float, beta: float,
                 check_pl: bool = True):
        consts = problem.constants()
        if consts.sigma_sq > 0.0:
            raise MonitorRefusalError(
                "lemma monitors are only valid pathwise at sigma = 0; "
                "use lemma3_estimate for Monte Carlo checks of the noise bound")
        self.problem = problem
        self.alpha = alpha
        self.beta = beta
        self.length = consts.L
        self.mu = consts.mu
        self.f_star = consts.f_star
        self.check_pl = check_pl and consts.mu > 0.0 and consts.f_star is not None
        self.n = problem.n
        self.eq6_residuals: list[float] = []
        self.eq7_residuals: list[float] = []
        self.eq6_scales: list[float] = []
        self.eq7_scales: list[float] = []
        self.m_bar_sq_sum = 0.0
        self.grad_bar_sq_sum = 0.0
        self._pending = None
        self._x_bar_prev = None

    def before_step(self, t: int, x_rows: np.ndarray, m_bar_prev: np.ndarray) -> None:
        a, b, L = self.alpha, self.beta, self.length
        x_bar = x_rows.mean(axis=0)
        if t == 0:
            z_t = x_bar
        else:
            z_t = aux_z(x_bar, self._x_bar_prev, b)
        f_z = self.problem.f(z_t)
        grad_rows = self.problem.gradient_matrix(x_rows)
        grad_bar = grad_rows.mean(axis=0)
        grad_bar_sq = float(grad_bar @ grad_bar)
        grad_avg = self.problem.grad_f(x_bar)
        grad_avg_sq = float(grad_avg @ grad_avg)
        consensus = consensus_sq(x_rows)
        m_prev_sq = float(m_bar_prev @ m_bar_prev)

        rhs6 = (f_z
                + a * a * L * b / (2.0 * (1.0 - b)) * m_prev_sq
                + a * L * L / (2.0 * self.n) * consensus
                - 0.5 * a * (1.0 - b * a * L / (1.0 - b) - a * L) * grad_bar_sq
                - 0.5 * a * grad_avg_sq)
        rhs7 = None
        if self.check_pl:
            f_tilde_z = f_z - self.f_star
            rhs7 = ((1.0 - a * self.mu) * f_tilde_z
                    - 0.5 * a * (1.0 - a * L) * grad_bar_sq
                    + a * L * L / (2.0 * self.n) * consensus
                    + a ** 3 * L * L * b * b / (2.0 * (1.0 - b) ** 2) * m_prev_sq)

        self.grad_bar_sq_sum += grad_bar_sq
        self._pending = (rhs6, rhs7, x_bar)

    def after_step(self, x_bar_next: np.ndarray, m_bar_new: np.ndarray) -> None:
        rhs6, rhs7, x_bar = self._pending
        z_next = aux_z(x_bar_next, x_bar, self.beta)
        f_z_next = self.problem.f(z_next)
        self.eq6_residuals.append(rhs6 - f_z_next)
        self.eq6_scales.append(max(1.0, abs(rhs6), abs(f_z_next)))
        if rhs7 is not None:
            lhs7 = f_z_next - self.f_star
            self.eq7_residuals.append(rhs7 - lhs7)
            self.eq7_scales.append(max(1.0, abs(rhs7), abs(lhs7)))
        self._x_bar_prev = x_bar
        self._pending = None
        # Momentum-sum bound accumulates || m_bar^(t) ||^2 over rounds 0..T-1.
        self.m_bar_sq_sum += float(m_bar_new @ m_bar_new)

    @property
    def lemma5_lhs(self) -> float:
        return self.m_bar_sq_sum

    @property
    def lemma5_rhs(self) -> float:
        return self.grad_bar_sq_sum


def lemma_monitors(spec, problem, w: MixingMatrix, T: int, x0: np.ndarray,
                   seed: int = 0) -> dict:
    """Run the momentum exact-diffusion method at sigma = 0 and evaluate both
    descent inequalities plus the summed momentum bound along the path.

    Returns residual series (nonnegative within roundoff when the step size is
    admissible) and the two sides of the momentum-sum inequality.
    """
    from . import algorithms  # deferred: algorithms imports this module

    monitors = algorithms.MonitorSet(lemma1=True, lemma2=True)
    trace = algorithms.run(spec, problem, w, T=T, x0=x0, seed=seed, monitors=monitors)
    out = {
        "eq6_residuals": trace.monitors["monitor_lemma1_residual"],
        "eq6_scales": trace.meta["lemma_eq6_scales"],
        "lemma5_lhs": trace.meta["lemma5_lhs"],
        "lemma5_rhs": trace.meta["lemma5_rhs"],
    }
    if "monitor_lemma2_residual" in trace.monitors:
        out["eq7_residuals"] = trace.monitors["monitor_lemma2_residual"]
        out["eq7_scales"] = trace.meta["lemma_eq7_scales"]
    return out


def lemma3_estimate(spec, problem, w: MixingMatrix, T: int, reps: int,
                    seed_base: int = 0) -> dict:
    """Monte Carlo estimate of the shadow-deviation noise term vs. its bound.

    Runs ``reps`` paired (real, shadow) trajectories and averages
    || P_I (X - Xtilde) ||_F^2 per iteration. The closed-form ceiling
    13 a^2 lam^2 n sigma^2 / (1 - lam) is uniform in t and conservative.
    """
    from . import algorithms

    sigma_sq = problem.constants().sigma_sq
    lam = w.profile.lam
    bound = 13.0 * spec.alpha ** 2 * lam ** 2 * problem.n * sigma_sq / (1.0 - lam)
    trivial = sigma_sq == 0.0
    if not trivial and reps < 30:
        raise ValueError(f"need at least 30 repetitions for the noise estimate, got {reps}")

    acc = np.zeros(T + 1)
    for r in range(reps):
        trace = algorithms.run(spec, problem, w, T=T, x0=None, seed=seed_base + r,
                               monitors=algorithms.MonitorSet(shadow=True))
        gaps = trace.meta["shadow_gap_full"]  # includes t = 0
        acc += gaps
    empirical = acc / reps
    return {"empirical": empirical, "bound": bound, "trivial": trivial}


def zeta0_sq(w: MixingMatrix, problem, x0_rows: np.ndarray) -> float:
    """Initial-point heterogeneity (1/n) || W P_I grad f(X0) ||_F^2.

    Implemented as the squared Frobenius norm: the rate bounds multiply this
    by alpha^2 L^2, which only makes dimensional sense for a squared quantity
    (the source formula's typography omits the exponent).
    """
    g0 = problem.gradient_matrix(np.asarray(x0_rows, dtype=float))
    return float(((w.w @ demean_rows(g0)) ** 2).sum()) / problem.n


# ---------------------------------------------------------------------------
# Closed-form rate bounds


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    beta: float
    lam: float
    L: float
    mu: float
    sigma_sq: float
    zeta0_sq: float
    n: int
    T: int
    f0_gap: float

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not (0.0 <= self.lam < 1.0):
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")
        for name in ("alpha", "L"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("mu", "sigma_sq", "zeta0_sq", "f0_gap"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


def max_step_size(beta: float, lam: float, L: float, regime: str) -> float:
    """Admissible step-size ceiling for the momentum exact-diffusion method.

    The linear-rate condition is stated without L in the theorem but the proof
    applies it to alpha * L, so the 'pl' regime divides by L as well.
    """
    if regime == "nonconvex":
        return min((1.0 - math.sqrt(lam)) / (4.0 * L), (1.0 - beta) / (4.0 * L))
    if regime == "pl":
        return min((1.0 - math.sqrt(lam)) / 10.0, (1.0 - beta) / 5.0) / L
    raise ValueError(f"unknown regime {regime!r}; use 'nonconvex' or 'pl'")


def c0_constant(beta: float, lam: float) -> float:
    s = math.sqrt(lam)
    return (24.0 * (1.0 - beta) ** 2 / (1.0 + s)
            + 12.0 * beta ** 2 * lam * (1.0 - s)
            + 2.0 * beta ** 3 * lam / (1.0 - beta))


def theorem1_bound(inputs: BoundInputs) -> float:
    """Ceiling on the averaged gradient functional in the non-convex regime."""
    a, b, lam = inputs.alpha, inputs.beta, inputs.lam
    if a > max_step_size(b, lam, inputs.L, "nonconvex") * (1.0 + 1e-12):
        warnings.warn(
            f"step size {a:.3g} exceeds the non-convex admissible ceiling "
            f"{max_step_size(b, lam, inputs.L, 'nonconvex'):.3g}; the bound "
            "is not guaranteed", stacklevel=2)
    s = math.sqrt(lam)
    return (2.0 * inputs.f0_gap / (a * inputs.T)
            + 2.0 * a * inputs.L * inputs.sigma_sq / inputs.n
            + 52.0 * a ** 2 * inputs.L ** 2 * lam ** 2 * inputs.sigma_sq / (1.0 - lam)
            + 8.0 * c0_constant(b, lam) * a ** 2 * inputs.L ** 2 * inputs.zeta0_sq
            / ((1.0 - s) ** 2 * inputs.T))


def d1_constant(beta: float, lam: float) -> float:
    s = math.sqrt(lam)
    return (50.0 * lam * beta ** 2 / (3.0 * (1.0 - beta))
            + 320.0 * (1.0 - beta) ** 2 / (3.0 * (1.0 + s))
            + (160.0 / 3.0) * lam * beta ** 2 * (1.0 - s))


def d2_constant(beta: float, lam: float) -> float:
    return (100.0 / 3.0) * (5.0 * lam * beta ** 2 / (3.0 * (1.0 - beta))
                            + 4.0 * (1.0 - beta) ** 2
                            + 2.0 * lam * beta ** 2 * (1.0 - lam))


def theorem2_rhos(inputs: BoundInputs) -> tuple[float, float]:
    s = math.sqrt(inputs.lam)
    rho1 = 1.0 - inputs.alpha * inputs.mu
    rho2 = 1.0 - min((1.0 - s) / 5.0, 2.0 * (1.0 - inputs.beta) / 5.0)
    return rho1, rho2


def theorem2_floor(inputs: BoundInputs) -> float:
    """Asymptotic neighborhood of the linear-rate bound; heterogeneity-free."""
    if inputs.mu <= 0.0:
        raise ValueError("the linear-rate bound requires a positive PL constant")
    a, lam = inputs.alpha, inputs.lam
    return (6.0 * a * inputs.L * inputs.sigma_sq / (inputs.n * inputs.mu)
            + 169.0 * a ** 2 * inputs.L ** 2 * lam ** 2 * inputs.sigma_sq
            / (inputs.mu * (1.0 - lam)))


def theorem2_bound(inputs: BoundInputs, t: int) -> float:
    """Ceiling on the averaged suboptimality at iteration t, PL regime."""
    if inputs.mu <= 0.0:
        raise ValueError("the linear-rate bound requires a positive PL constant")
    a, b, lam = inputs.alpha, inputs.beta, inputs.lam
    ceiling = max_step_size(b, lam, inputs.L, "pl")
    if a > ceiling * (1.0 + 1e-12):
        unscaled = min((1.0 - math.sqrt(lam)) / 10.0, (1.0 - b) / 5.0)
        warnings.warn(
            f"step size {a:.3g} exceeds the linear-rate ceiling {ceiling:.3g} "
            f"(alpha*L reading; the raw reading would allow {unscaled:.3g}); "
            "the bound is not guaranteed", stacklevel=2)
    s = math.sqrt(lam)
    rho1, rho2 = theorem2_rhos(inputs)
    transient1 = (9.0 * inputs.f0_gap
                  + d1_constant(b, lam) * a ** 3 * inputs.L ** 2 * inputs.zeta0_sq
                  / (1.0 - s) ** 2) * rho1 ** t
    transient2 = (d2_constant(b, lam) * a ** 2 * inputs.L * inputs.zeta0_sq
                  / (1.0 - lam)) * rho2 ** t
    return transient1 + transient2 + theorem2_floor(inputs)


@dataclass(frozen=True)
class RateSummary:
    slope: float
    floor: float
    r_squared: float
    clipped: bool


def empirical_rate(subopt: np.ndarray, window: int | None = None) -> RateSummary:
    """Least-squares slope of log-suboptimality over the leading window, plus
    the mean of the trailing window as the noise floor."""
    subopt = np.asarray(subopt, dtype=float)
    if window is None:
        window = max(50, len(subopt) // 10)
    if len(subopt) < 2 * window:
        raise ValueError(f"need at least {2 * window} entries for window={window}, "
                         f"got {len(subopt)}")
    head = subopt[:window]
    clipped = bool((head <= 0.0).any())
    logs = np.log(np.clip(head, 1e-300, None))
    ts = np.arange(window, dtype=float)
    slope, intercept = np.polyfit(ts, logs, 1)
    fitted = slope * ts + intercept
    ss_res = float(((logs - fitted) ** 2).sum())
    ss_tot = float(((logs - logs.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateSummary(
        slope=float(slope),
        floor=float(subopt[-window:].mean()),
        r_squared=r_squared,
        clipped=clipped,
    )
