"""Synthetic per-agent objective families with controllable heterogeneity.

Three families share one oracle surface:

- quadratic least squares with per-agent design matrices and a heterogeneity
  divisor ``c`` (the smaller ``c``, the farther apart the local minimizers);
- l2-regularized logistic regression with additive gradient noise;
- Welsch-loss (bounded, non-convex) regression, a desk-scale stand-in for the
  non-convex regime.

Each exposes exact per-agent gradients, unbiased stochastic gradients driven
by caller-owned RNG streams, and ground-truth constants (L, mu, sigma^2,
zeta^2, f*) where they are computable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as rngmod


class ReferenceSolveError(RuntimeError):
    """Reference minimization failed to reach tolerance."""

    def __init__(self, achieved_grad_norm: float, tol: float):
        self.achieved_grad_norm = achieved_grad_norm
        self.tol = tol
        super().__init__(
            f"reference solve stalled at gradient norm {achieved_grad_norm:.3e} "
            f"(target {tol:.1e})"
        )


@dataclass(frozen=True)
class ProblemConstants:
    """Ground-truth constants of one problem instance.

    ``sigma_sq`` is the recorded per-agent gradient-noise variance bound (an
    upper bound, not an equality). ``zeta_sq`` and ``f_star`` are None when the
    global minimizer is not computable.
    """

    L: float
    mu: float
    sigma_sq: float
    zeta_sq: float | None
    f_star: float | None


def _expit(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class QuadraticProblem:
    """Per-agent least squares f_i(x) = (1/2p) E || y_i - A_i x ||^2 with
    fresh responses y_i = A_i x_loc_i + eps, eps ~ N(0, sigma^2 I_p).

    The loss averages over the p samples, like the logistic family does over
    m; without that normalization the reference step size of the headline
    configuration (alpha = 0.05 on the 32-agent ring) sits far above the
    stability limit of every method here. The additive constant from the
    response noise is dropped: every consumer works with f-differences.
    """

    kind = "quadratic"

    def __init__(self, a: np.ndarray, x_local_star: np.ndarray, sigma: float,
                 hetero_c: float, seed: int | None = None, regenerations: int = 0):
        a = np.asarray(a, dtype=float)
        if a.ndim != 3:
            raise ValueError("design tensor must have shape (n, p, d)")
        self.a = a
        self.n, self.p, self.d = a.shape
        self.x_local_star = np.asarray(x_local_star, dtype=float).reshape(self.n, self.d)
        self.sigma = float(sigma)
        self.hetero_c = float(hetero_c)
        self.seed = seed
        self.regenerations = regenerations
        self.hessians = np.einsum("npi,npj->nij", a, a) / self.p
        self.hessian_avg = self.hessians.mean(axis=0)
        # x* solves (sum_i H_i) x = sum_i H_i x_loc_i; stationarity of f.
        rhs = np.einsum("nij,nj->i", self.hessians, self.x_local_star)
        self.x_star = np.linalg.solve(self.hessians.sum(axis=0), rhs)
        self._f_star = self.f(self.x_star)

    @property
    def noise_dim(self) -> int:
        return self.p

    def full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        x = self._check_x(x)
        return self.hessians[agent] @ (x - self.x_local_star[agent])

    def stochastic_gradient(self, agent: int, x: np.ndarray,
                            stream: np.random.Generator) -> np.ndarray:
        x = self._check_x(x)
        eps = self.sigma * stream.standard_normal(self.p)
        return (self.hessians[agent] @ (x - self.x_local_star[agent])
                - self.a[agent].T @ eps / self.p)

    def gradient_matrix(self, x_rows: np.ndarray) -> np.ndarray:
        """Rows grad f_i(x_i) for an n-by-d matrix of per-agent iterates."""
        return np.einsum("nij,nj->ni", self.hessians, x_rows - self.x_local_star)

    def gradient_matrix_at(self, x: np.ndarray) -> np.ndarray:
        """Rows grad f_i(x) for one common point x."""
        return np.einsum("nij,j->ni", self.hessians, x) - np.einsum(
            "nij,nj->ni", self.hessians, self.x_local_star)

    def noisy_gradient_matrix(self, x_rows: np.ndarray,
                              streams: Sequence[np.random.Generator]) -> np.ndarray:
        g = self.gradient_matrix(x_rows)
        for i in range(self.n):
            eps = self.sigma * streams[i].standard_normal(self.p)
            g[i] -= self.a[i].T @ eps / self.p
        return g

    def f(self, x: np.ndarray) -> float:
        diffs = x[None, :] - self.x_local_star
        return 0.5 * float(np.einsum("ni,nij,nj->", diffs, self.hessians, diffs)) / self.n

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        return self.gradient_matrix_at(np.asarray(x, dtype=float)).mean(axis=0)

    def heterogeneity(self) -> float:
        """zeta^2 = (1/n) sum_i || grad f_i(x*) - grad f(x*) ||^2, closed form."""
        rows = self.gradient_matrix_at(self.x_star)
        rows = rows - rows.mean(axis=0)
        return float((rows ** 2).sum()) / self.n

    def constants(self) -> ProblemConstants:
        per_agent_l = [float(np.linalg.eigvalsh(h)[-1]) for h in self.hessians]
        # E || A^T eps / p ||^2 = sigma^2 tr(A^T A) / p^2 = sigma^2 tr(H) / p.
        sigma_sq = (self.sigma ** 2) * max(float(np.trace(h)) for h in self.hessians) / self.p
        return ProblemConstants(
            L=max(per_agent_l),
            mu=float(np.linalg.eigvalsh(self.hessian_avg)[0]),
            sigma_sq=sigma_sq,
            zeta_sq=self.heterogeneity(),
            f_star=self._f_star,
        )

    @property
    def f_star(self) -> float:
        return self._f_star

    def zeta_source(self) -> str:
        return "closed_form"

    def describe(self) -> dict:
        return {
            "kind": self.kind, "n": self.n, "d": self.d, "p": self.p,
            "c": self.hetero_c, "sigma": self.sigma, "seed": self.seed,
            "regenerations": self.regenerations, "zeta_source": self.zeta_source(),
        }

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected parameter of shape ({self.d},), got {x.shape}")
        return x


def gen_quadratic(n: int, d: int, p: int, c: float, sigma: float, seed: int) -> QuadraticProblem:
    """Draw the linear-regression family: A_i, u_i standard normal; local
    minimizers x_loc_i = x* + (u_i - x*)/c shrink toward x* as c grows.

    A numerically singular pooled Hessian (condition number > 1e12) triggers a
    regeneration from the next substream; the count is recorded on the problem.
    """
    if p < d:
        raise ValueError(f"need p >= d for full-rank local Hessians, got p={p} < d={d}")
    if c <= 0:
        raise ValueError(f"heterogeneity divisor must be positive, got c={c}")
    for attempt in range(16):
        a = np.stack([
            rngmod.substream(seed, rngmod.QUAD_DESIGN, i, attempt).standard_normal((p, d))
            for i in range(n)
        ])
        u = np.stack([
            rngmod.substream(seed, rngmod.QUAD_CENTERS, i, attempt).standard_normal(d)
            for i in range(n)
        ])
        hessians = np.einsum("npi,npj->nij", a, a)
        pooled = hessians.sum(axis=0)
        if np.linalg.cond(pooled) <= 1e12:
            x_star = np.linalg.solve(pooled, np.einsum("nij,nj->i", hessians, u))
            x_local = x_star[None, :] + (u - x_star[None, :]) / c
            return QuadraticProblem(a, x_local, sigma=sigma, hetero_c=c,
                                    seed=seed, regenerations=attempt)
    raise RuntimeError("could not draw a well-conditioned pooled Hessian in 16 attempts")


class LogisticProblem:
    """l2-regularized logistic regression with additive gradient noise.

    Full-batch gradients plus N(0, sigma_s^2 I_d) noise stand in for sampling
    randomness, so the recorded variance bound is exact: d * sigma_s^2.
    """

    kind = "logistic"

    def __init__(self, u: np.ndarray, v: np.ndarray, mu_reg: float, sigma_s: float,
                 sigma_h: float = float("nan"), seed: int | None = None):
        u = np.asarray(u, dtype=float)
        if u.ndim != 3:
            raise ValueError("covariate tensor must have shape (n, m, d)")
        v = np.asarray(v, dtype=float)
        if not np.isin(v, (-1.0, 1.0)).all():
            raise ValueError("labels must lie in {-1, +1}")
        if mu_reg <= 0:
            raise ValueError("mu_reg must be positive")
        self.u = u
        self.v = v.reshape(u.shape[0], u.shape[1])
        self.n, self.m, self.d = u.shape
        self.mu_reg = float(mu_reg)
        self.sigma_s = float(sigma_s)
        self.sigma_h = float(sigma_h)
        self.seed = seed
        self._reference: tuple[np.ndarray, float] | None = None

    @property
    def noise_dim(self) -> int:
        return self.d

    def full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        x = self._check_x(x)
        margins = self.v[agent] * (self.u[agent] @ x)
        weights = self.v[agent] * _expit(-margins)
        return -(self.u[agent].T @ weights) / self.m + self.mu_reg * x

    def stochastic_gradient(self, agent: int, x: np.ndarray,
                            stream: np.random.Generator) -> np.ndarray:
        return self.full_gradient(agent, x) + self.sigma_s * stream.standard_normal(self.d)

    def gradient_matrix(self, x_rows: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(i, x_rows[i]) for i in range(self.n)])

    def gradient_matrix_at(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(i, x) for i in range(self.n)])

    def noisy_gradient_matrix(self, x_rows: np.ndarray,
                              streams: Sequence[np.random.Generator]) -> np.ndarray:
        g = self.gradient_matrix(x_rows)
        for i in range(self.n):
            g[i] += self.sigma_s * streams[i].standard_normal(self.d)
        return g

    def local_f(self, agent: int, x: np.ndarray) -> float:
        margins = self.v[agent] * (self.u[agent] @ x)
        data = float(np.logaddexp(0.0, -margins).mean())
        return data + 0.5 * self.mu_reg * float(x @ x)

    def f(self, x: np.ndarray) -> float:
        x = self._check_x(x)
        return sum(self.local_f(i, x) for i in range(self.n)) / self.n

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        return self.gradient_matrix_at(np.asarray(x, dtype=float)).mean(axis=0)

    @property
    def x_star(self) -> np.ndarray:
        return self._solve_reference()[0]

    @property
    def f_star(self) -> float:
        return self._solve_reference()[1]

    def heterogeneity(self) -> float:
        rows = self.gradient_matrix_at(self.x_star)
        rows = rows - rows.mean(axis=0)
        return float((rows ** 2).sum()) / self.n

    def constants(self) -> ProblemConstants:
        op_sq = max(float(np.linalg.norm(self.u[i], ord=2)) ** 2 for i in range(self.n))
        return ProblemConstants(
            L=self.mu_reg + op_sq / (4.0 * self.m),
            mu=self.mu_reg,
            sigma_sq=self.d * self.sigma_s ** 2,
            zeta_sq=self.heterogeneity(),
            f_star=self.f_star,
        )

    def zeta_source(self) -> str:
        return "reference_solve"

    def describe(self) -> dict:
        return {
            "kind": self.kind, "n": self.n, "d": self.d, "m": self.m,
            "mu_reg": self.mu_reg, "sigma_s": self.sigma_s, "sigma_h": self.sigma_h,
            "seed": self.seed, "zeta_source": self.zeta_source(),
        }

    def _solve_reference(self, tol: float = 1e-10) -> tuple[np.ndarray, float]:
        if self._reference is None:
            x = reference_minimize(self.f, self.grad_f, np.zeros(self.d),
                                   lipschitz=self.constants_l_estimate(), tol=tol)
            self._reference = (x, self.f(x))
        return self._reference

    def constants_l_estimate(self) -> float:
        op_sq = max(float(np.linalg.norm(self.u[i], ord=2)) ** 2 for i in range(self.n))
        return self.mu_reg + op_sq / (4.0 * self.m)

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected parameter of shape ({self.d},), got {x.shape}")
        return x


def gen_logistic(n: int, d: int, m: int, sigma_h: float, mu_reg: float,
                 sigma_s: float, seed: int) -> LogisticProblem:
    """Generating parameters x_i = 1 + N(0, sigma_h^2 I); labels are drawn by
    thresholding uniforms against the logistic link at x_i."""
    if m < 1:
        raise ValueError(f"need m >= 1 samples per agent, got m={m}")
    x0 = np.ones(d)
    u = np.empty((n, m, d))
    v = np.empty((n, m))
    for i in range(n):
        eps = rngmod.substream(seed, rngmod.LOGISTIC_CENTERS, i).standard_normal(d)
        x_i = x0 + sigma_h * eps
        u[i] = rngmod.substream(seed, rngmod.LOGISTIC_COVARIATES, i).standard_normal((m, d))
        z = rngmod.substream(seed, rngmod.LOGISTIC_LABELS, i).uniform(size=m)
        v[i] = np.where(z <= _expit(u[i] @ x_i), 1.0, -1.0)
    return LogisticProblem(u, v, mu_reg=mu_reg, sigma_s=sigma_s, sigma_h=sigma_h, seed=seed)


class WelschProblem:
    """Bounded non-convex regression: per-sample loss 1 - exp(-r^2/2).

    The second derivative of the sample loss in the residual is (1 - r^2)
    exp(-r^2/2), bounded by 1 in magnitude, which gives the recorded
    smoothness constant. The global minimum value is unknown; f >= 0 always.
    """

    kind = "welsch"

    def __init__(self, u: np.ndarray, y: np.ndarray, sigma_s: float,
                 sigma_h: float = float("nan"), seed: int | None = None):
        u = np.asarray(u, dtype=float)
        if u.ndim != 3:
            raise ValueError("covariate tensor must have shape (n, m, d)")
        self.u = u
        self.y = np.asarray(y, dtype=float).reshape(u.shape[0], u.shape[1])
        self.n, self.m, self.d = u.shape
        self.sigma_s = float(sigma_s)
        self.sigma_h = float(sigma_h)
        self.seed = seed

    @property
    def noise_dim(self) -> int:
        return self.d

    def full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        x = self._check_x(x)
        r = self.u[agent] @ x - self.y[agent]
        return (self.u[agent].T @ (r * np.exp(-0.5 * r ** 2))) / self.m

    def stochastic_gradient(self, agent: int, x: np.ndarray,
                            stream: np.random.Generator) -> np.ndarray:
        return self.full_gradient(agent, x) + self.sigma_s * stream.standard_normal(self.d)

    def gradient_matrix(self, x_rows: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(i, x_rows[i]) for i in range(self.n)])

    def gradient_matrix_at(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(i, x) for i in range(self.n)])

    def noisy_gradient_matrix(self, x_rows: np.ndarray,
                              streams: Sequence[np.random.Generator]) -> np.ndarray:
        g = self.gradient_matrix(x_rows)
        for i in range(self.n):
            g[i] += self.sigma_s * streams[i].standard_normal(self.d)
        return g

    def local_f(self, agent: int, x: np.ndarray) -> float:
        r = self.u[agent] @ x - self.y[agent]
        return float((1.0 - np.exp(-0.5 * r ** 2)).mean())

    def f(self, x: np.ndarray) -> float:
        x = self._check_x(x)
        return sum(self.local_f(i, x) for i in range(self.n)) / self.n

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        return self.gradient_matrix_at(np.asarray(x, dtype=float)).mean(axis=0)

    x_star = None
    f_star = None

    def heterogeneity(self) -> float:
        raise RuntimeError(
            "the Welsch family has no certified global minimizer; "
            "heterogeneity at the optimum is undefined")

    def constants(self) -> ProblemConstants:
        op_sq = max(float(np.linalg.norm(self.u[i], ord=2)) ** 2 for i in range(self.n))
        return ProblemConstants(
            L=op_sq / self.m,
            mu=0.0,
            sigma_sq=self.d * self.sigma_s ** 2,
            zeta_sq=None,
            f_star=None,
        )

    def zeta_source(self) -> str:
        return "unavailable"

    def describe(self) -> dict:
        return {
            "kind": self.kind, "n": self.n, "d": self.d, "m": self.m,
            "sigma_s": self.sigma_s, "sigma_h": self.sigma_h, "seed": self.seed,
        }

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected parameter of shape ({self.d},), got {x.shape}")
        return x


def gen_welsch(n: int, d: int, m: int, sigma_h: float, sigma_s: float,
               seed: int) -> WelschProblem:
    """Clean per-agent linear labels from spread-out centers; the center spread
    sigma_h is the only source of heterogeneity."""
    x0 = np.ones(d)
    u = np.empty((n, m, d))
    y = np.empty((n, m))
    for i in range(n):
        eps = rngmod.substream(seed, rngmod.WELSCH_CENTERS, i).standard_normal(d)
        u[i] = rngmod.substream(seed, rngmod.WELSCH_COVARIATES, i).standard_normal((m, d))
        y[i] = u[i] @ (x0 + sigma_h * eps)
    return WelschProblem(u, y, sigma_s=sigma_s, sigma_h=sigma_h, seed=seed)


def reference_minimize(f, grad, x0: np.ndarray, lipschitz: float,
                       tol: float = 1e-10, max_iters: int = 200_000) -> np.ndarray:
    """Full-gradient descent with Armijo backtracking down to ||grad f|| <= tol.

    Backtracking never shrinks the step below 1/L: the descent lemma makes
    that step a guaranteed decrease, so the search stays well defined even
    when f-differences fall under the floating-point resolution of f itself.
    """
    x = np.asarray(x0, dtype=float).copy()
    floor = 1.0 / max(lipschitz, 1e-12)
    fx = f(x)
    for _ in range(max_iters):
        g = grad(x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x
        t = 4.0 * floor
        gsq = gnorm ** 2
        while True:
            cand = x - t * g
            fc = f(cand)
            if fc <= fx - 0.25 * t * gsq or t <= floor:
                break
            t = max(t * 0.5, floor)
        x, fx = cand, fc
    raise ReferenceSolveError(float(np.linalg.norm(grad(x))), tol)


# Portable text format: a header of scalars, then CSV blocks per agent.
# Doubles are written at 17 significant digits, which round-trips exactly.

def save_problem(problem, path) -> None:
    lines = ["# decent-opt problem v1"]
    desc = problem.describe()
    for key in sorted(k for k in desc if k != "zeta_source"):
        val = desc[key]
        if val is None:
            continue
        lines.append(f"{key} = {_fmt_scalar(val)}")
    if isinstance(problem, QuadraticProblem):
        for i in range(problem.n):
            lines.append(f"[A {i}]")
            lines.extend(",".join(f"{v:.17g}" for v in row) for row in problem.a[i])
        for i in range(problem.n):
            lines.append(f"[xloc {i}]")
            lines.append(",".join(f"{v:.17g}" for v in problem.x_local_star[i]))
    elif isinstance(problem, LogisticProblem):
        for i in range(problem.n):
            lines.append(f"[U {i}]")
            lines.extend(",".join(f"{v:.17g}" for v in row) for row in problem.u[i])
        for i in range(problem.n):
            lines.append(f"[V {i}]")
            lines.append(",".join(f"{int(v):d}" for v in problem.v[i]))
    elif isinstance(problem, WelschProblem):
        for i in range(problem.n):
            lines.append(f"[U {i}]")
            lines.extend(",".join(f"{v:.17g}" for v in row) for row in problem.u[i])
        for i in range(problem.n):
            lines.append(f"[y {i}]")
            lines.append(",".join(f"{v:.17g}" for v in problem.y[i]))
    else:
        raise TypeError(f"cannot serialize problem of type {type(problem).__name__}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path):
    scalars: dict[str, str] = {}
    blocks: dict[tuple[str, int], list[list[float]]] = {}
    current: list[list[float]] | None = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                name, idx = line[1:-1].split()
                current = blocks.setdefault((name, int(idx)), [])
            elif "=" in line and current is None:
                key, _, val = line.partition("=")
                scalars[key.strip()] = val.strip()
            else:
                current.append([float(v) for v in line.split(",")])
    kind = scalars.pop("kind")
    n = int(scalars["n"])
    if kind == "quadratic":
        a = np.stack([np.array(blocks[("A", i)]) for i in range(n)])
        xloc = np.stack([np.array(blocks[("xloc", i)])[0] for i in range(n)])
        return QuadraticProblem(
            a, xloc, sigma=float(scalars["sigma"]), hetero_c=float(scalars["c"]),
            seed=_opt_int(scalars.get("seed")),
            regenerations=int(scalars.get("regenerations", 0)))
    if kind == "logistic":
        u = np.stack([np.array(blocks[("U", i)]) for i in range(n)])
        v = np.stack([np.array(blocks[("V", i)])[0] for i in range(n)])
        return LogisticProblem(
            u, v, mu_reg=float(scalars["mu_reg"]), sigma_s=float(scalars["sigma_s"]),
            sigma_h=float(scalars.get("sigma_h", "nan")), seed=_opt_int(scalars.get("seed")))
    if kind == "welsch":
        u = np.stack([np.array(blocks[("U", i)]) for i in range(n)])
        y = np.stack([np.array(blocks[("y", i)])[0] for i in range(n)])
        return WelschProblem(
            u, y, sigma_s=float(scalars["sigma_s"]),
            sigma_h=float(scalars.get("sigma_h", "nan")), seed=_opt_int(scalars.get("seed")))
    raise ValueError(f"unknown problem kind in file: {kind!r}")


def _fmt_scalar(val) -> str:
    if isinstance(val, float):
        return f"{val:.17g}"
    return str(val)


def _opt_int(val):
    return None if val in (None, "None") else int(val)
