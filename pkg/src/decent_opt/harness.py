"""Configuration, seeded experiment orchestration, and CSV emission.

Configs are line-oriented ``key = value`` text (``#`` comments). One config
describes one experiment: a problem instance, a communication matrix, one or
more algorithms sharing step-size and momentum settings, and repetition
bookkeeping. The sweepable keys (c, sigma_h, alpha, beta, n) may carry
comma-separated lists; ``run`` requires them scalar, ``sweep`` expands the
Cartesian product.

Every output directory receives the effective (fully defaulted) config, the
package version, and all seeds, so re-running from the echo reproduces the
outputs byte for byte.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__, algorithms, analysis, problems, rng as rngmod, topology


class ConfigError(ValueError):
    """Malformed, incomplete, or contradictory configuration."""


SWEEPABLE = ("c", "sigma_h", "alpha", "beta", "n")

_DEFAULTS = {
    "c": "1", "sigma": "0", "sigma_h": "0", "sigma_s": "0",
    "problem_seed": "0", "topology": "ring", "lazy": "false", "matrix_file": "",
    "beta": "0", "lr_drop_steps": "", "x0": "zeros", "x0_file": "",
    "seed": "0", "reps": "1", "monitors": "none", "shadow_variant": "nonconvex",
    "paired_noise": "true", "jobs": "1", "sweep_budget": "256", "out": "",
}

_REQUIRED = ("problem", "n", "d", "algorithm", "alpha", "T")

_KNOWN_KEYS = set(_DEFAULTS) | set(_REQUIRED) | {"p", "m", "mu_reg"}

_MONITOR_NAMES = ("lemma1", "lemma2", "shadow", "avg_identity")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated, fully defaulted experiment description."""

    problem: str
    n: tuple[float, ...]
    d: int
    p: int | None
    m: int | None
    c: tuple[float, ...]
    sigma: float
    sigma_h: tuple[float, ...]
    sigma_s: float
    mu_reg: float | None
    problem_seed: int
    topology: str
    lazy: bool
    matrix_file: str
    algorithms: tuple[str, ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    T: int
    lr_drop_steps: tuple[int, ...]
    x0: str
    x0_file: str
    seed: int
    reps: int
    monitors: tuple[str, ...]
    shadow_variant: str
    paired_noise: bool
    jobs: int
    sweep_budget: int
    out: str

    def scalar(self) -> "ScalarConfig":
        """Collapse sweepable fields; error if any still carries a list."""
        for name in SWEEPABLE:
            vals = getattr(self, name)
            if len(vals) != 1:
                raise ConfigError(
                    f"key {name!r} carries a sweep list {list(vals)}; use the sweep "
                    "command or reduce it to a single value")
        return ScalarConfig(self)

    def sweep_points(self) -> list["ScalarConfig"]:
        combos = list(product(
            *(tuple((name, v) for v in getattr(self, name)) for name in SWEEPABLE)))
        if len(combos) > self.sweep_budget:
            raise ConfigError(
                f"sweep would launch {len(combos)} points, over the budget of "
                f"{self.sweep_budget}; raise sweep_budget or trim the lists")
        points = []
        for combo in combos:
            overrides = {name: (val,) for name, val in combo}
            points.append(ScalarConfig(replace(self, **overrides)))
        return points


class ScalarConfig:
    """A RunConfig whose sweepable keys are single-valued."""

    def __init__(self, base: RunConfig):
        self.base = base
        self.n = int(base.n[0])
        self.c = float(base.c[0])
        self.sigma_h = float(base.sigma_h[0])
        self.alpha = float(base.alpha[0])
        self.beta = float(base.beta[0])

    def __getattr__(self, name):
        return getattr(object.__getattribute__(self, "base"), name)

    def build_problem(self):
        b = self.base
        if b.problem == "quadratic":
            return problems.gen_quadratic(self.n, b.d, b.p, c=self.c, sigma=b.sigma,
                                          seed=b.problem_seed)
        if b.problem == "logistic":
            return problems.gen_logistic(self.n, b.d, b.m, sigma_h=self.sigma_h,
                                         mu_reg=b.mu_reg, sigma_s=b.sigma_s,
                                         seed=b.problem_seed)
        return problems.gen_welsch(self.n, b.d, b.m, sigma_h=self.sigma_h,
                                   sigma_s=b.sigma_s, seed=b.problem_seed)

    def build_matrix(self) -> topology.MixingMatrix:
        b = self.base
        if b.topology == "ring":
            w = topology.build_ring(self.n)
        elif b.topology == "complete":
            w = topology.build_complete(self.n)
        else:
            w = topology.load_matrix_csv(b.matrix_file)
            if w.n != self.n:
                raise ConfigError(
                    f"matrix file is {w.n}-agent but config says n = {self.n}")
        return topology.lazy_transform(w) if b.lazy else w

    def build_x0(self, problem) -> np.ndarray:
        b = self.base
        if b.x0 == "zeros":
            return np.zeros(problem.d)
        if b.x0 == "gaussian":
            return rngmod.substream(b.seed, rngmod.INIT_POINT).standard_normal(problem.d)
        vec = np.loadtxt(b.x0_file, delimiter=",", ndmin=1)
        if vec.shape != (problem.d,):
            raise ConfigError(f"x0 file has shape {vec.shape}, expected ({problem.d},)")
        return vec

    def monitor_set(self) -> algorithms.MonitorSet:
        names = self.base.monitors
        return algorithms.MonitorSet(
            lemma1="lemma1" in names,
            lemma2="lemma2" in names,
            shadow="shadow" in names,
            shadow_variant=self.base.shadow_variant,
            avg_identity="avg_identity" in names,
        )

    def algorithm_spec(self, kind: str) -> algorithms.AlgorithmSpec:
        return algorithms.AlgorithmSpec(kind=kind, alpha=self.alpha, beta=self.beta,
                                        lr_drop_steps=self.base.lr_drop_steps)

    def echo(self) -> str:
        """Canonical flat key = value text that re-parses to this config."""
        b = self.base
        lines = ["# decent-opt effective config (auto-generated)"]

        def emit(key, val):
            lines.append(f"{key} = {val}")

        emit("problem", b.problem)
        emit("n", _fmt_list(b.n, int))
        emit("d", b.d)
        if b.p is not None:
            emit("p", b.p)
        if b.m is not None:
            emit("m", b.m)
        emit("c", _fmt_list(b.c))
        emit("sigma", _fmt(b.sigma))
        emit("sigma_h", _fmt_list(b.sigma_h))
        emit("sigma_s", _fmt(b.sigma_s))
        if b.mu_reg is not None:
            emit("mu_reg", _fmt(b.mu_reg))
        emit("problem_seed", b.problem_seed)
        emit("topology", b.topology)
        emit("lazy", str(b.lazy).lower())
        if b.matrix_file:
            emit("matrix_file", b.matrix_file)
        emit("algorithm", ", ".join(b.algorithms))
        emit("alpha", _fmt_list(b.alpha))
        emit("beta", _fmt_list(b.beta))
        emit("T", b.T)
        if b.lr_drop_steps:
            emit("lr_drop_steps", ", ".join(str(v) for v in b.lr_drop_steps))
        emit("x0", b.x0)
        if b.x0_file:
            emit("x0_file", b.x0_file)
        emit("seed", b.seed)
        emit("reps", b.reps)
        emit("monitors", ", ".join(b.monitors) if b.monitors else "none")
        emit("shadow_variant", b.shadow_variant)
        emit("paired_noise", str(b.paired_noise).lower())
        emit("jobs", b.jobs)
        emit("sweep_budget", b.sweep_budget)
        if b.out:
            emit("out", b.out)
        return "\n".join(lines) + "\n"


def parse_config(source) -> RunConfig:
    """Parse config text or a file path; unknown keys are hard errors."""
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val.strip()

    for key in _REQUIRED:
        if key not in raw or raw[key] == "":
            raise ConfigError(f"missing required key {key!r}")
    merged = {**_DEFAULTS, **raw}

    problem = merged["problem"]
    if problem not in ("quadratic", "logistic", "welsch"):
        raise ConfigError(f"unsupported problem {problem!r}; "
                          "use quadratic, logistic, or welsch")
    kinds = tuple(s.strip() for s in merged["algorithm"].split(",") if s.strip())
    for k in kinds:
        if k not in algorithms.KINDS:
            raise ConfigError(f"unsupported algorithm {k!r}; supported: "
                              f"{', '.join(algorithms.KINDS)}")
    if not kinds:
        raise ConfigError("algorithm list is empty")

    p = _opt_int(merged, "p")
    m = _opt_int(merged, "m")
    mu_reg = _opt_float(merged, "mu_reg")
    if problem == "quadratic" and p is None:
        raise ConfigError("missing required key 'p' (samples per agent) for quadratic")
    if problem in ("logistic", "welsch") and m is None:
        raise ConfigError(f"missing required key 'm' (samples per agent) for {problem}")
    if problem == "logistic" and mu_reg is None:
        raise ConfigError("missing required key 'mu_reg' for logistic "
                          "(no default is claimed)")

    monitors = tuple(
        s.strip() for s in merged["monitors"].split(",")
        if s.strip() and s.strip() != "none")
    for name in monitors:
        if name not in _MONITOR_NAMES:
            raise ConfigError(f"unknown monitor {name!r}; use {', '.join(_MONITOR_NAMES)}")
    x0 = merged["x0"]
    if x0 not in ("zeros", "gaussian", "file"):
        raise ConfigError(f"x0 must be zeros, gaussian, or file, got {x0!r}")
    if x0 == "file" and not merged["x0_file"]:
        raise ConfigError("x0 = file requires the 'x0_file' key")
    if merged["topology"] not in ("ring", "complete", "file"):
        raise ConfigError(f"unsupported topology {merged['topology']!r}")
    if merged["topology"] == "file" and not merged["matrix_file"]:
        raise ConfigError("topology = file requires the 'matrix_file' key")
    for path_key in ("matrix_file", "x0_file"):
        if merged[path_key] and not Path(merged[path_key]).exists():
            raise ConfigError(f"{path_key} points at a missing file: {merged[path_key]}")
    shadow_variant = merged["shadow_variant"]
    if shadow_variant not in analysis.SHADOW_VARIANTS:
        raise ConfigError(f"shadow_variant must be one of {analysis.SHADOW_VARIANTS}")

    cfg = RunConfig(
        problem=problem,
        n=_float_list(merged, "n"),
        d=_int(merged, "d"),
        p=p,
        m=m,
        c=_float_list(merged, "c"),
        sigma=_float(merged, "sigma"),
        sigma_h=_float_list(merged, "sigma_h"),
        sigma_s=_float(merged, "sigma_s"),
        mu_reg=mu_reg,
        problem_seed=_int(merged, "problem_seed"),
        topology=merged["topology"],
        lazy=_bool(merged, "lazy"),
        matrix_file=merged["matrix_file"],
        algorithms=kinds,
        alpha=_float_list(merged, "alpha"),
        beta=_float_list(merged, "beta"),
        T=_int(merged, "T"),
        lr_drop_steps=_int_tuple(merged, "lr_drop_steps"),
        x0=x0,
        x0_file=merged["x0_file"],
        seed=_int(merged, "seed"),
        reps=_int(merged, "reps"),
        monitors=monitors,
        shadow_variant=shadow_variant,
        paired_noise=_bool(merged, "paired_noise"),
        jobs=_int(merged, "jobs"),
        sweep_budget=_int(merged, "sweep_budget"),
        out=merged["out"],
    )
    if cfg.reps < 1:
        raise ConfigError(f"reps must be at least 1, got {cfg.reps}")
    if cfg.T < 1:
        raise ConfigError(f"T must be at least 1, got {cfg.T}")
    for v in cfg.alpha:
        if v <= 0:
            raise ConfigError(f"alpha must be positive, got {v}")
    for v in cfg.beta:
        if not 0.0 <= v < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {v}")
    return cfg


@dataclass
class AlgorithmAggregate:
    """Across-rep statistics of one algorithm's per-iteration metrics."""

    kind: str
    t: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    minimum: dict[str, np.ndarray]
    maximum: dict[str, np.ndarray]
    final_mean: dict[str, float]
    completed_reps: int
    failed_reps: tuple[int, ...] = ()


@dataclass
class AggregateReport:
    """Everything run_experiment produces for one config."""

    per_kind: dict[str, AlgorithmAggregate]
    bounds: dict[str, float]
    seeds: tuple[int, ...]
    out_dir: str | None
    config_text: str

    @property
    def any_failure(self) -> bool:
        return any(a.failed_reps for a in self.per_kind.values())


def measured_bound_inputs(scfg: ScalarConfig, problem, w, x0) -> analysis.BoundInputs:
    consts = problem.constants()
    x0_rows = np.tile(x0, (problem.n, 1))
    f0 = problem.f(x0)
    f_star = consts.f_star if consts.f_star is not None else 0.0  # f >= 0 families
    return analysis.BoundInputs(
        alpha=scfg.alpha, beta=scfg.beta, lam=w.profile.lam,
        L=consts.L, mu=consts.mu, sigma_sq=consts.sigma_sq,
        zeta0_sq=analysis.zeta0_sq(w, problem, x0_rows),
        n=problem.n, T=scfg.T, f0_gap=max(f0 - f_star, 0.0),
    )


def _bounds_summary(inputs: analysis.BoundInputs) -> dict[str, float]:
    out = {
        "alpha": inputs.alpha, "beta": inputs.beta, "lambda": inputs.lam,
        "L": inputs.L, "mu": inputs.mu, "sigma_sq": inputs.sigma_sq,
        "zeta0_sq": inputs.zeta0_sq, "f0_gap": inputs.f0_gap, "T": inputs.T,
        "alpha_max_nonconvex": analysis.max_step_size(inputs.beta, inputs.lam,
                                                      inputs.L, "nonconvex"),
        "alpha_max_pl": analysis.max_step_size(inputs.beta, inputs.lam,
                                               inputs.L, "pl"),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out["theorem1_bound"] = analysis.theorem1_bound(inputs)
        if inputs.mu > 0:
            rho1, rho2 = analysis.theorem2_rhos(inputs)
            out["rho1"] = rho1
            out["rho2"] = rho2
            out["theorem2_floor"] = analysis.theorem2_floor(inputs)
            if abs(rho1) < 1.0:  # transient explodes otherwise; floor still stands
                out["theorem2_bound_at_T"] = analysis.theorem2_bound(inputs, inputs.T)
    return out


def run_experiment(config: RunConfig | ScalarConfig, out_dir=None,
                   jobs: int | None = None) -> AggregateReport:
    """Run every (algorithm, rep) cell, aggregate, and emit CSVs.

    Cells share the problem instance and, by default, the per-rep noise
    streams, so differences between algorithm curves are paired. A diverging
    cell is recorded and skipped; the remaining cells still aggregate.
    """
    scfg = config if isinstance(config, ScalarConfig) else config.scalar()
    if jobs is None:
        jobs = _resolve_jobs(scfg.jobs)
    problem = scfg.build_problem()
    w = scfg.build_matrix()
    if w.n != problem.n:
        raise ConfigError(f"matrix is {w.n}-agent but problem has {problem.n}")
    x0 = scfg.build_x0(problem)
    monitors = scfg.monitor_set()
    seeds = tuple(scfg.seed + r for r in range(scfg.reps))

    inputs = measured_bound_inputs(scfg, problem, w, x0)
    _warn_if_inadmissible(scfg, inputs)

    cells = [(kind, r) for kind in scfg.algorithms for r in range(scfg.reps)]

    def run_cell(cell):
        kind, r = cell
        seed = seeds[r]
        if not scfg.paired_noise:
            seed += 1_000_003 * scfg.algorithms.index(kind)
        spec = scfg.algorithm_spec(kind)
        try:
            return algorithms.run(spec, problem, w, T=scfg.T, x0=x0, seed=seed,
                                  monitors=monitors)
        except algorithms.DivergenceError as err:
            return err

    if jobs > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]

    per_kind: dict[str, AlgorithmAggregate] = {}
    echo = scfg.echo()
    out_path = Path(out_dir) if out_dir else (Path(scfg.out) if scfg.out else None)
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    failures: list[str] = []
    for kind_idx, kind in enumerate(scfg.algorithms):
        traces, failed = [], []
        for r in range(scfg.reps):
            outcome = outcomes[kind_idx * scfg.reps + r]
            if isinstance(outcome, algorithms.DivergenceError):
                failed.append(r)
                failures.append(f"kind={kind} rep={r} t={outcome.t} agent={outcome.agent}")
                continue
            traces.append((r, outcome))
            if out_path is not None:
                kind_dir = out_path / kind
                kind_dir.mkdir(exist_ok=True)
                _atomic_csv(outcome, kind_dir / f"rep{r:03d}.csv")
        per_kind[kind] = _aggregate(kind, traces, scfg.T, tuple(failed))
        if out_path is not None and traces:
            _write_aggregate_csv(per_kind[kind], out_path / kind / "aggregate.csv")

    bounds = _bounds_summary(inputs)
    report = AggregateReport(per_kind=per_kind, bounds=bounds, seeds=seeds,
                             out_dir=str(out_path) if out_path else None,
                             config_text=echo)
    if out_path is not None:
        _atomic_text(echo, out_path / "effective-config.txt")
        prov = [f"version = {__version__}",
                f"seeds = {', '.join(str(s) for s in seeds)}"]
        if failures:
            prov.append("failures = " + "; ".join(failures))
        _atomic_text("\n".join(prov) + "\n", out_path / "provenance.txt")
        _atomic_text(
            "".join(f"{k} = {_fmt(v)}\n" for k, v in bounds.items()),
            out_path / "bounds.txt")
    return report


def sweep(config: RunConfig, out_dir=None, jobs: int | None = None) -> list[AggregateReport]:
    """Expand sweep lists into points and run each; an index CSV maps points
    to their output directories. The budget is enforced before any run."""
    points = config.sweep_points()
    base_out = Path(out_dir) if out_dir else (Path(config.out) if config.out else None)
    reports = []
    index_rows = []
    for k, point in enumerate(points):
        sub = None
        if base_out is not None:
            sub = base_out / f"pt{k:03d}"
        report = run_experiment(point, out_dir=sub, jobs=jobs)
        reports.append(report)
        index_rows.append({
            "point": k, "c": point.c, "sigma_h": point.sigma_h,
            "alpha": point.alpha, "beta": point.beta, "n": point.n,
            "path": str(sub) if sub else "",
        })
    if base_out is not None:
        base_out.mkdir(parents=True, exist_ok=True)
        header = ["point", "c", "sigma_h", "alpha", "beta", "n", "path"]
        lines = [",".join(header)]
        for row in index_rows:
            lines.append(",".join(
                str(row[h]) if h in ("point", "path") else _fmt(float(row[h]))
                for h in header))
        _atomic_text("\n".join(lines) + "\n", base_out / "index.csv")
    return reports


VERIFY_CHECKS = ("lemma1", "lemma2", "lemma3", "lemma5", "shadow", "bounds")

REP_EQUIV_TOL = 1e-8       # discrepancy between the two shadow representations
COLLAPSE_TOL = 1e-9        # shadow == real trajectory at sigma = 0
MONITOR_TOL = 1e-9         # scaled per-step residual slack


def verify_check(config: RunConfig | ScalarConfig, check: str) -> tuple[bool, float]:
    """Run one numerical verification and return (passed, detail).

    detail is the worst margin found: the minimum scaled residual for the
    per-step monitors, the largest empirical-to-bound ratio for the Monte
    Carlo and envelope checks, and the largest gap for the shadow check.
    """
    if check not in VERIFY_CHECKS:
        raise ConfigError(f"unknown check {check!r}; use one of {', '.join(VERIFY_CHECKS)}")
    scfg = config if isinstance(config, ScalarConfig) else config.scalar()
    problem = scfg.build_problem()
    w = scfg.build_matrix()
    x0 = scfg.build_x0(problem)
    spec = scfg.algorithm_spec("edm")
    consts = problem.constants()

    if check in ("lemma1", "lemma2", "lemma5"):
        if consts.sigma_sq > 0.0:
            raise ConfigError(
                f"check {check!r} is a deterministic per-path monitor; it needs a "
                "noise-free config (sigma = 0). For stochastic runs use lemma3.")
        if check == "lemma2" and consts.mu <= 0.0:
            raise ConfigError("check 'lemma2' needs a positive PL constant")
        mon = analysis.lemma_monitors(spec, problem, w, T=scfg.T, x0=x0, seed=scfg.seed)
        if check == "lemma1":
            scaled = mon["eq6_residuals"] / mon["eq6_scales"]
            detail = float(scaled.min())
            return detail >= -MONITOR_TOL, detail
        if check == "lemma2":
            scaled = mon["eq7_residuals"] / mon["eq7_scales"]
            detail = float(scaled.min())
            return detail >= -MONITOR_TOL, detail
        slack = mon["lemma5_rhs"] - mon["lemma5_lhs"]
        detail = slack / max(1.0, mon["lemma5_rhs"])
        return detail >= -MONITOR_TOL, float(detail)

    if check == "lemma3":
        est = analysis.lemma3_estimate(spec, problem, w, T=scfg.T, reps=scfg.reps,
                                       seed_base=scfg.seed)
        if est["trivial"]:
            return True, 0.0
        ratio = float((est["empirical"] / est["bound"]).max())
        return ratio <= 1.0, ratio

    if check == "shadow":
        trace = algorithms.run(spec, problem, w, T=scfg.T, x0=x0, seed=scfg.seed,
                               monitors=algorithms.MonitorSet(shadow=True))
        rep_gap = trace.meta["shadow_rep_gap_max"]
        ok = rep_gap <= REP_EQUIV_TOL
        detail = rep_gap
        if consts.sigma_sq == 0.0:
            rel = trace.meta["shadow_vs_real_rel_max"]
            ok = ok and rel <= COLLAPSE_TOL
            detail = max(rep_gap, rel)
        return ok, float(detail)

    # check == "bounds": one-sided envelopes from measured constants.
    inputs = measured_bound_inputs(scfg, problem, w, x0)
    rows0 = np.tile(x0, (problem.n, 1))
    g0 = problem.gradient_matrix(rows0).mean(axis=0)
    m0 = 0.25 * float(g0 @ g0) + float(problem.grad_f(x0) @ problem.grad_f(x0))
    ratios = []
    lhs_sums = []
    subopt_stack = []
    for r in range(scfg.reps):
        trace = algorithms.run(spec, problem, w, T=scfg.T, x0=x0,
                               seed=scfg.seed + r)
        body = (0.25 * trace.columns["grad_bar_sq"][:-1]
                + trace.columns["grad_avg_sq"][:-1]).sum()
        lhs_sums.append((m0 + float(body)) / scfg.T)
        if consts.mu > 0 and consts.f_star is not None:
            subopt_stack.append(trace.columns["subopt"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t1 = analysis.theorem1_bound(inputs)
    ratios.append(float(np.mean(lhs_sums)) / t1)
    if subopt_stack:
        emp = np.stack(subopt_stack).mean(axis=0)
        emp0 = problem.f(x0) - consts.f_star
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bounds_t = np.array([analysis.theorem2_bound(inputs, t)
                                 for t in range(scfg.T + 1)])
        series = np.concatenate(([emp0], emp))
        ratios.append(float((series / bounds_t).max()))
    detail = max(ratios)
    return detail <= 1.0, detail


def _aggregate(kind: str, traces, T: int, failed: tuple[int, ...]) -> AlgorithmAggregate:
    names = analysis.METRIC_FIELDS
    if not traces:
        empty = {name: np.full(T, np.nan) for name in names}
        return AlgorithmAggregate(kind=kind, t=np.arange(1, T + 1),
                                  mean=empty, std=dict(empty), minimum=dict(empty),
                                  maximum=dict(empty), final_mean={}, completed_reps=0,
                                  failed_reps=failed)
    stacked = {
        name: np.stack([tr.columns[name] for _, tr in traces]) for name in names
    }
    # Shifted moments: k identical traces must aggregate to exactly (value, 0),
    # which the naive mean of k copies does not guarantee in floating point.
    mean = {name: arr[0] + (arr - arr[0]).mean(axis=0) for name, arr in stacked.items()}
    return AlgorithmAggregate(
        kind=kind,
        t=traces[0][1].t,
        mean=mean,
        std={name: np.sqrt(((arr - mean[name]) ** 2).mean(axis=0))
             for name, arr in stacked.items()},
        minimum={name: arr.min(axis=0) for name, arr in stacked.items()},
        maximum={name: arr.max(axis=0) for name, arr in stacked.items()},
        final_mean={name: float(mean[name][-1]) for name in names},
        completed_reps=len(traces),
        failed_reps=failed,
    )


def _write_aggregate_csv(agg: AlgorithmAggregate, path) -> None:
    names = analysis.METRIC_FIELDS
    header = ["t"]
    for name in names:
        header += [f"{name}_mean", f"{name}_std", f"{name}_min", f"{name}_max"]
    lines = [",".join(header)]
    for k in range(len(agg.t)):
        cells = [str(int(agg.t[k]))]
        for name in names:
            cells += [_fmt(agg.mean[name][k]), _fmt(agg.std[name][k]),
                      _fmt(agg.minimum[name][k]), _fmt(agg.maximum[name][k])]
        lines.append(",".join(cells))
    _atomic_text("\n".join(lines) + "\n", path)


def _warn_if_inadmissible(scfg: ScalarConfig, inputs: analysis.BoundInputs) -> None:
    ceiling_nc = analysis.max_step_size(scfg.beta, inputs.lam, inputs.L, "nonconvex")
    ceiling_pl = analysis.max_step_size(scfg.beta, inputs.lam, inputs.L, "pl")
    if scfg.alpha > ceiling_nc:
        warnings.warn(
            f"alpha = {scfg.alpha:g} exceeds the non-convex admissible ceiling "
            f"{ceiling_nc:.3g} (and the linear-rate ceiling is {ceiling_pl:.3g}); "
            "rate guarantees do not apply", stacklevel=2)


def _resolve_jobs(config_jobs: int) -> int:
    env = os.environ.get("DECENT_OPT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"DECENT_OPT_JOBS must be an integer, got {env!r}") from err
    return max(1, config_jobs)


def _atomic_csv(trace: analysis.Trace, path: Path) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    trace.to_csv(tmp)
    os.replace(tmp, path)


def _atomic_text(text: str, path: Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _fmt_list(vals, cast=float) -> str:
    return ", ".join(_fmt(cast(v)) for v in vals)


def _int(d, key) -> int:
    try:
        return int(d[key])
    except ValueError as err:
        raise ConfigError(f"key {key!r} must be an integer, got {d[key]!r}") from err


def _float(d, key) -> float:
    try:
        return float(d[key])
    except ValueError as err:
        raise ConfigError(f"key {key!r} must be a number, got {d[key]!r}") from err


def _bool(d, key) -> bool:
    val = d[key].lower()
    if val in ("true", "1", "yes"):
        return True
    if val in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r} must be true or false, got {d[key]!r}")


def _float_list(d, key) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in d[key].split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"key {key!r} must be numbers, got {d[key]!r}") from err
    if not vals:
        raise ConfigError(f"key {key!r} is empty")
    return vals


def _int_tuple(d, key) -> tuple[int, ...]:
    raw = d[key]
    if not raw.strip():
        return ()
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"key {key!r} must be integers, got {raw!r}") from err


def _opt_int(d, key):
    return None if key not in d or d[key] == "" else _int(d, key)


def _opt_float(d, key):
    return None if key not in d or d[key] == "" else _float(d, key)
