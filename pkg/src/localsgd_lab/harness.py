"""Experiment protocols: bound validation, round-budget tradeoffs, speedup curves.

Four experiment kinds:

  bounds            run one schedule, compare the measured left-hand side
                    against the matching closed-form guarantee
  rounds-to-target  for each strategy, first communication instant at which the
                    seed-mean error crosses a threshold -> (R_used, T_used)
  speedup           fixed T, growing n; speedup = single-worker error / error
  strategy-compare  shared problem and stepsize, one aggregate series per schedule

All experiments start from x0 = 0, average over the spec's seed list, and are
bit-reproducible from (spec, seeds). The nonconvex error measure is the
time-averaged squared gradient norm; families with a minimizer use r_T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundReport, BoundTerms, compare, thm1_rhs, thm2_rhs, thm3_rhs
from .engine import (
    AggregateMetrics,
    ConstantStepsize,
    InverseTimeStepsize,
    RunConfig,
    run_many,
)
from .objectives import Problem, SinusoidQuadraticProblem, problem_from_spec
from .schedules import (
    Schedule,
    beta_for_increasing,
    check_thm1_condition,
    check_thm2_condition,
    check_thm3_condition,
    decreasing_power_schedule,
    fixed_schedule,
    fixed_width_schedule,
    increasing_power_schedule,
    schedule_from_spec,
)


class PreconditionError(RuntimeError):
    """An experiment refused to run because a theorem precondition failed."""

    def __init__(self, condition: str, detail: str):
        super().__init__(f"{condition}: {detail}")
        self.condition = condition
        self.detail = detail


@dataclass(frozen=True)
class RRule:
    """Round-count rule R = floor(coef * T**T_exp * n**n_exp), clamped to [1, T]."""

    coef: float
    T_exp: float
    n_exp: float

    def rounds(self, n: int, T: int) -> tuple[int, bool]:
        raw = math.floor(self.coef * T**self.T_exp * n**self.n_exp)
        clamped = raw < 1 or raw > T
        return min(max(raw, 1), T), clamped


@dataclass(frozen=True)
class StrategyCell:
    """One labeled schedule strategy inside a multi-cell experiment.

    kind: fixed | fixed-width | increasing-power | increasing-rounds
          | decreasing-rounds | explicit
    fixed uses r_rule (or an explicit R); fixed-width uses H; increasing-power
    uses (a, s); increasing-rounds / decreasing-rounds use r_rule (or R) with
    round lengths proportional to i**p / (R-i+1)**p.
    """

    label: str
    kind: str
    a: float | None = None
    s: float | None = None
    p: float = 2.0
    H: int | None = None
    R: int | None = None
    r_rule: RRule | None = None
    explicit_H: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.label or not all(ch.isalnum() or ch in "_-" for ch in self.label):
            raise ValueError(f"cell label {self.label!r} must be nonempty [A-Za-z0-9_-]+")

    def _rounds(self, n: int, T: int) -> tuple[int, bool]:
        if self.R is not None:
            if not 1 <= self.R <= T:
                raise ValueError(f"cell {self.label}: R={self.R} outside [1, {T}]")
            return self.R, False
        if self.r_rule is None:
            raise ValueError(f"cell {self.label}: needs R or r_rule")
        return self.r_rule.rounds(n, T)

    def build(self, n: int, T: int) -> tuple[Schedule, bool]:
        """Schedule for this cell at (n, T); second value flags an R-rule clamp."""
        if self.kind == "fixed":
            R, clamped = self._rounds(n, T)
            return fixed_schedule(T, R), clamped
        if self.kind == "fixed-width":
            if self.H is None:
                raise ValueError(f"cell {self.label}: fixed-width needs H")
            return fixed_width_schedule(self.H, T), False
        if self.kind == "increasing-power":
            if self.a is None or self.s is None:
                raise ValueError(f"cell {self.label}: increasing-power needs a and s")
            return increasing_power_schedule(self.a, self.s, T), False
        if self.kind == "increasing-rounds":
            R, clamped = self._rounds(n, T)
            dec = decreasing_power_schedule(self.p, R, T)
            return Schedule(tuple(reversed(dec.H))), clamped
        if self.kind == "decreasing-rounds":
            R, clamped = self._rounds(n, T)
            return decreasing_power_schedule(self.p, R, T), clamped
        if self.kind == "explicit":
            if self.explicit_H is None:
                raise ValueError(f"cell {self.label}: explicit needs explicit_H")
            sched = Schedule(tuple(self.explicit_H))
            if sched.T != T:
                raise ValueError(f"cell {self.label}: explicit widths sum to {sched.T}, not {T}")
            return sched, False
        raise ValueError(f"cell {self.label}: unknown strategy kind {self.kind!r}")


@dataclass(frozen=True)
class SpeedupRow:
    label: str
    n: int
    R: int
    strategy: str
    mean_error: float
    stderr: float
    speedup: float
    se_speedup: float
    clamped: bool


@dataclass(frozen=True)
class TradeoffRow:
    label: str
    R_used: int
    T_used: int
    reached: bool
    threshold: float


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """Parameters of one experiment; unused fields stay at their defaults."""

    kind: str
    problem: dict
    seeds: tuple[int, ...]
    stepsize_policy: str = "constant"            # "inverse-time" | "constant"
    beta: float | str | None = None              # number, or "auto" (bounds thm1 only)
    c: float | tuple[float, ...] | None = None   # a tuple is swept, best kept
    theorem: int | None = None
    schedule_spec: dict | None = None            # bounds: the schedule block
    record_stride: int = 1
    cells: tuple[StrategyCell, ...] = ()
    n_list: tuple[int, ...] = ()
    T: int | None = None
    t_max: int | None = None
    threshold: float | None = None
    threshold_auto_factor: float | None = None
    measure: str = "e"                           # rounds-to-target: r | e | h
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("bounds", "rounds-to-target", "speedup", "strategy-compare"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("seed list must be nonempty")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        object.__setattr__(self, "seeds", seeds)
        if self.n_list:
            nl = tuple(int(v) for v in self.n_list)
            if list(nl) != sorted(set(nl)):
                raise ValueError("n list must be sorted ascending without duplicates")
            object.__setattr__(self, "n_list", nl)
        if self.threshold is not None and self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.threshold_auto_factor is not None and self.threshold_auto_factor <= 0:
            raise ValueError("threshold factor must be positive")
        if self.measure not in ("r", "e", "h"):
            raise ValueError(f"measure must be r, e or h, got {self.measure!r}")


def _resolve_c(spec: ExperimentSpec, problem_spec: dict, cell: StrategyCell,
               n: int, T: int, max_workers) -> tuple[float, dict]:
    """Pick the best constant-stepsize c from a swept tuple (lowest final error).

    The sweep drives the given cell at (n, T) on at most 10 of the spec's
    seeds; ties go to the smaller c.
    """
    if not isinstance(spec.c, tuple):
        return float(spec.c), {}
    seeds = spec.seeds[: min(10, len(spec.seeds))]
    scores = []
    for c in spec.c:
        problem = problem_from_spec({**problem_spec, "n": n})
        sched, _ = cell.build(n, T)
        agg = run_many(problem, RunConfig(
            n=n, schedule=sched, stepsize=ConstantStepsize(float(c), n, T),
            x0=np.zeros(problem.dim), seed=0, record_stride=T,
            track_averages=problem.constants().x_star is None,
        ), seeds, max_workers)
        err = agg.mean_avg_h if problem.constants().x_star is None else float(agg.mean_r[-1])
        scores.append((err, float(c)))
    best = min(scores)
    return best[1], {"swept_c": [c for _, c in scores], "chosen_c": best[1],
                     "sweep_errors": [e for e, _ in scores]}


def _thm1_beta(spec: ExperimentSpec, mu: float, L: float) -> float:
    if spec.beta == "auto":
        ss = spec.schedule_spec or {}
        if ss.get("strategy") != "increasing-power":
            raise ValueError('beta "auto" needs an increasing-power schedule (a, s)')
        return max(beta_for_increasing(ss["a"], ss["s"], mu, L), 20.0 * L / mu)
    return float(spec.beta)


def run_bounds_experiment(problem: Problem, spec: ExperimentSpec,
                          max_workers: int | None = None) -> tuple[BoundReport, AggregateMetrics]:
    """Run the schedule and compare the measured LHS with the theorem RHS.

    Refuses (PreconditionError) rather than producing a vacuous comparison.
    Theorem 1 measures seed-mean r_T; Theorems 2 and 3 measure the full time
    average of the seed-mean e_t / h_t, so record_stride is forced to 1 there.
    """
    if spec.theorem not in (1, 2, 3):
        raise ValueError(f"theorem must be 1, 2 or 3, got {spec.theorem}")
    consts = problem.constants()
    sched = schedule_from_spec(spec.schedule_spec)
    T = sched.T
    n = problem.n
    x0 = np.zeros(problem.dim)

    if spec.theorem == 1:
        if consts.mu <= 0 or consts.x_star is None:
            raise ValueError("theorem 1 needs a strongly convex family with a minimizer")
        beta = _thm1_beta(spec, consts.mu, consts.L)
        guard = 20.0 * consts.L / consts.mu
        if beta < guard:
            raise PreconditionError(
                "check_thm1_condition",
                f"beta={beta:g} is below the stepsize guard 20L/mu={guard:g} "
                f"(eta_0 must be <= 1/(10L))",
            )
        cond = check_thm1_condition(sched, consts.mu, consts.L, beta)
        if not cond.all_pass:
            bad = cond.per_round.index(False)
            raise PreconditionError(
                "check_thm1_condition",
                f"round {bad + 1}: H={sched.H[bad]} exceeds cap {cond.caps[bad]:g}",
            )
        stepsize = InverseTimeStepsize(consts.mu, beta)
        agg = run_many(problem, RunConfig(
            n=n, schedule=sched, stepsize=stepsize, x0=x0, seed=0,
            record_stride=spec.record_stride, track_averages=False,
        ), spec.seeds, max_workers)
        r0 = float(np.sum((x0 - consts.x_star) ** 2))
        rhs = thm1_rhs(sched, r0=r0, beta=beta, n=n, T=T, mu=consts.mu,
                       L=consts.L, sigma_bar_sq=consts.sigma_bar_sq)
        measured = float(agg.mean_r[-1])
        return compare(rhs, measured, True), agg

    if isinstance(spec.c, tuple):
        raise ValueError("bound experiments need a single stepsize constant c, not a sweep")
    c = float(spec.c)
    stepsize = ConstantStepsize(c, n, T)

    if spec.theorem == 2:
        if consts.x_star is None:
            raise ValueError("theorem 2 needs a family with a minimizer")
        cond = check_thm2_condition(sched, consts.L, c, n, T)
        if not cond.ok:
            raise PreconditionError(
                "check_thm2_condition",
                f"max H={cond.max_H} exceeds cap sqrt(T)/(7Lc sqrt(n))={cond.cap:g}",
            )
        agg = run_many(problem, RunConfig(
            n=n, schedule=sched, stepsize=stepsize, x0=x0, seed=0,
            record_stride=1, track_averages=False,
        ), spec.seeds, max_workers)
        r0 = float(np.sum((x0 - consts.x_star) ** 2))
        rhs = thm2_rhs(sched, r0=r0, c=c, n=n, T=T, L=consts.L,
                       sigma_bar_sq=consts.sigma_bar_sq)
        measured = math.fsum(agg.mean_e[:-1].tolist()) / T
        return compare(rhs, measured, True), agg

    cond = check_thm3_condition(sched, consts.L, consts.B, c, n, T)
    if not cond.ok:
        raise PreconditionError(
            "check_thm3_condition",
            f"max H={cond.max_H} exceeds cap sqrt(T)/(7LBc sqrt(n))={cond.cap:g}",
        )
    agg = run_many(problem, RunConfig(
        n=n, schedule=sched, stepsize=stepsize, x0=x0, seed=0,
        record_stride=1, track_averages=False,
    ), spec.seeds, max_workers)
    if consts.f_star is not None:
        e0 = problem.global_value(x0) - consts.f_star
    elif isinstance(problem, SinusoidQuadraticProblem):
        # a lower bound on f* keeps the bound valid (RHS increasing in e0)
        e0 = problem.global_value(x0) - problem.value_lower_bound()
    else:
        raise ValueError("theorem 3 needs f* or a family with a value lower bound")
    rhs = thm3_rhs(sched, e0=e0, c=c, n=n, T=T, L=consts.L,
                   sigma_sq=consts.sigma_sq, G=consts.G)
    measured = math.fsum(agg.mean_h[:-1].tolist()) / T
    return compare(rhs, measured, True), agg


def _measure_series(agg: AggregateMetrics, measure: str) -> np.ndarray:
    return {"r": agg.mean_r, "e": agg.mean_e, "h": agg.mean_h}[measure]


def noise_floor(consts, n: int, t_max: int) -> float:
    """Stationary-noise level of the inverse-time guarantee at horizon t_max."""
    if consts.mu <= 0 or consts.sigma_bar_sq is None:
        raise ValueError("noise floor needs mu > 0 and a defined sigma_bar_sq")
    return 12.0 * consts.sigma_bar_sq / (n * consts.mu**2 * t_max)


def run_rounds_to_target(problem: Problem, spec: ExperimentSpec,
                         max_workers: int | None = None) -> list[TradeoffRow]:
    """Rounds and iterations each strategy needs to push the seed-mean error
    under the threshold; crossings count only at t=0 and communication instants."""
    if not spec.cells:
        raise ValueError("rounds-to-target needs at least one strategy cell")
    if spec.t_max is None or spec.t_max < 1:
        raise ValueError("rounds-to-target needs t_max >= 1")
    consts = problem.constants()
    if spec.measure in ("r", "e") and consts.x_star is None:
        raise ValueError(f"measure {spec.measure!r} needs a family with a minimizer")

    if spec.threshold is not None:
        threshold = spec.threshold
    elif spec.threshold_auto_factor is not None:
        if spec.measure != "r":
            raise ValueError("the auto noise-floor threshold is defined for measure 'r'")
        threshold = spec.threshold_auto_factor * noise_floor(consts, problem.n, spec.t_max)
    else:
        raise ValueError("rounds-to-target needs threshold or threshold_auto_factor")

    if spec.stepsize_policy == "inverse-time":
        if spec.beta == "auto":
            raise ValueError('rounds-to-target needs a numeric beta (shared across strategies)')
        stepsize = InverseTimeStepsize(consts.mu, float(spec.beta))
    else:
        if isinstance(spec.c, tuple):
            raise ValueError("rounds-to-target sweeps are not supported; pass one c")
        stepsize = ConstantStepsize(float(spec.c), problem.n, spec.t_max)

    rows = []
    for cell in spec.cells:
        sched, _ = cell.build(problem.n, spec.t_max)
        agg = run_many(problem, RunConfig(
            n=problem.n, schedule=sched, stepsize=stepsize,
            x0=np.zeros(problem.dim), seed=0, record_stride=spec.t_max,
            track_averages=False,
        ), spec.seeds, max_workers)
        series = _measure_series(agg, spec.measure)
        eligible = np.zeros(len(agg.t), dtype=bool)
        eligible[0] = True
        eligible |= agg.is_comm
        hit = np.flatnonzero(eligible & (series <= threshold))
        if len(hit):
            t_used = int(agg.t[hit[0]])
            r_used = int(np.searchsorted(sched.tau, t_used))
            rows.append(TradeoffRow(cell.label, r_used, t_used, True, threshold))
        else:
            rows.append(TradeoffRow(cell.label, sched.R, spec.t_max, False, threshold))
    return rows


def run_speedup_experiment(spec: ExperimentSpec,
                           max_workers: int | None = None) -> list[SpeedupRow]:
    """Error vs n at fixed T, normalized by the n=1 single-worker run.

    The problem is rebuilt from its generator spec at every n. Families with a
    minimizer are scored by seed-mean r_T, the nonconvex family by the
    time-averaged squared gradient norm.
    """
    if not spec.cells:
        raise ValueError("speedup needs at least one strategy cell")
    if 1 not in spec.n_list:
        raise ValueError("n list must include the n=1 baseline")
    if spec.T is None or spec.T < 1:
        raise ValueError("speedup needs T >= 1")
    T = spec.T

    rows: list[SpeedupRow] = []
    for cell in spec.cells:
        sweep_note: dict = {}
        c_value: float | None = None
        if spec.stepsize_policy == "constant":
            c_value, sweep_note = _resolve_c(spec, spec.problem, cell,
                                             max(spec.n_list), T, max_workers)
            if sweep_note:
                spec.notes.setdefault("sweeps", {})[cell.label] = sweep_note
        base_mean = base_se = None
        for n in spec.n_list:
            problem = problem_from_spec({**spec.problem, "n": n})
            consts = problem.constants()
            use_r = consts.x_star is not None
            sched, clamped = cell.build(n, T)
            if spec.stepsize_policy == "constant":
                stepsize = ConstantStepsize(c_value, n, T)
            else:
                if spec.beta in (None, "auto"):
                    raise ValueError("speedup with inverse-time stepsize needs numeric beta")
                stepsize = InverseTimeStepsize(consts.mu, float(spec.beta))
            agg = run_many(problem, RunConfig(
                n=n, schedule=sched, stepsize=stepsize, x0=np.zeros(problem.dim),
                seed=0, record_stride=T, track_averages=not use_r,
            ), spec.seeds, max_workers)
            if use_r:
                mean_err, se_err = float(agg.mean_r[-1]), float(agg.se_r[-1])
            else:
                mean_err, se_err = agg.mean_avg_h, agg.se_avg_h
            if n == 1:
                base_mean, base_se = mean_err, se_err
                speedup, se_speedup = 1.0, 0.0
            else:
                speedup = base_mean / mean_err
                rel = 0.0
                if base_mean > 0 and mean_err > 0:
                    rel = math.sqrt((base_se / base_mean) ** 2 + (se_err / mean_err) ** 2)
                se_speedup = speedup * rel
            rows.append(SpeedupRow(
                label=cell.label, n=n, R=sched.R, strategy=cell.kind,
                mean_error=mean_err, stderr=se_err,
                speedup=speedup, se_speedup=se_speedup, clamped=clamped,
            ))
    return rows


def run_strategy_compare(problem: Problem, spec: ExperimentSpec,
                         max_workers: int | None = None) -> dict[str, AggregateMetrics]:
    """One aggregate series per labeled schedule, shared stepsize and seeds."""
    if not spec.cells:
        raise ValueError("strategy-compare needs at least one cell")
    if spec.T is None or spec.T < 1:
        raise ValueError("strategy-compare needs T >= 1")
    consts = problem.constants()
    if spec.stepsize_policy == "inverse-time":
        if spec.beta == "auto":
            raise ValueError("strategy-compare needs a numeric beta")
        stepsize = InverseTimeStepsize(consts.mu, float(spec.beta))
    else:
        if isinstance(spec.c, tuple):
            raise ValueError("strategy-compare sweeps are not supported; pass one c")
        stepsize = ConstantStepsize(float(spec.c), problem.n, spec.T)
    out: dict[str, AggregateMetrics] = {}
    for cell in spec.cells:
        sched, _ = cell.build(problem.n, spec.T)
        out[cell.label] = run_many(problem, RunConfig(
            n=problem.n, schedule=sched, stepsize=stepsize,
            x0=np.zeros(problem.dim), seed=0, record_stride=spec.record_stride,
        ), spec.seeds, max_workers)
    return out
