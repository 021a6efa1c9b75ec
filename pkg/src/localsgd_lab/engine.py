"""Deterministic local SGD simulation engine.

Runs n agents for T steps: each step every agent takes a local stochastic
gradient step, and whenever t+1 is a communication instant tau_i all states
are replaced by their average. Gradient noise at step t comes from a
counter-based generator keyed by (seed, t), with agent i reading row i of the
step's noise block, so trajectories are bit-identical regardless of schedule,
recording stride, thread count, or execution order.

Recorded series (sampled at t = 0, multiples of record_stride, every
communication instant, and t = T):

  r_t  = ||xbar_t - x*||^2          (NaN when the family has no x*)
  e_t  = f(xbar_t) - f*             (NaN likewise)
  V_t  = (1/n) sum_i ||x_i - xbar||^2
  h_t  = ||grad f(xbar_t)||^2
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import Problem
from .schedules import Schedule


@dataclass(frozen=True)
class InverseTimeStepsize:
    """eta_t = 2 / (mu * (beta + t))."""

    mu: float
    beta: float

    def __post_init__(self):
        if self.mu <= 0 or self.beta <= 0:
            raise ValueError(f"need mu > 0 and beta > 0, got mu={self.mu}, beta={self.beta}")

    def at(self, t: int) -> float:
        return 2.0 / (self.mu * (self.beta + t))


@dataclass(frozen=True)
class ConstantStepsize:
    """eta = c * sqrt(n / T) for the whole horizon."""

    c: float
    n: int
    T: int

    def __post_init__(self):
        if self.c <= 0 or self.n < 1 or self.T < 1:
            raise ValueError(f"need c > 0, n >= 1, T >= 1, got c={self.c}, n={self.n}, T={self.T}")

    def at(self, t: int) -> float:
        return self.c * math.sqrt(self.n / self.T)


StepsizePolicy = InverseTimeStepsize | ConstantStepsize


class _StepNoise:
    """Philox generator rekeyed per step.

    at_step(t) yields the same stream as Generator(Philox(key=[seed, t])) but
    reuses one bit generator; rekeying resets the counter and draw buffer.
    """

    def __init__(self, seed: int):
        key = np.zeros(2, dtype=np.uint64)
        key[0] = np.uint64(seed)
        self._bg = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bg)
        self._state = self._bg.state
        self._key = self._state["state"]["key"]
        self._counter = self._state["state"]["counter"]

    def at_step(self, t: int) -> np.random.Generator:
        self._key[1] = t
        self._counter[:] = 0
        self._state["buffer_pos"] = 4
        self._state["has_uint32"] = 0
        self._state["uinteger"] = 0
        self._bg.state = self._state
        return self._gen


def noise_generator(seed: int, t: int) -> np.random.Generator:
    """Reference generator for the (seed, t) noise block; used by tests."""
    key = np.zeros(2, dtype=np.uint64)
    key[0] = np.uint64(seed)
    key[1] = np.uint64(t)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class RunConfig:
    n: int
    schedule: Schedule
    stepsize: StepsizePolicy
    x0: np.ndarray
    seed: int
    record_stride: int = 1
    track_averages: bool = True

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.ndim != 1 or not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be a finite 1-D vector")
        object.__setattr__(self, "x0", x0)
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if self.record_stride < 1:
            raise ValueError(f"need record_stride >= 1, got {self.record_stride}")
        if self.seed < 0:
            raise ValueError(f"need seed >= 0, got {self.seed}")
        if self.schedule.T < 1:
            raise ValueError("schedule must cover at least one step")


@dataclass(eq=False)
class RunMetrics:
    """Sampled trajectory of one seeded run.

    dist_sq and ref_sq are diagnostics for the averaging identity
    (1/n) sum_i ||x_i - ref||^2 = V + ||xbar - ref||^2 with ref = x* when the
    family has one, else the origin.
    """

    seed: int
    t: np.ndarray
    r: np.ndarray
    e: np.ndarray
    V: np.ndarray
    h: np.ndarray
    dist_sq: np.ndarray
    ref_sq: np.ndarray
    is_comm: np.ndarray
    final_x_bar: np.ndarray
    rounds_used: int
    avg_e: float
    avg_h: float
    wall_time: float


@dataclass(eq=False)
class AggregateMetrics:
    """Seed-averaged series; stderr uses ddof=1 (0 when only one seed)."""

    t: np.ndarray
    is_comm: np.ndarray
    mean_r: np.ndarray
    se_r: np.ndarray
    mean_e: np.ndarray
    se_e: np.ndarray
    mean_V: np.ndarray
    se_V: np.ndarray
    mean_h: np.ndarray
    se_h: np.ndarray
    mean_avg_e: float
    se_avg_e: float
    mean_avg_h: float
    se_avg_h: float
    n_seeds: int
    seeds: tuple = field(default_factory=tuple)
    runs: tuple = field(default_factory=tuple)  # per-seed RunMetrics, ascending seed


class _Kahan:
    """Compensated scalar accumulator."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, v: float):
        y = v - self.c
        t = self.s + y
        self.c = (t - self.s) - y
        self.s = t


def run_local_sgd(problem: Problem, config: RunConfig) -> RunMetrics:
    """Simulate one seeded local SGD run and sample its metrics."""
    if config.n != problem.n:
        raise ValueError(f"config.n = {config.n} but problem has n = {problem.n}")
    if config.x0.shape != (problem.dim,):
        raise ValueError(f"x0 has shape {config.x0.shape}, expected ({problem.dim},)")
    sched = config.schedule
    T = sched.T
    n = problem.n

    consts = problem.constants()
    x_star = consts.x_star
    f_star = consts.f_star
    have_star = x_star is not None
    ref = x_star if have_star else np.zeros(problem.dim)

    comm_at = np.zeros(T + 1, dtype=bool)
    comm_at[np.asarray(sched.tau[1:], dtype=np.int64)] = True
    record_at = np.zeros(T + 1, dtype=bool)
    record_at[:: config.record_stride] = True
    record_at[0] = record_at[T] = True
    record_at |= comm_at
    n_rec = int(record_at.sum())

    rec_t = np.zeros(n_rec, dtype=np.int64)
    rec = {k: np.full(n_rec, np.nan) for k in ("r", "e", "V", "h", "dist_sq", "ref_sq")}
    rec_comm = np.zeros(n_rec, dtype=bool)

    X = np.tile(config.x0, (n, 1))
    noise = _StepNoise(config.seed) if problem.has_gradient_noise else None
    grads = problem.stochastic_grads
    eta_at = config.stepsize.at
    value = problem._global_value
    grad = problem._global_grad

    sum_e, sum_h = _Kahan(), _Kahan()
    track = config.track_averages

    idx = 0

    def record(t: int):
        nonlocal idx
        xbar = X.mean(axis=0)
        diff = X - xbar
        V = float(np.einsum("ij,ij->", diff, diff)) / n
        dref = X - ref
        dist_sq = float(np.einsum("ij,ij->", dref, dref)) / n
        rv = xbar - ref
        ref_sq = float(rv @ rv)
        g = grad(xbar)
        rec_t[idx] = t
        rec["V"][idx] = V
        rec["h"][idx] = float(g @ g)
        rec["dist_sq"][idx] = dist_sq
        rec["ref_sq"][idx] = ref_sq
        if have_star:
            rec["r"][idx] = ref_sq
            rec["e"][idx] = value(xbar) - f_star
        rec_comm[idx] = bool(comm_at[t])
        idx += 1

    wall = time.perf_counter()
    record(0)
    for t in range(T):
        if track:
            xbar = X.mean(axis=0)
            g = grad(xbar)
            sum_h.add(float(g @ g))
            if have_star:
                sum_e.add(value(xbar) - f_star)
        rng = noise.at_step(t) if noise is not None else None
        G = grads(X, rng)
        G *= eta_at(t)
        X -= G
        if comm_at[t + 1]:
            X[:] = X.mean(axis=0)
        if record_at[t + 1]:
            record(t + 1)
    wall = time.perf_counter() - wall

    avg_e = sum_e.s / T if (track and have_star) else math.nan
    avg_h = sum_h.s / T if track else math.nan
    return RunMetrics(
        seed=config.seed,
        t=rec_t,
        r=rec["r"],
        e=rec["e"],
        V=rec["V"],
        h=rec["h"],
        dist_sq=rec["dist_sq"],
        ref_sq=rec["ref_sq"],
        is_comm=rec_comm,
        final_x_bar=X.mean(axis=0),
        rounds_used=sched.R,
        avg_e=avg_e,
        avg_h=avg_h,
        wall_time=wall,
    )


def _worker_count(max_workers: int | None) -> int:
    env = os.environ.get("LOCALSGD_THREADS")
    cap = int(env) if env else None
    if cap is not None and cap < 1:
        raise ValueError(f"LOCALSGD_THREADS must be >= 1, got {env!r}")
    workers = max_workers or cap or min(8, os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def run_batch(problem: Problem, config: RunConfig, seeds, max_workers: int | None = None) -> list[RunMetrics]:
    """Run one seed per entry of `seeds`, in input order.

    Seed batches execute on a thread pool (capped by LOCALSGD_THREADS); the
    per-run trajectories do not depend on the pool size.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    problem.constants()  # materialize once, not per thread
    configs = [replace(config, seed=s) for s in seeds]
    workers = _worker_count(max_workers)
    if workers == 1 or len(seeds) == 1:
        return [run_local_sgd(problem, c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: run_local_sgd(problem, c), configs))


def _mean_se(columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and standard errors via compensated summation, (S, K) -> (K,), (K,)."""
    S, K = columns.shape
    mean = np.empty(K)
    se = np.zeros(K)
    for k in range(K):
        col = columns[:, k].tolist()
        mean[k] = math.fsum(col) / S
        if S > 1:
            var = math.fsum((v - mean[k]) ** 2 for v in col) / (S - 1)
            se[k] = math.sqrt(var / S)
    return mean, se


def run_many(problem: Problem, config: RunConfig, seeds, max_workers: int | None = None) -> AggregateMetrics:
    """Seed-averaged metrics; reduction happens in ascending-seed order so the
    result is independent of scheduling and completion order."""
    runs = run_batch(problem, config, seeds, max_workers)
    order = np.argsort([m.seed for m in runs], kind="stable")
    runs = [runs[i] for i in order]
    base = runs[0]
    series = {}
    for name in ("r", "e", "V", "h"):
        stacked = np.stack([getattr(m, name) for m in runs])
        series[name] = _mean_se(stacked)
    scalars = {}
    for name in ("avg_e", "avg_h"):
        col = np.array([[getattr(m, name)] for m in runs])
        m, s = _mean_se(col)
        scalars[name] = (float(m[0]), float(s[0]))
    return AggregateMetrics(
        t=base.t.copy(),
        is_comm=base.is_comm.copy(),
        mean_r=series["r"][0], se_r=series["r"][1],
        mean_e=series["e"][0], se_e=series["e"][1],
        mean_V=series["V"][0], se_V=series["V"][1],
        mean_h=series["h"][0], se_h=series["h"][1],
        mean_avg_e=scalars["avg_e"][0], se_avg_e=scalars["avg_e"][1],
        mean_avg_h=scalars["avg_h"][0], se_avg_h=scalars["avg_h"][1],
        n_seeds=len(runs),
        seeds=tuple(m.seed for m in runs),
        runs=tuple(runs),
    )
