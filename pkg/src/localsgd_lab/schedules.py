"""Communication schedules for local SGD.

A schedule splits the horizon T into R rounds of local work: H_i is the number
of local steps in round i and tau_i = H_1 + ... + H_i is the step index at
which the i-th averaging happens. Constructors cover the three strategies used
in the experiments (fixed width, increasing power law, decreasing power law)
plus the per-round admissibility checks that the convergence guarantees need.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Schedule:
    """Immutable round-length sequence with precomputed boundaries tau."""

    H: tuple[int, ...]
    tau: tuple[int, ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        H = tuple(int(h) for h in self.H)
        for i, h in enumerate(self.H):
            if int(h) != h or int(h) < 1:
                raise ValueError(f"H[{i}] = {h!r}: round lengths must be integers >= 1")
        object.__setattr__(self, "H", H)
        tau = [0]
        for h in H:
            tau.append(tau[-1] + h)
        object.__setattr__(self, "tau", tuple(tau))

    @property
    def T(self) -> int:
        return self.tau[-1]

    @property
    def R(self) -> int:
        return len(self.H)

    def round_index(self, t: int) -> int:
        return round_index(self, t)


def round_index(schedule: Schedule, t: int) -> int:
    """Index k with tau_k <= t < tau_{k+1} (0-based; k=0 is the first round)."""
    if not 0 <= t < schedule.T:
        raise ValueError(f"t = {t} outside [0, {schedule.T})")
    return bisect.bisect_right(schedule.tau, t) - 1


def fixed_schedule(T: int, R: int) -> Schedule:
    """R rounds as equal as possible; the first T mod R rounds get the extra step."""
    if R < 1 or T < R:
        raise ValueError(f"need 1 <= R <= T, got R={R}, T={T}")
    q, r = divmod(T, R)
    return Schedule(tuple([q + 1] * r + [q] * (R - r)))


def fixed_width_schedule(H: int, T: int) -> Schedule:
    """Rounds of width H until T is exhausted; the last round is truncated."""
    if H < 1 or T < 1:
        raise ValueError(f"need H >= 1 and T >= 1, got H={H}, T={T}")
    q, r = divmod(T, H)
    return Schedule(tuple([H] * q + ([r] if r else [])))


def increasing_power_schedule(a: float, s: float, T: int) -> Schedule:
    """H_i = max(1, floor(a * i**s)) for i = 1, 2, ... until the sum reaches T.

    The last round is truncated so the lengths sum to exactly T, and dropped
    if truncation leaves it empty.
    """
    if a <= 0 or s < 0 or T < 1:
        raise ValueError(f"need a > 0, s >= 0, T >= 1, got a={a}, s={s}, T={T}")
    H: list[int] = []
    total = 0
    i = 0
    while total < T:
        i += 1
        h = max(1, math.floor(a * i**s))
        H.append(h)
        total += h
    if total > T:
        H[-1] -= total - T
        if H[-1] == 0:
            H.pop()
    return Schedule(tuple(H))


def decreasing_power_schedule(p: float, R: int, T: int) -> Schedule:
    """R rounds with lengths proportional to (R - i + 1)**p, by largest remainder.

    Apportions T steps to weights w_i = (R-i+1)**p: floor the ideal shares,
    hand the leftover steps to the largest fractional parts (ties toward the
    lower index), then repair any zero-length rounds by taking steps from the
    largest rounds.
    """
    if p < 0 or R < 1 or T < R:
        raise ValueError(f"need p >= 0 and 1 <= R <= T, got p={p}, R={R}, T={T}")
    w = [(R - i) ** p for i in range(R)]
    wsum = math.fsum(w)
    ideal = [T * wi / wsum for wi in w]
    H = [math.floor(x) for x in ideal]
    left = T - sum(H)
    by_frac = sorted(range(R), key=lambda i: (-(ideal[i] - H[i]), i))
    for i in by_frac[:left]:
        H[i] += 1
    while min(H) < 1:
        H[H.index(max(H))] -= 1
        H[H.index(min(H))] += 1
    return Schedule(tuple(H))


def beta_for_increasing(a: float, s: float, mu: float, L: float) -> float:
    """Stepsize offset certified to admit H_i = floor(a * i**s) at every round.

    beta = a * ceil(24 L / mu)**s * (12 L / mu) + 1.
    """
    if a <= 0 or s < 0 or mu <= 0 or L <= 0:
        raise ValueError(f"need a > 0, s >= 0, mu > 0, L > 0, got a={a}, s={s}, mu={mu}, L={L}")
    return a * math.ceil(24 * L / mu) ** s * (12 * L / mu) + 1


@dataclass(frozen=True)
class RoundConditionReport:
    """Per-round result of the inverse-time admissibility check."""

    per_round: tuple[bool, ...]
    caps: tuple[float, ...]
    all_pass: bool


@dataclass(frozen=True)
class CapConditionReport:
    """Result of a flat cap check: every H_i must sit at or below `cap`."""

    cap: float
    max_H: int
    ok: bool


def check_thm1_condition(schedule: Schedule, mu: float, L: float, beta: float) -> RoundConditionReport:
    """Round i passes iff H_i <= mu * (beta + tau_{i-1}) / (12 L)."""
    caps = tuple(mu * (beta + schedule.tau[i]) / (12 * L) for i in range(schedule.R))
    per_round = tuple(h <= cap for h, cap in zip(schedule.H, caps))
    return RoundConditionReport(per_round, caps, all(per_round))


def check_thm2_condition(schedule: Schedule, L: float, c: float, n: int, T: int) -> CapConditionReport:
    """Every round must satisfy H_i <= sqrt(T) / (7 L c sqrt(n))."""
    cap = math.sqrt(T) / (7 * L * c * math.sqrt(n))
    max_H = max(schedule.H)
    return CapConditionReport(cap, max_H, max_H <= cap)


def check_thm3_condition(schedule: Schedule, L: float, B: float, c: float, n: int, T: int) -> CapConditionReport:
    """Every round must satisfy H_i <= sqrt(T) / (7 L B c sqrt(n))."""
    cap = math.sqrt(T) / (7 * L * B * c * math.sqrt(n))
    max_H = max(schedule.H)
    return CapConditionReport(cap, max_H, max_H <= cap)


def cubic_sum(schedule: Schedule) -> float:
    """sum_i H_i**3, the schedule cost entering the constant-stepsize bounds."""
    return math.fsum(h**3 for h in schedule.H)


def weighted_cubic_sum(schedule: Schedule, beta: float) -> float:
    """sum_i H_i**3 / (tau_{i-1} + beta), the cost entering the inverse-time bound."""
    if beta <= 0:
        raise ValueError(f"need beta > 0, got {beta}")
    return math.fsum(
        h**3 / (schedule.tau[i] + beta) for i, h in enumerate(schedule.H)
    )


def schedule_from_spec(spec: dict) -> Schedule:
    """Build a Schedule from a JSON config block.

    Accepted forms:
      {"strategy": "fixed", "T": int, "R": int}
      {"strategy": "increasing-power", "a": num, "s": num, "T": int}
      {"strategy": "decreasing-power", "p": num, "R": int, "T": int}
      {"strategy": "explicit", "H": [int, ...], "T": int (optional)}
    """
    strategy = spec.get("strategy")
    if strategy == "fixed":
        return fixed_schedule(spec["T"], spec["R"])
    if strategy == "increasing-power":
        return increasing_power_schedule(spec["a"], spec["s"], spec["T"])
    if strategy == "decreasing-power":
        return decreasing_power_schedule(spec["p"], spec["R"], spec["T"])
    if strategy == "explicit":
        sched = Schedule(tuple(spec["H"]))
        if "T" in spec and sched.T != spec["T"]:
            raise ValueError(
                f"explicit H sums to {sched.T}, violating sum(H) == T with T={spec['T']}"
            )
        return sched
    raise ValueError(f"unknown schedule strategy {strategy!r}")
