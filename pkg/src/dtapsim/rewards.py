"""Reward accounting for assignment episodes.

The cost signal is the negative area under the open-case count curve: between
consecutive decisions, every case that has arrived and not yet completed
accrues cost at rate 1 per hour. Summed over an episode (with uncompleted
cases charged up to the episode end), the rewards equal the negative sum of
all case cycle times. That identity is checked after every episode through
two independent accumulators, the area integral and per-case timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RewardLedger:
    """Piecewise-constant open-case count plus per-decision and per-case tallies.

    segments stores (time, count) change points only; stretches where the
    count is unchanged are spanned by the open segment.
    """

    segments: list[tuple[float, int]] = field(default_factory=list)
    pending_area: float = 0.0
    per_decision_rewards: list[float] = field(default_factory=list)
    per_case_cycle: dict[int, float] = field(default_factory=dict)
    _last_time: float = 0.0
    _last_count: int = 0
    _finalized: bool = False

    def __post_init__(self):
        if not self.segments:
            self.segments.append((0.0, 0))


def record_transition(ledger: RewardLedger, tau: float, case_count: int) -> None:
    """Close the open segment at tau and open a new one with case_count."""
    if tau < ledger._last_time:
        raise ValueError(f"time regression: {tau} < {ledger._last_time}")
    ledger.pending_area += ledger._last_count * (tau - ledger._last_time)
    if case_count != ledger._last_count:
        ledger.segments.append((tau, case_count))
    ledger._last_time = tau
    ledger._last_count = case_count


def reward_for_decision(ledger: RewardLedger) -> float:
    """Reward of the decision that just occurred: minus the area accrued
    since the previous decision (or episode start). Resets the accumulator."""
    r = -ledger.pending_area
    ledger.pending_area = 0.0
    ledger.per_decision_rewards.append(r)
    return r


def record_case_cycle(ledger: RewardLedger, case_id: int, cycle_hours: float) -> None:
    if case_id in ledger.per_case_cycle:
        raise ValueError(f"case {case_id} already has a recorded cycle time")
    ledger.per_case_cycle[case_id] = cycle_hours


@dataclass
class EpisodeSummary:
    """Outcome of one finished episode.

    cases counts every case that arrived; mean_cycle_hours is 0 with
    mean_defined False when none did. total_reward includes the final
    truncation reward charged for cases still open at the episode end.
    """

    cases: int
    mean_cycle_hours: float
    total_reward: float
    truncation_reward: float
    cycle_times: dict[int, float]
    mean_defined: bool
    end_time: float
    decisions: int
    completed_cases: int
    # Run metadata, filled by the caller that owns seed and policy choice.
    seed: int = 0
    policy: str = ""
    instance: str = ""
    horizon_hours: float = 0.0

    def csv_row(self) -> str:
        return (f"{self.seed},{self.policy},{self.instance},{self.horizon_hours:g},"
                f"{self.cases},{self.mean_cycle_hours:.6f},{self.total_reward:.6f}")


EPISODE_CSV_HEADER = "seed,policy,instance,horizon_h,cases,mean_cycle_h,total_reward"


def finalize_episode(ledger: RewardLedger, open_case_arrivals: dict[int, float],
                     tau_end: float) -> EpisodeSummary:
    """Close the ledger at tau_end.

    open_case_arrivals maps still-open case ids to their arrival times; each
    is charged a truncated cycle of tau_end minus arrival. The area accrued
    since the last decision becomes a final truncation reward so the episode
    sum stays equal to the negative sum of cycle times.
    """
    if ledger._finalized:
        raise ValueError("ledger already finalized")
    record_transition(ledger, tau_end, 0)
    truncation = reward_for_decision(ledger)
    completed = len(ledger.per_case_cycle)
    for case_id, arrival in open_case_arrivals.items():
        record_case_cycle(ledger, case_id, tau_end - arrival)
    ledger._finalized = True

    cycles = dict(ledger.per_case_cycle)
    n = len(cycles)
    mean_defined = n > 0
    return EpisodeSummary(
        cases=n,
        mean_cycle_hours=(sum(cycles.values()) / n) if mean_defined else 0.0,
        total_reward=sum(ledger.per_decision_rewards),
        truncation_reward=truncation,
        cycle_times=cycles,
        mean_defined=mean_defined,
        end_time=tau_end,
        decisions=len(ledger.per_decision_rewards) - 1,
        completed_cases=completed,
    )


def audit_episode_sum(summary: EpisodeSummary) -> float:
    """Residual between the two accounting paths, |sum of rewards + sum of cycles|.

    The paths are independent: rewards integrate the case-count curve, cycles
    come from arrival and completion timestamps. Zero up to rounding iff the
    bookkeeping is consistent."""
    return abs(summary.total_reward + sum(summary.cycle_times.values()))


def audit_tolerance(summary: EpisodeSummary) -> float:
    return 1e-9 * max(1.0, sum(summary.cycle_times.values()))


def audit_passed(summary: EpisodeSummary) -> bool:
    return audit_episode_sum(summary) <= audit_tolerance(summary)
