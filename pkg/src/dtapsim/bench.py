"""Benchmark harness: seeded replications, significance testing, and
decision-agreement analysis.

Replications are independent episodes with consecutive seeds; every episode
must pass the reward/cycle-time consistency audit before its row is reported.
Cycle-time samples from two runs are compared with Welch's unequal-variance
t-test. Agreement measures how often two policies pick the same assignment
on decisions that offer a genuine choice (at least two feasible pairs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import t as t_distribution

from .engine import EpisodeEnd, apply_assignment, init_episode, step_until_decision
from .model import DtapInstance
from .policies import make_policy, run_episode
from .protocol import EngineConfig, run_remote_episode
from .rewards import (EPISODE_CSV_HEADER, EpisodeSummary, audit_episode_sum,
                      audit_passed, audit_tolerance)


@dataclass(frozen=True)
class ReplicationResult:
    seed: int
    policy: str
    instance: str
    horizon_hours: float
    mean_cycle_hours: float
    completed_cases: int
    total_reward: float
    cases: int
    mean_defined: bool

    @classmethod
    def from_summary(cls, summary: EpisodeSummary) -> "ReplicationResult":
        return cls(
            seed=summary.seed, policy=summary.policy, instance=summary.instance,
            horizon_hours=summary.horizon_hours,
            mean_cycle_hours=summary.mean_cycle_hours,
            completed_cases=summary.completed_cases,
            total_reward=summary.total_reward, cases=summary.cases,
            mean_defined=summary.mean_defined)

    def csv_row(self) -> str:
        return (f"{self.seed},{self.policy},{self.instance},{self.horizon_hours:g},"
                f"{self.cases},{self.mean_cycle_hours:.6f},{self.total_reward:.6f}")


class AuditFailure(RuntimeError):
    pass


def split_policy_spec(spec: str) -> tuple[str, str | None]:
    """A policy spec is a built-in name, or remote@host:port."""
    if spec.startswith("remote@"):
        return "remote", spec.split("@", 1)[1]
    return spec, None


def run_replications(instance: DtapInstance, policy_name: str, n: int,
                     horizon_hours: float | None, base_seed: int, *,
                     determinize: bool = False, auto_apply_singletons: bool = False,
                     check_invariants: bool = True,
                     endpoint: str | None = None) -> list[ReplicationResult]:
    """n audited episodes with seeds base_seed..base_seed+n-1 under one
    policy. Policy "remote" runs each episode over the wire against the
    listening agent at endpoint (one connection per episode)."""
    if n < 1:
        raise ValueError("need at least one replication")
    policy_name, spec_endpoint = split_policy_spec(policy_name)
    endpoint = endpoint or spec_endpoint
    results = []
    for seed in range(base_seed, base_seed + n):
        if policy_name == "remote":
            if not endpoint:
                raise ValueError("policy remote needs an agent endpoint")
            summary = run_remote_episode(
                instance, endpoint, seed,
                EngineConfig(horizon_hours=horizon_hours, determinize=determinize,
                             auto_apply_singletons=auto_apply_singletons,
                             check_invariants=check_invariants))
        else:
            policy = make_policy(policy_name, instance, seed)
            summary = run_episode(
                instance, policy, seed, policy_name=policy_name,
                horizon_hours=horizon_hours, determinize=determinize,
                auto_apply_singletons=auto_apply_singletons,
                check_invariants=check_invariants)
        if not audit_passed(summary):
            raise AuditFailure(
                f"episode seed={seed} policy={policy_name} failed the reward "
                f"audit: residual {audit_episode_sum(summary):.3e} exceeds "
                f"{audit_tolerance(summary):.3e}")
        results.append(ReplicationResult.from_summary(summary))
    return results


def write_results_csv(results: list[ReplicationResult], path) -> None:
    lines = [EPISODE_CSV_HEADER, *(r.csv_row() for r in results)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_results_csv(path) -> list[dict]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EPISODE_CSV_HEADER.split(","):
            raise ValueError(
                f"{path}: expected columns {EPISODE_CSV_HEADER!r}, "
                f"got {reader.fieldnames}")
        return list(reader)


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p: float
    significant: bool


def welch_t_test(sample_a, sample_b, alpha: float = 0.01) -> WelchResult:
    """Two-sided Welch test. The statistic and degrees of freedom are
    assembled directly from the sample moments; only the t-distribution tail
    probability is delegated.

    Zero-variance degenerate pairs: identical constant samples give t=0,
    p=1; differing constants give infinite |t|, p=0."""
    a = [float(x) for x in sample_a]
    b = [float(x) for x in sample_b]
    n_a, n_b = len(a), len(b)
    if n_a < 2 or n_b < 2:
        raise ValueError("both samples need at least two values")
    mean_a, mean_b = sum(a) / n_a, sum(b) / n_b
    var_a = sum((x - mean_a) ** 2 for x in a) / (n_a - 1)
    var_b = sum((x - mean_b) ** 2 for x in b) / (n_b - 1)
    sq_a, sq_b = var_a / n_a, var_b / n_b

    if sq_a + sq_b == 0.0:
        if mean_a == mean_b:
            return WelchResult(t=0.0, dof=float(n_a + n_b - 2), p=1.0,
                               significant=False)
        t_stat = math.inf if mean_a > mean_b else -math.inf
        return WelchResult(t=t_stat, dof=float(n_a + n_b - 2), p=0.0,
                           significant=0.0 < alpha)

    t_stat = (mean_a - mean_b) / math.sqrt(sq_a + sq_b)
    dof = (sq_a + sq_b) ** 2 / (sq_a ** 2 / (n_a - 1) + sq_b ** 2 / (n_b - 1))
    p = 2.0 * float(t_distribution.sf(abs(t_stat), dof))
    return WelchResult(t=t_stat, dof=dof, p=p, significant=p < alpha)


@dataclass(frozen=True)
class AgreementResult:
    """fraction is None when no qualifying decision was found; samples counts
    the decisions actually compared."""

    fraction: float | None
    samples: int
    episodes: int

    @property
    def defined(self) -> bool:
        return self.fraction is not None


def action_agreement(policy_a, policy_b, instance: DtapInstance, n_obs: int, *,
                     base_seed: int = 0, horizon_hours: float | None = None,
                     determinize: bool = False, max_episodes: int = 10_000) -> AgreementResult:
    """Fraction of multi-choice decisions where both policies agree.

    Episodes are driven by policy_a's choices; policy_b is consulted at each
    decision offering at least two pairs. Stops after n_obs samples or
    max_episodes episodes, whichever comes first."""
    if n_obs < 1:
        raise ValueError("need at least one observation")
    equal = 0
    samples = 0
    episodes = 0
    while samples < n_obs and episodes < max_episodes:
        state = init_episode(instance, base_seed + episodes,
                             horizon_hours=horizon_hours, determinize=determinize,
                             check_invariants=False)
        episodes += 1
        while True:
            outcome = step_until_decision(state, instance)
            if isinstance(outcome, EpisodeEnd):
                break
            choice_a = policy_a(outcome)
            if len(outcome.feasible) >= 2:
                choice_b = policy_b(outcome)
                samples += 1
                if choice_a.chosen == choice_b.chosen:
                    equal += 1
                if samples >= n_obs:
                    break
            apply_assignment(state, instance, choice_a.chosen)
    if samples == 0:
        return AgreementResult(fraction=None, samples=0, episodes=episodes)
    return AgreementResult(fraction=equal / samples, samples=samples,
                           episodes=episodes)


@dataclass(frozen=True)
class CrossEvalCell:
    policy: str
    instance: str
    mean_cycle_hours: float | None
    std_cycle_hours: float | None
    error: str | None = None


def cross_eval(policy_specs: list[str], instances: list[DtapInstance], n: int,
               horizon_hours: float | None, base_seed: int) -> list[CrossEvalCell]:
    """Evaluate every policy (built-in name or remote@host:port) on every
    instance; failures are recorded per cell and do not stop the sweep."""
    cells = []
    for policy_name in policy_specs:
        for instance in instances:
            try:
                results = run_replications(
                    instance, policy_name, n, horizon_hours, base_seed,
                    check_invariants=False)
                cycles = [r.mean_cycle_hours for r in results if r.mean_defined]
                if not cycles:
                    cells.append(CrossEvalCell(policy_name, instance.name, None, None,
                                               error="no cases arrived"))
                    continue
                mean = sum(cycles) / len(cycles)
                std = (math.sqrt(sum((x - mean) ** 2 for x in cycles) / (len(cycles) - 1))
                       if len(cycles) > 1 else 0.0)
                cells.append(CrossEvalCell(policy_name, instance.name, mean, std))
            except Exception as exc:  # noqa: BLE001 - per-cell fault isolation
                cells.append(CrossEvalCell(policy_name, instance.name, None, None,
                                           error=str(exc)))
    return cells


def cross_eval_csv(cells: list[CrossEvalCell]) -> str:
    """Matrix rendering: one row per instance, one column per policy."""
    policies = []
    instances = []
    for cell in cells:
        if cell.policy not in policies:
            policies.append(cell.policy)
        if cell.instance not in instances:
            instances.append(cell.instance)
    by_key = {(c.policy, c.instance): c for c in cells}
    lines = ["instance," + ",".join(policies)]
    for inst in instances:
        row = [inst]
        for pol in policies:
            cell = by_key.get((pol, inst))
            if cell is None or cell.mean_cycle_hours is None:
                row.append("error" if (cell and cell.error) else "")
            else:
                row.append(f"{cell.mean_cycle_hours:.3f}+/-{cell.std_cycle_hours:.3f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def stability_probe(instance: DtapInstance, horizons=(168.0, 336.0, 672.0), *,
                    reps: int = 10, base_seed: int = 0,
                    policy_name: str = "spt") -> list[dict]:
    """Growth check across horizons: a stable system shows roughly flat mean
    cycle times, an overloaded one grows with the horizon."""
    rows = []
    for horizon in horizons:
        results = run_replications(instance, policy_name, reps, horizon, base_seed,
                                   check_invariants=False)
        cycles = [r.mean_cycle_hours for r in results if r.mean_defined]
        open_cases = [r.cases - r.completed_cases for r in results]
        rows.append({
            "horizon_hours": horizon,
            "mean_cycle_hours": sum(cycles) / len(cycles) if cycles else 0.0,
            "mean_open_cases_at_end": sum(open_cases) / len(open_cases),
        })
    return rows
