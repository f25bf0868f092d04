"""Dispatching policies and the policy-driven episode loop.

A policy maps a DecisionPoint to one feasible pair. Built-in baselines:
uniform random, oldest-case-first, and shortest expected processing time.
Tie-breaks are fixed (lowest ids, lexicographic pairs) so that runs are
reproducible and policies can be compared decision by decision.

Note the engine itself already serves the oldest waiting case within the
chosen label; the oldest-case-first policy here additionally chooses which
label (and resource) to serve by case age.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (DecisionPoint, EpisodeEnd, apply_assignment, init_episode,
                     step_until_decision)
from .model import DtapInstance
from .rewards import EpisodeSummary, finalize_episode


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyDecision:
    chosen: tuple[int, int]
    node_index: int
    rationale_tag: str = ""


def random_policy(decision: DecisionPoint, rng: np.random.Generator) -> PolicyDecision:
    """Uniform over the feasible pairs."""
    if not decision.feasible:
        raise PolicyError("no feasible assignment to choose from")
    i = int(rng.integers(len(decision.feasible)))
    return PolicyDecision(chosen=decision.feasible[i],
                          node_index=decision.node_indices[i],
                          rationale_tag="uniform")


def fifo_policy(decision: DecisionPoint) -> PolicyDecision:
    """Serve the label whose oldest waiting case arrived first (ties by
    lowest case id), with that label's lowest-id feasible resource."""
    if not decision.feasible:
        raise PolicyError("no feasible assignment to choose from")
    queues = decision.state.label_queues
    best = None
    for i, (label_id, resource_id) in enumerate(decision.feasible):
        arrival, case_id = queues[label_id][0]
        key = (arrival, case_id, resource_id)
        if best is None or key < best[0]:
            best = (key, i)
    i = best[1]
    return PolicyDecision(chosen=decision.feasible[i],
                          node_index=decision.node_indices[i],
                          rationale_tag="oldest case")


def spt_policy(decision: DecisionPoint, instance: DtapInstance) -> PolicyDecision:
    """Feasible pair with the smallest mean completion time, ties broken by
    (label id, resource id)."""
    if not decision.feasible:
        raise PolicyError("no feasible assignment to choose from")
    best = None
    for i, pair in enumerate(decision.feasible):
        key = (instance.completion[pair].mean, pair)
        if best is None or key < best[0]:
            best = (key, i)
    i = best[1]
    return PolicyDecision(chosen=decision.feasible[i],
                          node_index=decision.node_indices[i],
                          rationale_tag="min mean completion")


BUILTIN_POLICIES = ("random", "fifo", "spt")

# Offset mixed into the policy RNG stream so policy draws never collide with
# the engine's own stream for the same seed.
_POLICY_STREAM = 0x9E3779B9


def make_policy(name: str, instance: DtapInstance, seed: int = 0):
    """Bind a named policy to an instance and seed; returns a callable
    DecisionPoint -> PolicyDecision."""
    if name == "random":
        rng = np.random.default_rng([seed, _POLICY_STREAM])
        return lambda decision: random_policy(decision, rng)
    if name == "fifo":
        return fifo_policy
    if name == "spt":
        return lambda decision: spt_policy(decision, instance)
    raise PolicyError(f"unknown policy {name!r} (expected one of {BUILTIN_POLICIES})")


def run_episode(instance: DtapInstance, policy, seed: int, *,
                policy_name: str = "", horizon_hours: float | None = None,
                determinize: bool = False, auto_apply_singletons: bool = False,
                check_invariants: bool = True, record_trace: bool = False,
                record_event_log: bool = False, state_out: list | None = None,
                on_decision=None) -> EpisodeSummary:
    """Run one complete episode under a policy and return its summary.

    on_decision, when given, observes every surfaced DecisionPoint and the
    policy's choice. state_out, when given, receives the final SimState (for
    trace and event-log extraction)."""
    state = init_episode(
        instance, seed, horizon_hours=horizon_hours, determinize=determinize,
        check_invariants=check_invariants, record_trace=record_trace,
        record_event_log=record_event_log)
    while True:
        outcome = step_until_decision(state, instance,
                                      auto_apply_singletons=auto_apply_singletons)
        if isinstance(outcome, EpisodeEnd):
            break
        choice = policy(outcome)
        if on_decision is not None:
            on_decision(outcome, choice)
        apply_assignment(state, instance, choice.chosen)
    summary = finalize_episode(state.ledger, state.open_case_arrivals(), state.end_time)
    summary.seed = seed
    summary.policy = policy_name
    summary.instance = instance.name
    summary.horizon_hours = state.horizon_hours
    if state_out is not None:
        state_out.append(state)
    return summary
