"""PPO training loop over the wire protocol.

Rewards arrive attached to messages: the reward on an observation pays for
the action that preceded it, the first observation of an episode carries
unactionable pre-decision mass, and the end summary's final_reward pays for
the last action. Delivered rewards plus final_reward always telescope to the
episode's total_reward, which run_episode exposes so callers can verify the
bookkeeping end to end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .client import ProtocolError, SimulatorClient
from .graphs import GraphBatch, GraphObs, obs_from_payload
from .networks import (PolicyNetwork, ValueNetwork, greedy_action,
                       policy_forward, sample_action, value_forward)


@dataclass
class AgentConfig:
    embedding_dim: int = 16
    learning_rate: float = 3e-4
    clip_ratio: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    rollout_steps: int = 512
    minibatch_size: int = 128
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be at least 1")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be at least 1")


def run_episode(client: SimulatorClient, policy: PolicyNetwork,
                seed: int | None = None, greedy: bool = True
                ) -> tuple[dict, float, int]:
    """One full episode; returns (summary, sum of every reward field
    received including final_reward, decision count)."""
    reply = client.reset(seed)
    collected = 0.0
    steps = 0
    while reply["type"] == "obs":
        collected += reply["reward"]
        obs = obs_from_payload(reply["obs"], reply["reward"])
        if greedy:
            index = greedy_action(policy, obs)
        else:
            index, _ = sample_action(policy, obs)
        reply = client.act(index)
        steps += 1
    summary = reply["summary"]
    collected += summary["final_reward"]
    return summary, collected, steps


@dataclass
class Rollout:
    observations: list[GraphObs]
    actions: torch.Tensor
    log_probs: torch.Tensor
    values: torch.Tensor
    rewards: torch.Tensor
    dones: torch.Tensor
    bootstrap_value: float
    episodes_finished: int


def compute_advantages(rollout: Rollout, discount: float,
                       gae_lambda: float) -> tuple[torch.Tensor, torch.Tensor]:
    n = len(rollout.actions)
    advantages = torch.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        if rollout.dones[t]:
            next_value = 0.0
            running = 0.0
        elif t + 1 < n:
            next_value = float(rollout.values[t + 1])
        else:
            next_value = rollout.bootstrap_value
        delta = float(rollout.rewards[t]) + discount * next_value \
            - float(rollout.values[t])
        running = delta + discount * gae_lambda * running
        advantages[t] = running
    returns = advantages + rollout.values
    return advantages, returns


class Trainer:
    def __init__(self, endpoint: str, config: AgentConfig, out_dir):
        torch.manual_seed(config.seed)
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.policy = PolicyNetwork(config.embedding_dim)
        self.value = ValueNetwork(config.embedding_dim)
        self.optimizer = torch.optim.Adam(
            [*self.policy.parameters(), *self.value.parameters()],
            lr=config.learning_rate)
        self.client = SimulatorClient(endpoint)
        self._pending: GraphObs | None = None
        self.steps_collected = 0
        self.updates_done = 0

    def close(self) -> None:
        try:
            self._drain_pending()
            self.client.stop()
        except (ProtocolError, OSError):
            pass
        self.client.close()

    def _drain_pending(self) -> None:
        # a rollout can stop mid-episode, leaving the server waiting for
        # an act; finish the episode greedily so reset is legal again
        obs = self._pending
        self._pending = None
        with torch.no_grad():
            while obs is not None:
                reply = self.client.act(greedy_action(self.policy, obs))
                if reply["type"] == "end":
                    return
                obs = obs_from_payload(reply["obs"], reply["reward"])

    def _next_obs(self) -> GraphObs:
        while self._pending is None:
            reply = self.client.reset()
            if reply["type"] == "obs":
                self._pending = obs_from_payload(reply["obs"], reply["reward"])
        return self._pending

    def collect_rollout(self) -> Rollout:
        observations: list[GraphObs] = []
        actions, log_probs, values, rewards, dones = [], [], [], [], []
        episodes = 0
        with torch.no_grad():
            for _ in range(self.config.rollout_steps):
                obs = self._next_obs()
                index, log_prob = sample_action(self.policy, obs)
                observations.append(obs)
                actions.append(index)
                log_probs.append(log_prob)
                values.append(float(value_forward(self.value, obs)))

                reply = self.client.act(index)
                if reply["type"] == "obs":
                    rewards.append(float(reply["reward"]))
                    dones.append(False)
                    self._pending = obs_from_payload(reply["obs"],
                                                     reply["reward"])
                else:
                    rewards.append(float(reply["summary"]["final_reward"]))
                    dones.append(True)
                    self._pending = None
                    episodes += 1
            bootstrap = (float(value_forward(self.value, self._pending))
                         if self._pending is not None else 0.0)
        self.steps_collected += len(actions)
        return Rollout(
            observations=observations,
            actions=torch.tensor(actions, dtype=torch.long),
            log_probs=torch.tensor(log_probs, dtype=torch.float32),
            values=torch.tensor(values, dtype=torch.float32),
            rewards=torch.tensor(rewards, dtype=torch.float32),
            dones=torch.tensor(dones, dtype=torch.bool),
            bootstrap_value=bootstrap,
            episodes_finished=episodes)

    def update(self, rollout: Rollout) -> dict:
        cfg = self.config
        advantages, returns = compute_advantages(rollout, cfg.discount,
                                                 cfg.gae_lambda)
        advantages = (advantages - advantages.mean()) / \
            (advantages.std() + 1e-8)
        batch = GraphBatch.from_obs(rollout.observations)
        n = len(batch)
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        passes = 0
        for _ in range(cfg.epochs):
            order = torch.randperm(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start:start + cfg.minibatch_size]
                sub = batch.select(idx)
                log_prob_table = self.policy(sub)
                new_log_probs = log_prob_table.gather(
                    1, rollout.actions[idx].unsqueeze(1)).squeeze(1)
                ratio = torch.exp(new_log_probs - rollout.log_probs[idx])
                adv = advantages[idx]
                clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio,
                                      1.0 + cfg.clip_ratio)
                policy_loss = -torch.min(ratio * adv, clipped * adv).mean()
                value_loss = (self.value(sub) - returns[idx]).pow(2).mean()
                entropy = torch.distributions.Categorical(
                    logits=log_prob_table).entropy().mean()
                loss = policy_loss + cfg.value_coef * value_loss \
                    - cfg.entropy_coef * entropy

                self.optimizer.zero_grad()
                loss.backward()
                for param in (*self.policy.parameters(),
                              *self.value.parameters()):
                    if param.grad is not None and \
                            not torch.isfinite(param.grad).all():
                        raise RuntimeError("non-finite gradient in update")
                nn.utils.clip_grad_norm_(
                    [*self.policy.parameters(), *self.value.parameters()],
                    cfg.max_grad_norm)
                self.optimizer.step()

                stats["policy_loss"] += float(policy_loss.detach())
                stats["value_loss"] += float(value_loss.detach())
                stats["entropy"] += float(entropy.detach())
                passes += 1
        self.updates_done += 1
        return {key: val / passes for key, val in stats.items()}

    def evaluate(self, episodes: int, seed_base: int) -> float:
        self._drain_pending()
        cycles = []
        for i in range(episodes):
            summary, _, _ = run_episode(self.client, self.policy,
                                        seed=seed_base + i, greedy=True)
            cycles.append(summary["mean_cycle_h"])
        return sum(cycles) / len(cycles)

    def save_checkpoint(self, path, mean_eval_cycle: float | None = None) -> None:
        torch.save({
            "policy": self.policy.state_dict(),
            "value": self.value.state_dict(),
            "config": asdict(self.config),
            "update": self.updates_done,
            "mean_eval_cycle": mean_eval_cycle,
        }, path)

    def train(self, updates: int, eval_every: int = 5, eval_episodes: int = 10,
              eval_seed_base: int = 10_000) -> list[dict]:
        """Runs PPO for the given number of updates, tracking the greedy
        policy on held-out seeds. Writes curve.csv, best.pt, and last.pt in
        out_dir; a dropped connection still leaves last.pt behind."""
        history: list[dict] = []
        best = math.inf

        def record() -> None:
            nonlocal best
            mean_cycle = self.evaluate(eval_episodes, eval_seed_base)
            history.append({"update": self.updates_done,
                            "steps": self.steps_collected,
                            "mean_eval_cycle": mean_cycle})
            self._write_curve(history)
            if mean_cycle < best:
                best = mean_cycle
                self.save_checkpoint(self.out_dir / "best.pt", mean_cycle)

        try:
            record()
            for _ in range(updates):
                rollout = self.collect_rollout()
                self.update(rollout)
                due = self.updates_done % eval_every == 0 \
                    or self.updates_done == updates
                if due:
                    record()
        except (ProtocolError, OSError):
            self.save_checkpoint(self.out_dir / "last.pt",
                                 history[-1]["mean_eval_cycle"] if history
                                 else None)
            raise
        self.save_checkpoint(self.out_dir / "last.pt",
                             history[-1]["mean_eval_cycle"])
        return history

    def _write_curve(self, history: list[dict]) -> None:
        with open(self.out_dir / "curve.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["update", "steps", "mean_eval_cycle"])
            writer.writeheader()
            writer.writerows(history)


def load_checkpoint(path) -> tuple[PolicyNetwork, ValueNetwork, dict]:
    payload = torch.load(path, weights_only=True)
    config = payload["config"]
    policy = PolicyNetwork(config["embedding_dim"])
    value = ValueNetwork(config["embedding_dim"])
    policy.load_state_dict(payload["policy"])
    value.load_state_dict(payload["value"])
    policy.eval()
    value.eval()
    return policy, value, payload


def evaluate_checkpoint(endpoint: str, path, episodes: int,
                        seed_base: int = 10_000, greedy: bool = True
                        ) -> list[dict]:
    policy, _, _ = load_checkpoint(path)
    summaries = []
    with SimulatorClient(endpoint) as client:
        for i in range(episodes):
            summary, _, _ = run_episode(client, policy, seed=seed_base + i,
                                        greedy=greedy)
            summaries.append(summary)
    return summaries
