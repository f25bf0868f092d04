"""Desk-scale training run and the bars it must clear.

One seeded PPO run on a small two-label shop where three slow generalists
compete with two fast specialists. The greedy policy it learns has to beat
random assignment decisively, land within ten percent of the
shortest-processing-time rule, and never sample a blocked action, all
inside a thirty-minute wall budget. The run itself takes a couple of
minutes on a laptop-class CPU.

Baselines are measured through the simulator CLI at the exact evaluation
configuration (determinized durations, singleton decisions auto-applied,
the same twenty held-out seeds), so every number in the comparison comes
from the same environment the agent saw.
"""

import csv
import math
import subprocess
import sys
import time
from statistics import fmean

import pytest
import torch
from scipy import stats

from conftest import _spawn_server
from gnnagent.client import SimulatorClient
from gnnagent.graphs import obs_from_payload
from gnnagent.networks import policy_forward, sample_action
from gnnagent.ppo import (AgentConfig, Rollout, Trainer, compute_advantages,
                          evaluate_checkpoint, load_checkpoint)

TRAIN_UPDATES = 15
EVAL_EVERY = 5
EVAL_EPISODES = 10
EVAL_SEED_BASE = 10_000
CRITERION_EPISODES = 20
SPT_HEADROOM = 1.10
WELCH_ALPHA = 1e-2
WALL_BUDGET_S = 1800.0
MASK_SAMPLES = 100_000


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    # dedicated server so the auto-seeded training episodes do not depend
    # on how many seedless resets earlier tests consumed
    proc, endpoint = _spawn_server(data_dir / "desk.json")
    out_dir = tmp_path_factory.mktemp("desk_run")
    trainer = Trainer(endpoint, AgentConfig(seed=0), out_dir)
    started = time.monotonic()
    try:
        history = trainer.train(TRAIN_UPDATES, eval_every=EVAL_EVERY,
                                eval_episodes=EVAL_EPISODES,
                                eval_seed_base=EVAL_SEED_BASE)
    finally:
        trainer.close()
        proc.terminate()
        proc.wait(timeout=10)
    elapsed = time.monotonic() - started
    return {"history": history, "out_dir": out_dir, "elapsed": elapsed}


def baseline_cycles(instance_path, policy: str, out_dir) -> list[float]:
    out = out_dir / f"{policy}.csv"
    subprocess.run(
        [sys.executable, "-m", "dtapsim.cli", "run",
         "--instance", str(instance_path), "--policy", policy,
         "--seed", str(EVAL_SEED_BASE),
         "--replications", str(CRITERION_EPISODES),
         "--determinize", "--auto-apply-singletons", "on",
         "--out", str(out)],
        check=True, capture_output=True, timeout=300)
    with open(out, newline="", encoding="utf-8") as fh:
        return [float(row["mean_cycle_h"]) for row in csv.DictReader(fh)]


class TestLearningCriteria:
    def test_beats_random_and_tracks_spt(self, trained, desk_endpoint,
                                         data_dir, tmp_path):
        summaries = evaluate_checkpoint(
            desk_endpoint, trained["out_dir"] / "best.pt",
            CRITERION_EPISODES, seed_base=EVAL_SEED_BASE)
        trained_cycles = [s["mean_cycle_h"] for s in summaries]
        spt_cycles = baseline_cycles(data_dir / "desk.json", "spt", tmp_path)
        random_cycles = baseline_cycles(data_dir / "desk.json", "random",
                                        tmp_path)
        assert len(trained_cycles) == len(spt_cycles) == len(random_cycles) \
            == CRITERION_EPISODES

        result = stats.ttest_ind(trained_cycles, random_cycles,
                                 equal_var=False)
        beats_random = result.statistic < 0 and result.pvalue < WELCH_ALPHA
        trained_mean = fmean(trained_cycles)
        spt_bar = SPT_HEADROOM * fmean(spt_cycles)
        print(f"trained vs random: t={result.statistic:.2f} "
              f"p={result.pvalue:.3g} "
              f"{'PASS' if beats_random else 'FAIL'}")
        print(f"trained {trained_mean:.4f} h vs {SPT_HEADROOM:.2f}x spt "
              f"{spt_bar:.4f} h "
              f"{'PASS' if trained_mean <= spt_bar else 'FAIL'}")
        assert beats_random
        assert trained_mean <= spt_bar

    def test_run_fits_the_wall_budget(self, trained):
        print(f"training wall time {trained['elapsed']:.1f} s "
              f"of {WALL_BUDGET_S:.0f} s budget")
        assert trained["elapsed"] < WALL_BUDGET_S


class TestTrainedMasking:
    def test_hundred_thousand_trained_samples_stay_selectable(
            self, trained, desk_endpoint):
        policy, _, _ = load_checkpoint(trained["out_dir"] / "best.pt")
        observations = []
        with SimulatorClient(desk_endpoint) as client:
            reply = client.reset(seed=31_000)
            while reply["type"] == "obs":
                obs = obs_from_payload(reply["obs"], reply["reward"])
                observations.append(obs)
                index, _ = sample_action(policy, obs)
                reply = client.act(index)
        assert observations
        # vacuous unless some node is actually blocked somewhere
        assert any(not obs.mask.all() for obs in observations)

        per_obs = math.ceil(MASK_SAMPLES / len(observations))
        drawn = 0
        with torch.no_grad():
            for obs in observations:
                dist = torch.distributions.Categorical(
                    logits=policy_forward(policy, obs))
                samples = dist.sample((per_obs,))
                assert obs.mask[samples].all()
                drawn += per_obs
        assert drawn >= MASK_SAMPLES


class TestLearningCurve:
    def test_curve_records_every_evaluation(self, trained):
        with open(trained["out_dir"] / "curve.csv", newline="",
                  encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == ["update", "steps",
                                         "mean_eval_cycle"]
            rows = list(reader)
        updates = [int(row["update"]) for row in rows]
        steps = [int(row["steps"]) for row in rows]
        cycles = [float(row["mean_eval_cycle"]) for row in rows]

        expected_updates = [0, *range(EVAL_EVERY, TRAIN_UPDATES + 1,
                                      EVAL_EVERY)]
        if TRAIN_UPDATES % EVAL_EVERY:
            expected_updates.append(TRAIN_UPDATES)
        assert updates == expected_updates
        assert steps[0] == 0
        assert steps == sorted(steps)
        assert min(cycles) < cycles[0]
        assert len(rows) == len(trained["history"])

    def test_last_checkpoint_is_saved_with_final_update_count(self, trained):
        payload = torch.load(trained["out_dir"] / "last.pt",
                             weights_only=True)
        assert payload["update"] == TRAIN_UPDATES
        assert payload["config"]["seed"] == 0


class TestCheckpointRoundTrip:
    def test_best_checkpoint_replays_its_recorded_score(self, trained,
                                                        desk_endpoint):
        best_recorded = min(row["mean_eval_cycle"]
                            for row in trained["history"])
        summaries = evaluate_checkpoint(
            desk_endpoint, trained["out_dir"] / "best.pt",
            EVAL_EPISODES, seed_base=EVAL_SEED_BASE)
        replayed = fmean(s["mean_cycle_h"] for s in summaries)
        assert replayed == pytest.approx(best_recorded, abs=1e-9)


class TestCrossInstance:
    def test_checkpoint_runs_on_a_different_instance(self, trained,
                                                     desk_b_endpoint):
        summaries = evaluate_checkpoint(
            desk_b_endpoint, trained["out_dir"] / "best.pt",
            3, seed_base=500)
        assert len(summaries) == 3
        for summary in summaries:
            assert summary["cases"] > 0
            assert math.isfinite(summary["mean_cycle_h"])


class TestConnectionLoss:
    def test_dead_simulator_still_leaves_a_checkpoint(self, data_dir,
                                                      tmp_path):
        proc, endpoint = _spawn_server(data_dir / "desk.json")
        out_dir = tmp_path / "aborted"
        trainer = Trainer(endpoint, AgentConfig(seed=1, rollout_steps=8),
                          out_dir)
        proc.terminate()
        proc.wait(timeout=10)
        try:
            with pytest.raises((RuntimeError, OSError)):
                trainer.train(1, eval_every=1, eval_episodes=1)
            assert (out_dir / "last.pt").exists()
        finally:
            trainer.close()


class TestConfigValidation:
    def test_defaults_are_accepted(self):
        config = AgentConfig()
        assert config.embedding_dim == 16
        assert config.discount == pytest.approx(0.99)

    @pytest.mark.parametrize("kwargs", [
        {"embedding_dim": 0},
        {"discount": 0.0},
        {"discount": 1.5},
        {"clip_ratio": 0.0},
        {"rollout_steps": 0},
    ])
    def test_bad_values_are_rejected(self, kwargs):
        with pytest.raises(ValueError):
            AgentConfig(**kwargs)


class TestAdvantageEstimation:
    def hand_rollout(self, rewards, dones, bootstrap):
        n = len(rewards)
        return Rollout(
            observations=[None] * n,
            actions=torch.zeros(n, dtype=torch.long),
            log_probs=torch.zeros(n),
            values=torch.tensor([0.5, 1.0, 1.5]),
            rewards=torch.tensor(rewards),
            dones=torch.tensor(dones),
            bootstrap_value=bootstrap,
            episodes_finished=int(sum(dones)))

    def test_matches_hand_computation_without_terminal(self):
        rollout = self.hand_rollout([1.0, 2.0, 3.0],
                                    [False, False, False], 2.0)
        advantages, returns = compute_advantages(rollout, 0.9, 0.8)
        # backward recursion: delta_2=3.3, delta_1=2.35, delta_0=1.4
        assert advantages[2] == pytest.approx(3.3, rel=1e-9)
        assert advantages[1] == pytest.approx(2.35 + 0.72 * 3.3, rel=1e-9)
        assert advantages[0] == pytest.approx(
            1.4 + 0.72 * (2.35 + 0.72 * 3.3), rel=1e-9)
        assert returns[0] == pytest.approx(float(advantages[0]) + 0.5,
                                           rel=1e-9)

    def test_terminal_step_cuts_the_recursion(self):
        rollout = self.hand_rollout([1.0, 2.0, 3.0],
                                    [False, True, False], 2.0)
        advantages, _ = compute_advantages(rollout, 0.9, 0.8)
        assert advantages[2] == pytest.approx(3.3, rel=1e-9)
        # done at t=1: next value 0 and no mass from t=2
        assert advantages[1] == pytest.approx(1.0, rel=1e-9)
        assert advantages[0] == pytest.approx(1.4 + 0.72 * 1.0, rel=1e-9)
