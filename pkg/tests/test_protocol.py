import json
import socket

import pytest

from dtapsim.policies import make_policy, run_episode
from dtapsim.protocol import (BAD_MESSAGE, BLOCKED_ACTION, TIMEOUT, EngineConfig,
                              ProtocolViolation, RemotePolicyClient,
                              parse_endpoint, run_remote_episode, start_server)
from dtapsim.rewards import audit_passed

from _mimic import ListeningAgent, connect_and_drive, shortest_expected_index


@pytest.fixture()
def serve(audit_small):
    server = start_server(audit_small, port=0,
                          config=EngineConfig(auto_apply_singletons=False))
    yield server
    server.shutdown()
    server.server_close()


def raw_session(endpoint):
    host, port = parse_endpoint(endpoint)
    sock = socket.create_connection((host, port), timeout=10.0)
    reader = sock.makefile("r", encoding="utf-8", newline="\n")
    writer = sock.makefile("w", encoding="utf-8", newline="\n")

    def send(payload):
        writer.write(json.dumps(payload) + "\n")
        writer.flush()

    def recv():
        line = reader.readline()
        return json.loads(line) if line else None

    return sock, send, recv


class TestEndpointParsing:
    def test_host_port_split(self):
        assert parse_endpoint("127.0.0.1:9000") == ("127.0.0.1", 9000)

    def test_missing_port_rejected(self):
        with pytest.raises(ValueError):
            parse_endpoint("localhost")

    def test_missing_host_rejected(self):
        with pytest.raises(ValueError):
            parse_endpoint(":9000")


class TestServeMode:
    def test_scripted_agent_plays_episodes(self, serve):
        observations, summaries = connect_and_drive(serve.endpoint, [3, 4])
        assert len(summaries) == 2
        assert summaries[0]["seed"] == 3
        assert summaries[1]["seed"] == 4
        assert observations, "expected at least one decision"
        for summary in summaries:
            assert set(summary) == {"seed", "policy", "instance", "horizon_h",
                                    "cases", "mean_cycle_h", "total_reward",
                                    "final_reward"}

    def test_delivered_rewards_sum_to_episode_total(self, serve):
        observations, summaries = connect_and_drive(serve.endpoint, [11])
        delivered = sum(o["reward"] for o in observations)
        summary = summaries[0]
        assert delivered + summary["final_reward"] == pytest.approx(
            summary["total_reward"], abs=1e-9)

    def test_rewards_are_never_positive(self, serve):
        observations, summaries = connect_and_drive(serve.endpoint, [12])
        assert all(o["reward"] <= 0.0 for o in observations)
        assert summaries[0]["final_reward"] <= 0.0

    def test_remote_spt_equals_local_spt(self, audit_small, serve):
        _, summaries = connect_and_drive(serve.endpoint, [21])
        local = run_episode(audit_small, make_policy("spt", audit_small, 21),
                            seed=21, policy_name="spt")
        assert summaries[0]["total_reward"] == pytest.approx(
            local.total_reward, abs=1e-9)
        assert summaries[0]["cases"] == local.cases
        assert summaries[0]["mean_cycle_h"] == pytest.approx(
            local.mean_cycle_hours, abs=1e-9)

    def test_auto_seed_increments_when_omitted(self, audit_small):
        server = start_server(audit_small, port=0, base_seed=100)
        try:
            sock, send, recv = raw_session(server.endpoint)
            seeds = []
            for _ in range(2):
                send({"type": "reset"})
                while True:
                    message = recv()
                    if message["type"] == "end":
                        seeds.append(message["summary"]["seed"])
                        break
                    send({"type": "act",
                          "index": shortest_expected_index(message["obs"])})
            send({"type": "stop"})
            sock.close()
            assert seeds == [100, 101]
        finally:
            server.shutdown()
            server.server_close()

    def test_blocked_action_aborts_episode_with_error(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "reset", "seed": 1})
        message = recv()
        assert message["type"] == "obs"
        blocked = [j for j, allowed in enumerate(message["obs"]["mask"])
                   if not allowed]
        index = blocked[0] if blocked else len(message["obs"]["mask"])
        send({"type": "act", "index": index})
        reply = recv()
        assert reply["type"] == "error"
        assert reply["code"] == BLOCKED_ACTION
        assert recv() is None  # server closed the connection
        sock.close()

    def test_non_integer_index_rejected(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "reset", "seed": 1})
        assert recv()["type"] == "obs"
        send({"type": "act", "index": "zero"})
        reply = recv()
        assert reply["type"] == "error"
        assert reply["code"] == BAD_MESSAGE
        sock.close()

    def test_bool_index_rejected(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "reset", "seed": 1})
        assert recv()["type"] == "obs"
        send({"type": "act", "index": True})
        assert recv()["code"] == BAD_MESSAGE
        sock.close()

    def test_malformed_line_rejected(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "reset", "seed": 1})
        assert recv()["type"] == "obs"
        sock.sendall(b"not json at all\n")
        reply = recv()
        assert reply["type"] == "error"
        assert reply["code"] == BAD_MESSAGE
        sock.close()

    def test_bad_seed_type_rejected(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "reset", "seed": "five"})
        reply = recv()
        assert reply["type"] == "error"
        assert reply["code"] == BAD_MESSAGE
        sock.close()

    def test_unknown_message_kind_rejected(self, serve):
        sock, send, recv = raw_session(serve.endpoint)
        send({"type": "ping"})
        reply = recv()
        assert reply["type"] == "error"
        assert reply["code"] == BAD_MESSAGE
        sock.close()

    def test_episode_limit_enforced(self, audit_small):
        server = start_server(audit_small, port=0, max_episodes=1)
        try:
            sock, send, recv = raw_session(server.endpoint)
            send({"type": "reset", "seed": 1})
            while True:
                message = recv()
                if message["type"] == "end":
                    break
                send({"type": "act",
                      "index": shortest_expected_index(message["obs"])})
            send({"type": "reset", "seed": 2})
            reply = recv()
            assert reply["type"] == "error"
            sock.close()
        finally:
            server.shutdown()
            server.server_close()

    def test_determinized_server_reproducible(self, audit_small):
        server = start_server(audit_small, port=0,
                              config=EngineConfig(determinize=True))
        try:
            _, first = connect_and_drive(server.endpoint, [5])
            _, second = connect_and_drive(server.endpoint, [5])
            assert first[0]["total_reward"] == second[0]["total_reward"]
            assert first[0]["cases"] == second[0]["cases"]
        finally:
            server.shutdown()
            server.server_close()


class TestEnvDrivenMode:
    def test_remote_episode_matches_local_spt(self, audit_small):
        with ListeningAgent("spt") as agent:
            summary = run_remote_episode(audit_small, agent.endpoint, seed=33)
            local = run_episode(audit_small, make_policy("spt", audit_small, 33),
                                seed=33, policy_name="spt")
            assert summary.total_reward == pytest.approx(local.total_reward,
                                                         abs=1e-9)
            assert summary.cycle_times == local.cycle_times
            assert audit_passed(summary)
            assert agent.finals[-1]["type"] == "end"

    def test_agent_sees_consistent_reward_stream(self, audit_small):
        with ListeningAgent("spt") as agent:
            summary = run_remote_episode(audit_small, agent.endpoint, seed=34)
            delivered = sum(o["reward"] for o in agent.observations)
            final = agent.finals[-1]["summary"]["final_reward"]
            assert delivered + final == pytest.approx(summary.total_reward,
                                                      abs=1e-9)

    def test_blocked_choice_aborts_with_error(self, audit_small):
        with ListeningAgent("blocked") as agent:
            with pytest.raises(ProtocolViolation) as err:
                run_remote_episode(audit_small, agent.endpoint, seed=35)
            assert err.value.code == BLOCKED_ACTION
            assert agent.finals[-1]["type"] == "error"
            assert agent.finals[-1]["code"] == BLOCKED_ACTION

    def test_malformed_answer_aborts_with_error(self, audit_small):
        with ListeningAgent("malformed") as agent:
            with pytest.raises(ProtocolViolation) as err:
                run_remote_episode(audit_small, agent.endpoint, seed=36)
            assert err.value.code == BAD_MESSAGE

    def test_hung_agent_times_out(self, audit_small):
        with ListeningAgent("stall", stall_seconds=3.0) as agent:
            with pytest.raises(ProtocolViolation) as err:
                run_remote_episode(audit_small, agent.endpoint, seed=37,
                                   timeout=0.5)
            assert err.value.code == TIMEOUT

    def test_closed_connection_reported(self, audit_small):
        with ListeningAgent("silent") as agent:
            with pytest.raises(ProtocolViolation) as err:
                run_remote_episode(audit_small, agent.endpoint, seed=38)
            assert err.value.code == BAD_MESSAGE
            assert "closed" in str(err.value)


class TestRemotePolicyClient:
    def test_probe_decisions_match_listening_rule(self, audit_small):
        # the adapter drives a local episode, consulting the remote peer per
        # decision; here the peer is a scripted listener
        with ListeningAgent("spt") as agent:
            with RemotePolicyClient(agent.endpoint) as client:
                policy = client.as_policy(audit_small)
                summary = run_episode(audit_small, policy, seed=44,
                                      policy_name="remote")
            local = run_episode(audit_small, make_policy("spt", audit_small, 44),
                                seed=44, policy_name="spt")
            assert summary.cycle_times == local.cycle_times

    def test_blocked_probe_choice_raises(self, audit_small):
        with ListeningAgent("blocked") as agent:
            with RemotePolicyClient(agent.endpoint) as client:
                policy = client.as_policy(audit_small)
                with pytest.raises(ProtocolViolation) as err:
                    run_episode(audit_small, policy, seed=45)
                assert err.value.code == BLOCKED_ACTION
