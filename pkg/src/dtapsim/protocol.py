"""Wire bridge between the simulator and an external decision agent.

Transport is newline-delimited UTF-8 JSON over TCP. The simulator sends
`{"type": "obs", "obs": {...}, "reward": float, "done": false}` at every
decision and expects `{"type": "act", "index": int}` back; a finished episode
produces `{"type": "end", "summary": {...}}`. In the listening (serve) mode
the agent opens episodes with `{"type": "reset", "seed": int}` and closes the
session with `{"type": "stop"}`.

Rewards are delivered so that their episode sum is exact: each observation
carries the cost accrued since the previous observation (internally applied
singleton decisions fold into the next delivered reward), and the end
summary's `final_reward` carries everything after the last action, including
the end-of-horizon truncation charge. Hence sum(obs rewards) + final_reward
== summary total_reward, which a discount-free learner can check.

A malformed message, a blocked or out-of-range action index, or a timeout
aborts the episode with an error message naming the violation; the
simulation state is simply discarded, never left half-stepped.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass

from .engine import EpisodeEnd, apply_assignment, init_episode, step_until_decision
from .model import DtapInstance
from .observation import (ActionDecodeError, build_observation, decode_action,
                          serialize_observation, standardize_features)
from .rewards import EpisodeSummary, finalize_episode

BLOCKED_ACTION = "PROTOCOL_BLOCKED_ACTION"
BAD_MESSAGE = "PROTOCOL_BAD_MESSAGE"
TIMEOUT = "PROTOCOL_TIMEOUT"

DEFAULT_TIMEOUT_S = 60.0


class ProtocolViolation(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class EngineConfig:
    horizon_hours: float | None = None
    determinize: bool = False
    auto_apply_singletons: bool = False
    check_invariants: bool = False


class _LineChannel:
    """One JSON document per line over a socket."""

    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT_S):
        sock.settimeout(timeout)
        self._sock = sock
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = sock.makefile("w", encoding="utf-8", newline="\n")

    def send(self, payload: dict) -> None:
        self._writer.write(json.dumps(payload, separators=(",", ":")) + "\n")
        self._writer.flush()

    def recv(self) -> dict:
        try:
            line = self._reader.readline()
        except (TimeoutError, socket.timeout) as exc:
            raise ProtocolViolation(TIMEOUT, "timed out waiting for a message") from exc
        if not line:
            raise ProtocolViolation(BAD_MESSAGE, "connection closed mid-conversation")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(BAD_MESSAGE, f"not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "type" not in payload:
            raise ProtocolViolation(BAD_MESSAGE, "message must be an object with a type")
        return payload

    def send_error(self, code: str, message: str) -> None:
        try:
            self.send({"type": "error", "code": code, "message": message})
        except OSError:
            pass

    def close(self) -> None:
        for closer in (self._reader.close, self._writer.close, self._sock.close):
            try:
                closer()
            except OSError:
                pass


def _summary_payload(summary: EpisodeSummary, final_reward: float) -> dict:
    return {
        "seed": summary.seed,
        "policy": summary.policy,
        "instance": summary.instance,
        "horizon_h": summary.horizon_hours,
        "cases": summary.cases,
        "mean_cycle_h": summary.mean_cycle_hours,
        "total_reward": summary.total_reward,
        "final_reward": final_reward,
    }


def _drive_episode(channel: _LineChannel, instance: DtapInstance, seed: int,
                   config: EngineConfig, policy_name: str = "remote") -> EpisodeSummary:
    """Run one episode with the remote peer choosing actions.

    The reward cursor tracks how many per-decision ledger entries have been
    folded into delivered observations; the entry an action is about to
    create is pre-consumed because its area has already been reported."""
    state = init_episode(
        instance, seed, horizon_hours=config.horizon_hours,
        determinize=config.determinize, check_invariants=config.check_invariants)
    ledger = state.ledger
    cursor = 0
    while True:
        outcome = step_until_decision(
            state, instance, auto_apply_singletons=config.auto_apply_singletons)
        if isinstance(outcome, EpisodeEnd):
            break
        graph = standardize_features(build_observation(state, instance))
        reward = sum(ledger.per_decision_rewards[cursor:]) - ledger.pending_area
        cursor = len(ledger.per_decision_rewards) + 1
        channel.send({"type": "obs", "obs": serialize_observation(graph),
                      "reward": reward, "done": False})
        message = channel.recv()
        if message.get("type") != "act":
            raise ProtocolViolation(
                BAD_MESSAGE, f"expected an act message, got {message.get('type')!r}")
        index = message.get("index")
        if not isinstance(index, int) or isinstance(index, bool):
            raise ProtocolViolation(BAD_MESSAGE, f"act index must be an integer, got {index!r}")
        try:
            pair = decode_action(graph, index)
        except ActionDecodeError as exc:
            raise ProtocolViolation(BLOCKED_ACTION, str(exc)) from exc
        apply_assignment(state, instance, pair)

    summary = finalize_episode(ledger, state.open_case_arrivals(), state.end_time)
    summary.seed = seed
    summary.policy = policy_name
    summary.instance = instance.name
    summary.horizon_hours = state.horizon_hours
    final_reward = sum(ledger.per_decision_rewards[cursor:])
    channel.send({"type": "end", "summary": _summary_payload(summary, final_reward)})
    return summary


def run_remote_episode(instance: DtapInstance, endpoint: str, seed: int,
                       config: EngineConfig | None = None,
                       timeout: float = DEFAULT_TIMEOUT_S) -> EpisodeSummary:
    """Connect out to a listening agent and run one episode against it."""
    host, port = parse_endpoint(endpoint)
    config = config or EngineConfig()
    sock = socket.create_connection((host, port), timeout=timeout)
    channel = _LineChannel(sock, timeout)
    try:
        return _drive_episode(channel, instance, seed, config)
    except ProtocolViolation as exc:
        channel.send_error(exc.code, str(exc))
        raise
    finally:
        channel.close()


class RemotePolicyClient:
    """Adapter that lets a listening agent act as an in-process policy,
    one observation request per decision. Rewards are not meaningful in
    this probing mode and are sent as 0."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT_S):
        host, port = parse_endpoint(endpoint)
        self._channel = _LineChannel(
            socket.create_connection((host, port), timeout=timeout), timeout)

    def decide_index(self, graph) -> int:
        self._channel.send({"type": "obs", "obs": serialize_observation(graph),
                            "reward": 0.0, "done": False})
        message = self._channel.recv()
        if message.get("type") != "act":
            raise ProtocolViolation(
                BAD_MESSAGE, f"expected an act message, got {message.get('type')!r}")
        index = message.get("index")
        if not isinstance(index, int) or isinstance(index, bool):
            raise ProtocolViolation(BAD_MESSAGE, f"act index must be an integer, got {index!r}")
        return index

    def as_policy(self, instance: DtapInstance):
        from .policies import PolicyDecision

        def policy(decision):
            graph = standardize_features(build_observation(decision.state, instance))
            index = self.decide_index(graph)
            try:
                pair = decode_action(graph, index)
            except ActionDecodeError as exc:
                raise ProtocolViolation(BLOCKED_ACTION, str(exc)) from exc
            return PolicyDecision(chosen=pair, node_index=index, rationale_tag="remote")

        return policy

    def close(self) -> None:
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class SimulatorServer(socketserver.ThreadingTCPServer):
    """Listening simulator: each connection runs agent-driven episodes,
    opened by reset messages, strictly one at a time per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, instance: DtapInstance, host: str, port: int, *,
                 base_seed: int = 0, config: EngineConfig | None = None,
                 max_episodes: int = 0, timeout: float = DEFAULT_TIMEOUT_S):
        self.instance = instance
        self.base_seed = base_seed
        self.config = config or EngineConfig()
        self.max_episodes = max_episodes
        self.timeout = timeout
        self._auto_seed_lock = threading.Lock()
        self._auto_seed_next = base_seed
        super().__init__((host, port), _ServeHandler)

    def next_auto_seed(self) -> int:
        with self._auto_seed_lock:
            seed = self._auto_seed_next
            self._auto_seed_next += 1
            return seed

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


class _ServeHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: SimulatorServer = self.server
        channel = _LineChannel(self.request, server.timeout)
        episodes = 0
        try:
            while True:
                try:
                    message = channel.recv()
                except ProtocolViolation as exc:
                    if exc.code == BAD_MESSAGE and "closed" in str(exc):
                        return
                    channel.send_error(exc.code, str(exc))
                    return
                kind = message.get("type")
                if kind == "stop":
                    return
                if kind != "reset":
                    channel.send_error(
                        BAD_MESSAGE, f"expected reset or stop, got {kind!r}")
                    return
                if server.max_episodes and episodes >= server.max_episodes:
                    channel.send_error(
                        BAD_MESSAGE, f"episode limit {server.max_episodes} reached")
                    return
                seed = message.get("seed")
                if seed is None:
                    seed = server.next_auto_seed()
                elif not isinstance(seed, int) or isinstance(seed, bool):
                    channel.send_error(BAD_MESSAGE, f"reset seed must be an integer, got {seed!r}")
                    return
                episodes += 1
                try:
                    _drive_episode(channel, server.instance, seed, server.config)
                except ProtocolViolation as exc:
                    channel.send_error(exc.code, str(exc))
                    return
        finally:
            channel.close()


def start_server(instance: DtapInstance, host: str = "127.0.0.1", port: int = 0,
                 **kwargs) -> SimulatorServer:
    """Start a listening simulator on a background thread; port 0 picks a
    free port. Call .shutdown() then .server_close() to stop."""
    server = SimulatorServer(instance, host, port, **kwargs)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
