"""Line-delimited JSON client for the simulator wire protocol.

Message grammar, one JSON object per newline-terminated line:
  out: {"type": "reset", "seed": int?}   start an episode
       {"type": "act", "index": int}     answer an observation
       {"type": "stop"}                  end the session
  in:  {"type": "obs", "obs": {...}, "reward": float, "done": false}
       {"type": "end", "summary": {...}}
       {"type": "error", "code": str, "message": str}
"""

from __future__ import annotations

import json
import socket


class ProtocolError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class SimulatorClient:
    def __init__(self, endpoint: str, timeout: float = 60.0):
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._sock.settimeout(timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8")

    def _send(self, message: dict) -> None:
        self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))

    def _recv(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("closed", "simulator closed the connection")
        message = json.loads(line)
        if message.get("type") == "error":
            raise ProtocolError(message.get("code", "unknown"),
                                message.get("message", ""))
        return message

    def reset(self, seed: int | None = None) -> dict:
        message: dict = {"type": "reset"}
        if seed is not None:
            message["seed"] = seed
        self._send(message)
        reply = self._recv()
        if reply["type"] not in ("obs", "end"):
            raise ProtocolError("unexpected", f"reset answered with {reply['type']}")
        return reply

    def act(self, index: int) -> dict:
        self._send({"type": "act", "index": index})
        reply = self._recv()
        if reply["type"] not in ("obs", "end"):
            raise ProtocolError("unexpected", f"act answered with {reply['type']}")
        return reply

    def stop(self) -> None:
        try:
            self._send({"type": "stop"})
        except OSError:
            pass

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "SimulatorClient":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
        self.close()
