"""Line-delimited JSON wire protocol between the harness and a remote agent.

One TCP connection carries one episode session. The server sends a hello on
accept and the client echoes it; then the client drives a strict
request/response exchange: reset/ack once, observe/action per step (step
numbers count up from 0), and bye to finish. Violations earn one error
message before the connection closes.

Messages (key order is part of the golden-transcript contract):

* {"type": "hello", "version": 1}
* {"type": "reset", "episode_id", "instruction", "n_hist", "n_cur", "c"}
* {"type": "observe", "step", "frame": {"n_x": 256, "c", "data": [...]}}
* {"type": "action", "text"}
* {"type": "ack"} / {"type": "error", "message"} / {"type": "bye"}

Numbers serialize with the shortest round-trip decimal representation (the
default in both CPython and JavaScript), so features cross the wire at full
precision.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .runner import Agent, TransportError
from .world import Episode, FrameFeatures, GridWorld, N_PATCHES

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """The peer broke the message ordering or schema contract."""


@dataclass(frozen=True)
class ResetInfo:
    episode_id: str
    instruction: str
    n_hist: int
    n_cur: int
    c: int


SessionFactory = Callable[[ResetInfo], Agent]


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def _hello() -> dict:
    return {"type": "hello", "version": PROTOCOL_VERSION}


class _LineChannel:
    """Blocking line-framed JSON over a socket, with optional transcript."""

    def __init__(self, sock: socket.socket, transcript: list[tuple[str, str]] | None = None):
        self.sock = sock
        self.transcript = transcript
        self._recv_buf = bytearray()

    def send(self, msg: dict) -> None:
        data = encode_message(msg)
        if self.transcript is not None:
            self.transcript.append(("send", data[:-1].decode("utf-8")))
        self.sock.sendall(data)

    def recv(self) -> dict | None:
        """Next message, or None on clean EOF."""
        while True:
            nl = self._recv_buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._recv_buf[:nl])
                del self._recv_buf[: nl + 1]
                if self.transcript is not None:
                    self.transcript.append(("recv", line.decode("utf-8")))
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as e:
                    raise ProtocolError(f"malformed message: {e}") from e
                if not isinstance(msg, dict) or "type" not in msg:
                    raise ProtocolError("message must be an object with a 'type'")
                return msg
            chunk = self.sock.recv(65536)
            if not chunk:
                if self._recv_buf:
                    raise ProtocolError("connection closed mid-line")
                return None
            self._recv_buf.extend(chunk)


# -- server ---------------------------------------------------------------------


class AgentServer:
    """Serves one agent session per connection until closed."""

    def __init__(self, session_factory: SessionFactory, bind: tuple[str, int]) -> None:
        self._factory = session_factory
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(bind)
        self._listener.listen(16)
        self._listener.settimeout(0.05)  # lets close() stop the accept loop
        self.address: tuple[str, int] = self._listener.getsockname()
        self._closing = threading.Event()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closing.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            t.start()

    def _serve_connection(self, conn: socket.socket) -> None:
        channel = _LineChannel(conn)
        agent: Agent | None = None
        expected_step = 0
        try:
            channel.send(_hello())
            msg = channel.recv()
            if msg is None:
                return
            if msg.get("type") != "hello" or msg.get("version") != PROTOCOL_VERSION:
                channel.send({"type": "error", "message": "version handshake failed"})
                return
            while True:
                msg = channel.recv()
                if msg is None or msg.get("type") == "bye":
                    return
                kind = msg.get("type")
                if kind == "reset":
                    if agent is not None:
                        channel.send(
                            {"type": "error", "message": "session already reset"}
                        )
                        return
                    info = ResetInfo(
                        episode_id=str(msg["episode_id"]),
                        instruction=str(msg["instruction"]),
                        n_hist=int(msg["n_hist"]),
                        n_cur=int(msg["n_cur"]),
                        c=int(msg["c"]),
                    )
                    try:
                        agent = self._factory(info)
                    except KeyError as e:
                        channel.send(
                            {"type": "error", "message": f"unknown episode: {e}"}
                        )
                        return
                    channel.send({"type": "ack"})
                elif kind == "observe":
                    if agent is None:
                        channel.send({"type": "error", "message": "reset required"})
                        return
                    if int(msg.get("step", -1)) != expected_step:
                        channel.send(
                            {"type": "error",
                             "message": f"expected step {expected_step}, got {msg.get('step')}"}
                        )
                        return
                    frame_raw = msg.get("frame") or {}
                    n_x = int(frame_raw.get("n_x", 0))
                    c = int(frame_raw.get("c", 0))
                    data = frame_raw.get("data")
                    if n_x != N_PATCHES or not isinstance(data, list) or len(data) != n_x * c:
                        channel.send(
                            {"type": "error", "message": "bad frame: data length != n_x*c"}
                        )
                        return
                    frame = FrameFeatures(
                        data=np.array(data, dtype=np.float64).reshape(n_x, c)
                    )
                    started = time.monotonic()
                    text = agent.act(frame)
                    log.debug(
                        "step %d answered in %.3f s", expected_step,
                        time.monotonic() - started,
                    )
                    expected_step += 1
                    channel.send({"type": "action", "text": str(text)})
                else:
                    channel.send({"type": "error", "message": f"unexpected message {kind!r}"})
                    return
        except (ProtocolError, KeyError, TypeError, ValueError) as e:
            try:
                channel.send({"type": "error", "message": str(e)})
            except OSError:
                pass
        except OSError:
            pass
        finally:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()

    def close(self) -> None:
        self._closing.set()
        try:
            self._listener.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=2.0)

    def __enter__(self) -> "AgentServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_agent(session_factory: SessionFactory, bind: tuple[str, int]) -> AgentServer:
    """Start a threaded server exposing agents built by `session_factory`."""
    return AgentServer(session_factory, bind)


def episode_session_factory(
    worlds: list[GridWorld],
    episodes: dict[str, tuple[GridWorld, Episode]],
    build_agent: Callable[[GridWorld], Agent],
) -> SessionFactory:
    """Resolve reset messages against a shared episode index.

    The server process must hold the same worlds/episodes as the harness
    (regenerated from the same seed); the reset's episode_id selects which
    one this session runs.
    """

    def factory(info: ResetInfo) -> Agent:
        if info.episode_id not in episodes:
            raise KeyError(info.episode_id)
        world, episode = episodes[info.episode_id]
        agent = build_agent(world)
        agent.reset(episode)
        return agent

    return factory


# -- client ---------------------------------------------------------------------


class RemoteAgent:
    """Adapts the wire protocol to the in-process Agent interface.

    Opens one connection per episode (on reset), raises TransportError on
    timeouts, disconnects, or protocol errors so the harness can mark the
    episode failed.
    """

    def __init__(
        self,
        address: tuple[str, int],
        timeout: float = DEFAULT_TIMEOUT,
        n_hist: int = 4,
        n_cur: int = 64,
        c: int = 32,
        transcript: list[tuple[str, str]] | None = None,
    ) -> None:
        self.address = address
        self.timeout = timeout
        self.n_hist = n_hist
        self.n_cur = n_cur
        self.c = c
        self.transcript = transcript
        self._channel: _LineChannel | None = None
        self._step = 0

    def _recv_or_raise(self, expect: str) -> dict:
        assert self._channel is not None
        try:
            msg = self._channel.recv()
        except (ProtocolError, socket.timeout, OSError) as e:
            self.close(send_bye=False)
            raise TransportError(f"transport failure awaiting {expect}: {e}") from e
        if msg is None:
            self.close(send_bye=False)
            raise TransportError(f"connection closed awaiting {expect}")
        if msg.get("type") == "error":
            self.close(send_bye=False)
            raise TransportError(f"server error: {msg.get('message')}")
        if msg.get("type") != expect:
            self.close(send_bye=False)
            raise TransportError(f"expected {expect}, got {msg.get('type')!r}")
        return msg

    def reset(self, episode: Episode) -> None:
        self.close()
        try:
            sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {self.address}: {e}") from e
        sock.settimeout(self.timeout)
        self._channel = _LineChannel(sock, transcript=self.transcript)
        self._step = 0
        hello = self._recv_or_raise("hello")
        if hello.get("version") != PROTOCOL_VERSION:
            self.close(send_bye=False)
            raise TransportError(f"server speaks version {hello.get('version')}")
        self._send(_hello())
        self._send(
            {
                "type": "reset",
                "episode_id": episode.id,
                "instruction": episode.instruction,
                "n_hist": self.n_hist,
                "n_cur": self.n_cur,
                "c": self.c,
            }
        )
        self._recv_or_raise("ack")

    def _send(self, msg: dict) -> None:
        assert self._channel is not None
        try:
            self._channel.send(msg)
        except OSError as e:
            self.close(send_bye=False)
            raise TransportError(f"transport failure sending {msg.get('type')}: {e}") from e

    def act(self, frame: FrameFeatures) -> str:
        if self._channel is None:
            raise TransportError("act() before reset()")
        self._send(
            {
                "type": "observe",
                "step": self._step,
                "frame": {
                    "n_x": frame.data.shape[0],
                    "c": frame.data.shape[1],
                    "data": frame.data.flatten().tolist(),
                },
            }
        )
        msg = self._recv_or_raise("action")
        self._step += 1
        return str(msg.get("text", ""))

    def close(self, send_bye: bool = True) -> None:
        if self._channel is None:
            return
        try:
            if send_bye:
                self._channel.send({"type": "bye"})
        except OSError:
            pass
        try:
            self._channel.sock.close()
        except OSError:
            pass
        self._channel = None


def remote_agent(address: tuple[str, int], **kwargs) -> RemoteAgent:
    return RemoteAgent(address, **kwargs)


def write_transcript(path: str, entries: list[tuple[str, str]]) -> None:
    """Dump a recorded transcript: '>>' client-to-server, '<<' replies."""
    with open(path, "w", encoding="utf-8") as f:
        for direction, line in entries:
            prefix = ">>" if direction == "send" else "<<"
            f.write(f"{prefix} {line}\n")
