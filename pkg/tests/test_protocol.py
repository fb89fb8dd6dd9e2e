"""Wire protocol: handshake, ordering, loopback equivalence, transcripts."""

from __future__ import annotations

import json
import os
import socket

import pytest

from conftest import open_box
from vlnce_bench.expert import generate_episode
from vlnce_bench.protocol import (
    PROTOCOL_VERSION,
    RemoteAgent,
    episode_session_factory,
    serve_agent,
    write_transcript,
)
from vlnce_bench.rng import derive_seed
from vlnce_bench.runner import (
    EvalConfig,
    OracleAgent,
    TransportError,
    run_episode,
)
from vlnce_bench.world import Episode, Pose


class StopAgent:
    def reset(self, episode):
        pass

    def act(self, frame):
        return "The next action is stop."


class ProseAgent:
    def reset(self, episode):
        pass

    def act(self, frame):
        return "the corridor stretches before you"


def _episode_index(worlds, count, seed):
    out = {}
    for i in range(count):
        w = worlds[i % len(worlds)]
        ep = generate_episode(w, derive_seed(seed, "ep", i))
        out[ep.id] = (w, ep)
    return out


@pytest.fixture()
def oracle_server(fixture_worlds):
    episodes = _episode_index(fixture_worlds, 6, 2024)
    factory = episode_session_factory(
        fixture_worlds, episodes, lambda world: OracleAgent(world)
    )
    server = serve_agent(factory, ("127.0.0.1", 0))
    yield server, episodes
    server.close()


def _raw_session(address):
    sock = socket.create_connection(address, timeout=5.0)
    sock.settimeout(5.0)
    f = sock.makefile("rwb")
    return sock, f


def _send(f, obj):
    f.write((json.dumps(obj) + "\n").encode())
    f.flush()


def _recv(f):
    line = f.readline()
    assert line, "connection closed"
    return json.loads(line.decode())


def test_hello_then_reset_ack(oracle_server):
    server, episodes = oracle_server
    ep_id = next(iter(episodes))
    sock, f = _raw_session(server.address)
    try:
        hello = _recv(f)
        assert hello == {"type": "hello", "version": PROTOCOL_VERSION}
        _send(f, {"type": "hello", "version": PROTOCOL_VERSION})
        _send(f, {"type": "reset", "episode_id": ep_id, "instruction": "x",
                  "n_hist": 4, "n_cur": 64, "c": 8})
        assert _recv(f) == {"type": "ack"}
    finally:
        sock.close()


def test_observe_before_reset_is_error(oracle_server):
    server, _ = oracle_server
    sock, f = _raw_session(server.address)
    try:
        _recv(f)
        _send(f, {"type": "hello", "version": PROTOCOL_VERSION})
        _send(f, {"type": "observe", "step": 0,
                  "frame": {"n_x": 256, "c": 1, "data": [0.0] * 256}})
        msg = _recv(f)
        assert msg["type"] == "error"
        assert "reset" in msg["message"]
        assert f.readline() == b""  # connection closed after the error
    finally:
        sock.close()


def test_wrong_version_rejected(oracle_server):
    server, _ = oracle_server
    sock, f = _raw_session(server.address)
    try:
        _recv(f)
        _send(f, {"type": "hello", "version": 99})
        msg = _recv(f)
        assert msg["type"] == "error"
    finally:
        sock.close()


def test_nonmonotonic_step_rejected(oracle_server):
    server, episodes = oracle_server
    ep_id = next(iter(episodes))
    sock, f = _raw_session(server.address)
    try:
        _recv(f)
        _send(f, {"type": "hello", "version": PROTOCOL_VERSION})
        _send(f, {"type": "reset", "episode_id": ep_id, "instruction": "x",
                  "n_hist": 4, "n_cur": 64, "c": 1})
        _recv(f)
        _send(f, {"type": "observe", "step": 3,
                  "frame": {"n_x": 256, "c": 1, "data": [0.0] * 256}})
        msg = _recv(f)
        assert msg["type"] == "error"
        assert "step" in msg["message"]
    finally:
        sock.close()


def test_malformed_json_is_error(oracle_server):
    server, _ = oracle_server
    sock, f = _raw_session(server.address)
    try:
        _recv(f)
        f.write(b"{not json\n")
        f.flush()
        msg = _recv(f)
        assert msg["type"] == "error"
    finally:
        sock.close()


def test_unknown_episode_is_error(oracle_server):
    server, _ = oracle_server
    sock, f = _raw_session(server.address)
    try:
        _recv(f)
        _send(f, {"type": "hello", "version": PROTOCOL_VERSION})
        _send(f, {"type": "reset", "episode_id": "nope", "instruction": "x",
                  "n_hist": 4, "n_cur": 64, "c": 1})
        msg = _recv(f)
        assert msg["type"] == "error"
        assert "unknown episode" in msg["message"]
    finally:
        sock.close()


def test_loopback_equivalence(oracle_server, fixture_worlds):
    server, episodes = oracle_server
    for i, (ep_id, (world, episode)) in enumerate(list(episodes.items())[:4]):
        config = EvalConfig(feature_seed=derive_seed(2024, "feat", i), c=8)
        local = run_episode(world, episode, OracleAgent(world), config)
        remote = RemoteAgent(server.address, timeout=10.0, c=8)
        over_wire = run_episode(world, episode, remote, config)
        remote.close()
        assert over_wire.poses == local.poses
        assert over_wire.actions == local.actions
        assert over_wire.success == local.success
        assert over_wire.tl == local.tl
        assert over_wire.ne == local.ne
        assert over_wire.spl_term == local.spl_term
        assert over_wire.invalid_answers == local.invalid_answers


def test_prose_answers_count_invalid_not_protocol_error(fixture_worlds):
    episodes = _episode_index(fixture_worlds, 1, 7)
    factory = episode_session_factory(fixture_worlds, episodes, lambda w: ProseAgent())
    with serve_agent(factory, ("127.0.0.1", 0)) as server:
        ep_id, (world, episode) = next(iter(episodes.items()))
        remote = RemoteAgent(server.address, timeout=10.0, c=8)
        r = run_episode(world, episode, remote,
                        EvalConfig(feature_seed=1, c=8, max_steps=5))
        remote.close()
        assert r.error is None
        assert r.invalid_answers == 5


def test_unreachable_address_raises_transport():
    # a bound-then-closed socket gives a port that refuses connections
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    addr = probe.getsockname()
    probe.close()
    remote = RemoteAgent(addr, timeout=0.5)
    w = open_box(30, 30)
    goal = w.cell_center(15, 15)
    ep = Episode(id="x", instruction="y", start=Pose(goal[0], goal[1], 0.0), goal=goal)
    with pytest.raises(TransportError):
        remote.reset(ep)


def test_transport_failure_marks_episode_failed(fixture_worlds):
    episodes = _episode_index(fixture_worlds, 1, 8)
    factory = episode_session_factory(fixture_worlds, episodes, lambda w: StopAgent())
    server = serve_agent(factory, ("127.0.0.1", 0))
    ep_id, (world, episode) = next(iter(episodes.items()))

    class DyingAgent:
        """Remote agent whose server disappears after reset."""

        def __init__(self):
            self.remote = RemoteAgent(server.address, timeout=1.0, c=8)

        def reset(self, ep):
            self.remote.reset(ep)
            server.close()  # kill the server mid-episode
            self.remote._channel.sock.close()

        def act(self, frame):
            return self.remote.act(frame)

    r = run_episode(world, episode, DyingAgent(), EvalConfig(feature_seed=1, c=8))
    assert r.error is not None
    assert not r.success


def test_transcript_stable_across_runs(tmp_path, fixture_worlds):
    episodes = _episode_index(fixture_worlds, 1, 9)
    factory = episode_session_factory(
        fixture_worlds, episodes, lambda world: OracleAgent(world)
    )
    paths = []
    for run in (1, 2):
        with serve_agent(factory, ("127.0.0.1", 0)) as server:
            ep_id, (world, episode) = next(iter(episodes.items()))
            entries: list[tuple[str, str]] = []
            remote = RemoteAgent(server.address, timeout=10.0, c=8, transcript=entries)
            run_episode(world, episode, remote,
                        EvalConfig(feature_seed=derive_seed(9, "feat", 0), c=8))
            remote.close()
            p = os.path.join(tmp_path, f"transcript-{run}.txt")
            write_transcript(p, entries)
            paths.append(p)
    b1 = open(paths[0], "rb").read()
    b2 = open(paths[1], "rb").read()
    assert b1 == b2
    assert b1.startswith(b"<< ")  # server hello comes first


def test_transcript_is_half_duplex(tmp_path, fixture_worlds):
    episodes = _episode_index(fixture_worlds, 1, 10)
    factory = episode_session_factory(
        fixture_worlds, episodes, lambda world: OracleAgent(world)
    )
    with serve_agent(factory, ("127.0.0.1", 0)) as server:
        ep_id, (world, episode) = next(iter(episodes.items()))
        entries: list[tuple[str, str]] = []
        remote = RemoteAgent(server.address, timeout=10.0, c=8, transcript=entries)
        run_episode(world, episode, remote, EvalConfig(feature_seed=1, c=8))
        remote.close()
    # strict request/response: server hello, client echo (no reply), then
    # exactly one reply per request, and no unsolicited server messages
    tagged = [(d, json.loads(line)["type"]) for d, line in entries]
    assert tagged[0] == ("recv", "hello")
    assert tagged[1] == ("send", "hello")
    assert tagged[2] == ("send", "reset") and tagged[3] == ("recv", "ack")
    body = tagged[4:-1]
    assert len(body) % 2 == 0
    for i in range(0, len(body), 2):
        assert body[i] == ("send", "observe")
        assert body[i + 1] == ("recv", "action")
    assert tagged[-1] == ("send", "bye")
