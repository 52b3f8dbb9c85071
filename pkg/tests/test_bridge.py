import json
import threading
import time

import numpy as np
import pytest
from websockets.sync.client import connect

from hdsac.bridge import (BridgeServer, SCHEMA_VERSION, apply_command,
                          build_frame, decode_command, decode_frame,
                          encode_command, encode_frame)
from hdsac.errors import ContractViolation
from hdsac.expert import Mailbox, RemoteSupervisor
from hdsac.sim import DriveEnv, SimConfig
from hdsac.trainer import RunConfig, TrainingRun


def hello(ws, v=SCHEMA_VERSION):
    ws.send(json.dumps({"type": "hello", "v": v}))
    return json.loads(ws.recv(timeout=5))


def random_frame(rng):
    n_obs, n_cp = int(rng.integers(0, 6)), int(rng.integers(0, 12))
    return {
        "type": "frame", "v": SCHEMA_VERSION,
        "step": int(rng.integers(0, 10**6)),
        "ego": {"x": float(rng.normal()), "y": float(rng.normal()),
                "heading": float(rng.uniform(-3.14, 3.14)),
                "speed": float(rng.uniform(0, 8))},
        "half_width": 1.75,
        "obstacles": [[float(v) for v in rng.normal(size=5)]
                      for _ in range(n_obs)],
        "checkpoints": [[float(v) for v in rng.normal(size=2)]
                        for _ in range(n_cp)],
        "takeover": bool(rng.integers(0, 2)),
        "takeover_rate": float(rng.uniform(0, 1)),
        "q_human": float(rng.normal()), "q_novice": float(rng.normal()),
        "episodes": int(rng.integers(0, 100)),
        "collisions": int(rng.integers(0, 100)),
        "human_data": int(rng.integers(0, 10**5)),
        "total_data": int(rng.integers(0, 10**5)),
    }


class TestCodec:
    def test_frame_round_trip_identity_1000(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            frame = random_frame(rng)
            assert decode_frame(encode_frame(frame)) == frame

    def test_empty_obstacle_list_survives(self):
        frame = random_frame(np.random.default_rng(1))
        frame["obstacles"] = []
        assert decode_frame(encode_frame(frame))["obstacles"] == []

    def test_non_finite_frame_rejected(self):
        frame = random_frame(np.random.default_rng(2))
        frame["ego"]["x"] = float("nan")
        with pytest.raises(ContractViolation):
            encode_frame(frame)

    def test_command_round_trip_identity(self):
        for text in (encode_command("engage", stamp=1.5),
                     encode_command("disengage"),
                     encode_command("action", action=(0.25, -0.5), stamp=2.0)):
            assert json.dumps(decode_command(text), sort_keys=True,
                              separators=(",", ":")) == text

    def test_action_payload_iff_action_kind(self):
        with pytest.raises(ContractViolation):
            encode_command("engage", action=(0.0, 0.0))
        with pytest.raises(ContractViolation):
            encode_command("action")
        with pytest.raises(ContractViolation):
            decode_command(json.dumps({"type": "command", "kind": "action",
                                       "action": [2.0, 0.0], "stamp": 0}))

    def test_wrong_version_frame_rejected(self):
        frame = random_frame(np.random.default_rng(3))
        frame["v"] = SCHEMA_VERSION + 1
        with pytest.raises(ContractViolation):
            decode_frame(encode_frame(frame))

    def test_build_frame_from_live_world(self):
        env = DriveEnv(SimConfig())
        env.reset(0)
        frame = build_frame(7, env.state, True, {"takeover_rate": 0.5}, 1.75)
        decoded = decode_frame(encode_frame(frame))
        assert decoded["step"] == 7 and decoded["takeover"] is True
        assert decoded["q_human"] == 0.0  # absent telemetry reports as zero
        assert len(decoded["checkpoints"]) > 0


class TestApplyCommand:
    def test_engage_action_disengage_cycle(self):
        box = Mailbox()
        apply_command(decode_command(encode_command("engage")), box, now=1.0)
        apply_command(decode_command(
            encode_command("action", action=(0.5, 0.1))), box, now=2.0)
        engaged, action, stamp = box.peek()
        assert engaged and stamp == 2.0
        np.testing.assert_allclose(action, [0.5, 0.1])
        apply_command(decode_command(encode_command("disengage")), box)
        assert box.peek() == (False, None, box.peek()[2])

    def test_action_while_disengaged_counted_not_applied(self):
        box = Mailbox()
        apply_command({"kind": "action", "action": [0.1, 0.1]}, box, now=1.0)
        assert box.action is None and box.ignored == 1


class _Server:
    """Context manager: BridgeServer on an ephemeral port."""

    def __init__(self, mailbox=None):
        self.mailbox = mailbox if mailbox is not None else Mailbox()
        self.server = BridgeServer("127.0.0.1", 0, self.mailbox)

    def __enter__(self):
        self.server.start()
        self.url = f"ws://127.0.0.1:{self.server.port}"
        return self

    def __exit__(self, *exc):
        self.server.stop()


class TestHandshake:
    def test_version_mismatch_refused_no_frames(self):
        with _Server() as s:
            with connect(s.url) as ws:
                reply = hello(ws, v=SCHEMA_VERSION + 1)
                assert reply["type"] == "refused"
                assert "version" in reply["reason"]

    def test_first_client_controls_second_reads(self):
        with _Server() as s:
            with connect(s.url) as a, connect(s.url) as b:
                assert hello(a)["role"] == "control"
                assert hello(b)["role"] == "readonly"
                b.send(encode_command("engage"))
                reply = json.loads(b.recv(timeout=5))
                assert reply["type"] == "error"
                assert not s.mailbox.engaged

    def test_control_slot_freed_on_disconnect(self):
        with _Server() as s:
            with connect(s.url) as a:
                assert hello(a)["role"] == "control"
                a.send(encode_command("engage"))
                json.loads(a.recv(timeout=5))
                assert s.mailbox.engaged
            deadline = time.monotonic() + 5
            while s.mailbox.engaged and time.monotonic() < deadline:
                time.sleep(0.01)
            assert not s.mailbox.engaged  # driver vanished -> hands-off
            with connect(s.url) as b:
                assert hello(b)["role"] == "control"

    def test_engage_and_action_reach_mailbox(self):
        with _Server() as s:
            with connect(s.url) as ws:
                hello(ws)
                ws.send(encode_command("engage"))
                assert json.loads(ws.recv(timeout=5))["kind"] == "engage"
                ws.send(encode_command("action", action=(0.3, -0.2)))
                assert json.loads(ws.recv(timeout=5))["kind"] == "action"
                engaged, action, _ = s.mailbox.peek()
                assert engaged
                np.testing.assert_allclose(action, [0.3, -0.2])

    def test_frames_flow_to_client(self):
        with _Server() as s:
            with connect(s.url) as ws:
                hello(ws)
                env = DriveEnv(SimConfig())
                env.reset(0)
                deadline = time.monotonic() + 5
                while time.monotonic() < deadline and not s.server._clients:
                    time.sleep(0.01)
                for step in (1, 2, 3):
                    s.server.offer_frame(step, env.state, None,
                                         {"takeover_rate": 0.0})
                got = decode_frame(ws.recv(timeout=5))
                assert got["step"] >= 1


def small_run(out, sup=None, on_step=None, steps=250):
    cfg = RunConfig(out_dir=str(out), supervisor="remote", total_steps=steps,
                    warmup=100, window=50, eval_every=steps, eval_episodes=1)
    return TrainingRun(cfg, supervisor=sup, on_step=on_step)


class TestLiveLoop:
    def test_remote_takeover_lands_in_human_buffer(self, tmp_path):
        """A synthetic client engages and steers; within a few frames the
        takeover flag comes back set and human transitions accumulate."""
        sup = RemoteSupervisor(SimConfig())
        server = BridgeServer("127.0.0.1", 0, sup.mailbox)
        server.start()
        run = small_run(tmp_path / "r", sup=sup, on_step=server.offer_frame)
        flagged_after = []

        def client():
            with connect(f"ws://127.0.0.1:{server.port}") as ws:
                hello(ws)
                first = None
                while True:
                    msg = json.loads(ws.recv(timeout=10))
                    if msg.get("type") != "frame":
                        continue
                    if first is None:
                        first = msg["step"]
                        ws.send(encode_command("engage"))
                    else:
                        ws.send(encode_command("action", action=(0.0, 1.0)))
                    if msg["takeover"]:
                        flagged_after.append(msg["step"] - first)
                        return

        t = threading.Thread(target=client, daemon=True)
        t.start()
        try:
            run.run()
        finally:
            server.stop()
        t.join(timeout=10)
        assert flagged_after, "client never saw its takeover reflected"
        assert len(run.human_buf) > 0
        assert run.human_buf.act[0][1] == pytest.approx(1.0)

    def test_no_client_run_matches_bridge_disabled(self, tmp_path):
        """Bridge serving on a port but with nobody connected must not
        perturb training in any way."""
        sup_a = RemoteSupervisor(SimConfig())
        server = BridgeServer("127.0.0.1", 0, sup_a.mailbox)
        server.start()
        try:
            small_run(tmp_path / "a", sup=sup_a,
                      on_step=server.offer_frame).run()
        finally:
            server.stop()
        small_run(tmp_path / "b", sup=RemoteSupervisor(SimConfig())).run()
        a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
        b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
        assert a == b and len(a) > 0
