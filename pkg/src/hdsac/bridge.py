"""WebSocket boundary for live human supervision.

One JSON text message per WebSocket frame, canonical key order (sorted,
no whitespace), schema version 1; field-by-field reference in PROTOCOL.md.
Units: meters, radians, m/s; actions normalized to [-1, 1].

The trainer side never blocks on the network: frames go through a
drop-oldest queue of depth 2 and are pushed to clients by per-connection
sender threads, commands land in the supervisor's mailbox the moment they
arrive.  The first client to finish the handshake drives; later clients
watch read-only.
"""

import json
import math
import threading
import time

from .errors import ContractViolation
from .sim import SimConfig

SCHEMA_VERSION = 1
FRAME_CHECKPOINTS = 40   # upcoming route checkpoints included per frame
QUEUE_DEPTH = 2
COMMAND_KINDS = ("engage", "disengage", "action")


# -- messages ----------------------------------------------------------------

def _canonical(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"))


def _check_finite(value, where: str) -> None:
    if isinstance(value, float) and not math.isfinite(value):
        raise ContractViolation(f"non-finite value in {where}")
    if isinstance(value, dict):
        for v in value.values():
            _check_finite(v, where)
    elif isinstance(value, (list, tuple)):
        for v in value:
            _check_finite(v, where)


def build_frame(step: int, world, takeover: bool, info: dict,
                half_width: float) -> dict:
    """Assemble the outbound telemetry frame from the live world state.

    `info` is the trainer's per-step stats dict; missing telemetry (before
    the first learner update) is reported as 0.0 rather than omitted so
    the schema stays fixed.
    """
    nxt = world.scn.checkpoints[world.next_idx:
                                world.next_idx + FRAME_CHECKPOINTS]
    return {
        "type": "frame",
        "v": SCHEMA_VERSION,
        "step": int(step),
        "ego": {"x": float(world.x), "y": float(world.y),
                "heading": float(world.heading),
                "speed": float(world.speed)},
        "half_width": float(half_width),
        "obstacles": [[float(c) for c in row] for row in world.obstacles],
        "checkpoints": [[float(p[0]), float(p[1])] for p in nxt],
        "takeover": bool(takeover),
        "takeover_rate": float(info.get("takeover_rate", 0.0)),
        "q_human": float(info.get("q_human", 0.0)),
        "q_novice": float(info.get("q_novice", 0.0)),
        "episodes": int(info.get("episodes", 0)),
        "collisions": int(info.get("collisions", 0)),
        "human_data": int(info.get("human_data", 0)),
        "total_data": int(info.get("total_data", 0)),
    }


def encode_frame(frame: dict) -> str:
    _check_finite(frame, "frame")
    return _canonical(frame)


def decode_frame(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"unparseable frame: {exc.msg}") from exc
    if not isinstance(msg, dict) or msg.get("type") != "frame":
        raise ContractViolation("not a frame message")
    if msg.get("v") != SCHEMA_VERSION:
        raise ContractViolation(f"frame schema {msg.get('v')}, "
                                f"expected {SCHEMA_VERSION}")
    return msg


def encode_command(kind: str, action=None, stamp: float = 0.0) -> str:
    msg = {"type": "command", "kind": kind, "stamp": float(stamp)}
    if action is not None:
        msg["action"] = [float(action[0]), float(action[1])]
    return _canonical(_validate_command(msg))


def decode_command(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"unparseable command: {exc.msg}") from exc
    if not isinstance(msg, dict) or msg.get("type") != "command":
        raise ContractViolation("not a command message")
    return _validate_command(msg)


def _validate_command(msg: dict) -> dict:
    kind = msg.get("kind")
    if kind not in COMMAND_KINDS:
        raise ContractViolation(f"unknown command kind {kind!r}")
    has_action = "action" in msg
    if has_action != (kind == "action"):
        raise ContractViolation("action payload present iff kind=action")
    if has_action:
        a = msg["action"]
        if (not isinstance(a, (list, tuple)) or len(a) != 2
                or not all(isinstance(v, (int, float))
                           and math.isfinite(v) for v in a)):
            raise ContractViolation("action must be two finite numbers")
        if not all(-1.0 <= v <= 1.0 for v in a):
            raise ContractViolation("action outside [-1, 1]")
    if not isinstance(msg.get("stamp"), (int, float)):
        raise ContractViolation("command needs a numeric stamp")
    return msg


def apply_command(msg: dict, mailbox, now: float | None = None) -> None:
    """Feed one decoded command into the supervisor mailbox.  The arrival
    time (server clock) drives staleness, not the client's stamp."""
    if now is None:
        now = time.monotonic()
    kind = msg["kind"]
    if kind == "engage":
        mailbox.set_engaged(True)
    elif kind == "disengage":
        mailbox.set_engaged(False)
    else:
        mailbox.put_action(msg["action"], now)


# -- server ------------------------------------------------------------------

class BridgeServer:
    """Serves frames to, and takes commands from, supervision consoles."""

    def __init__(self, bind: str, port: int, mailbox, sim_cfg=None,
                 clock=time.monotonic):
        self.bind = bind
        self.port = port
        self.mailbox = mailbox
        self.half_width = (sim_cfg or SimConfig()).half_width
        self.clock = clock
        self._cond = threading.Condition()
        self._queue = []            # [(seq, text)], newest last, len <= DEPTH
        self._seq = 0
        self._clients = set()
        self._controller = None
        self._stopped = False
        self._server = None
        self._thread = None

    # -- trainer side (hot path, must never block on the network) -----------

    def offer_frame(self, step, world, dec, info) -> None:
        if not self._clients:
            return
        text = encode_frame(build_frame(
            step, world, dec is not None and dec.intervened, info,
            self.half_width))
        with self._cond:
            self._seq += 1
            self._queue.append((self._seq, text))
            del self._queue[:-QUEUE_DEPTH]        # drop-oldest
            self._cond.notify_all()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        from websockets.sync.server import serve
        self._server = serve(self._handle, self.bind, self.port)
        try:
            self.port = self._server.socket.getsockname()[1]
        except (AttributeError, OSError):
            pass  # keep the configured port for display
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="bridge", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            clients = list(self._clients)
            self._cond.notify_all()
        for conn in clients:
            try:
                conn.close()
            except OSError:
                pass
        if self._server is not None:
            self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=3.0)

    # -- per-connection plumbing --------------------------------------------

    def _refuse(self, conn, reason: str) -> None:
        conn.send(_canonical({"type": "refused", "reason": reason}))

    def _handle(self, conn) -> None:
        from websockets.exceptions import ConnectionClosed
        control = False
        joined = False
        try:
            raw = conn.recv(timeout=5.0)
            try:
                hello = json.loads(raw)
            except json.JSONDecodeError:
                self._refuse(conn, "expected a hello message")
                return
            if not isinstance(hello, dict) or hello.get("type") != "hello":
                self._refuse(conn, "expected a hello message")
                return
            if hello.get("v") != SCHEMA_VERSION:
                self._refuse(conn, f"schema version {hello.get('v')}, "
                                   f"server speaks {SCHEMA_VERSION}")
                return
            with self._cond:
                if self._stopped:
                    return
                control = self._controller is None
                if control:
                    self._controller = conn
                self._clients.add(conn)
                joined = True
            conn.send(_canonical({
                "type": "welcome", "v": SCHEMA_VERSION,
                "role": "control" if control else "readonly"}))
            sender = threading.Thread(target=self._send_frames, args=(conn,),
                                      daemon=True)
            sender.start()
            while True:
                self._on_message(conn, conn.recv(), control)
        except (ConnectionClosed, TimeoutError, OSError):
            pass
        finally:
            if joined:
                with self._cond:
                    self._clients.discard(conn)
                    if self._controller is conn:
                        self._controller = None
                    self._cond.notify_all()
                if control:
                    # the driver vanished: fail safe to hands-off
                    self.mailbox.set_engaged(False)

    def _on_message(self, conn, text: str, control: bool) -> None:
        if not control:
            conn.send(_canonical({"type": "error",
                                  "reason": "read-only client"}))
            return
        try:
            msg = decode_command(text)
        except ContractViolation as exc:
            conn.send(_canonical({"type": "error", "reason": str(exc)}))
            return
        apply_command(msg, self.mailbox, now=self.clock())
        conn.send(_canonical({"type": "ack", "kind": msg["kind"]}))

    def _send_frames(self, conn) -> None:
        from websockets.exceptions import ConnectionClosed
        last = 0
        while True:
            with self._cond:
                pending = [item for item in self._queue if item[0] > last]
                if not pending:
                    if self._stopped or conn not in self._clients:
                        return
                    self._cond.wait(timeout=0.25)
                    continue
            try:
                for seq, text in pending:
                    conn.send(text)
                    last = seq
            except (ConnectionClosed, OSError):
                return
