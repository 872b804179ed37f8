"""Screw-hole observation channel between close-range camera nodes and the engine.

Wire format is newline-delimited JSON over a reliable ordered byte stream
(TCP), protocol version 1, handshake Hello -> Ack, then Holes/Heartbeat until
Bye. The session layer is clock-driven and transport-agnostic so heartbeat
behavior is testable against a mock clock; a thin TCP server wraps it.

Hole reports are consolidated per hole by confidence-weighted majority over a
staleness window; holes nobody has reported recently become Unknown.
"""

from __future__ import annotations

import json
import math
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Union

from .canonjson import canonical_bytes
from .model import ThresholdConfig

PROTO_VERSION = 1
DEFAULT_PORT = 7701
MAX_LINE_BYTES = 64 * 1024
HEARTBEAT_INTERVAL_MS = 1000
HEARTBEAT_TIMEOUT_MS = 3000
MIN_REPORT_CONF = 0.3


class HoleState(str, Enum):
    EMPTY = "empty"
    IN_PROCESS = "in_process"
    ASSEMBLED = "assembled"
    UNKNOWN = "unknown"  # aggregation-only: never valid on the wire


_WIRE_STATES = {s.value: s for s in (HoleState.EMPTY, HoleState.IN_PROCESS, HoleState.ASSEMBLED)}
# tie-break order: the less-finished state wins
_CONSERVATIVE_RANK = {HoleState.EMPTY: 0, HoleState.IN_PROCESS: 1, HoleState.ASSEMBLED: 2}


class ProtocolErrorKind(str, Enum):
    MALFORMED_JSON = "MalformedJson"
    UNKNOWN_TYPE = "UnknownType"
    FIELD_RANGE = "FieldRange"
    BAD_SEQUENCE = "BadSequence"


class ProtocolError(ValueError):
    def __init__(self, kind: ProtocolErrorKind, detail: str = ""):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)


@dataclass(frozen=True)
class HoleReport:
    hole_id: str
    state: HoleState
    conf: float
    t_ms: int

    def __post_init__(self) -> None:
        if not self.hole_id:
            raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, "empty hole id")
        if self.state not in _WIRE_STATES.values():
            raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"state {self.state} not a wire state")
        if not isinstance(self.conf, (int, float)) or not math.isfinite(self.conf) or not 0.0 <= self.conf <= 1.0:
            raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"conf {self.conf!r} outside [0, 1]")


@dataclass(frozen=True)
class Hello:
    role: str
    session: str
    proto: int = PROTO_VERSION


@dataclass(frozen=True)
class Ack:
    session: str
    tick_ms: int


@dataclass(frozen=True)
class Holes:
    t_ms: int
    reports: tuple[HoleReport, ...]


@dataclass(frozen=True)
class Heartbeat:
    t_ms: int


@dataclass(frozen=True)
class Bye:
    reason: str = ""


LinkMessage = Union[Hello, Ack, Holes, Heartbeat, Bye]


def encode_message(msg: LinkMessage) -> bytes:
    """One minified JSON object, "type" first then alphabetical, newline-terminated."""
    if isinstance(msg, Hello):
        payload = {"type": "hello", "proto": msg.proto, "role": msg.role, "session": msg.session}
    elif isinstance(msg, Ack):
        payload = {"type": "ack", "session": msg.session, "tick_ms": msg.tick_ms}
    elif isinstance(msg, Holes):
        payload = {
            "type": "holes",
            "t": msg.t_ms,
            "reports": [_report_to_wire(r, msg.t_ms) for r in msg.reports],
        }
    elif isinstance(msg, Heartbeat):
        payload = {"type": "hb", "t": msg.t_ms}
    elif isinstance(msg, Bye):
        payload = {"type": "bye", "reason": msg.reason}
    else:
        raise TypeError(f"not a link message: {msg!r}")
    return canonical_bytes(payload)


def _report_to_wire(r: HoleReport, holes_t: int) -> dict:
    wire = {"conf": r.conf, "hole": r.hole_id, "state": r.state.value}
    if r.t_ms != holes_t:
        wire["t"] = r.t_ms
    return wire


def _need(obj: Mapping, key: str, kinds: tuple[type, ...], what: str):
    if key not in obj:
        raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"{what} missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"{what}.{key} has wrong type")
    return value


def _report_from_wire(raw, default_t: int) -> HoleReport:
    if not isinstance(raw, dict):
        raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, "report is not an object")
    hole = _need(raw, "hole", (str,), "report")
    state_name = _need(raw, "state", (str,), "report")
    if state_name not in _WIRE_STATES:
        raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"state {state_name!r} not in wire vocabulary")
    conf = _need(raw, "conf", (int, float), "report")
    t = raw.get("t", default_t)
    if not isinstance(t, int) or isinstance(t, bool):
        raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, "report.t must be an integer")
    return HoleReport(hole_id=hole, state=_WIRE_STATES[state_name], conf=float(conf), t_ms=t)


def decode_message(line: bytes) -> LinkMessage:
    """Parse and validate one complete newline-terminated wire line."""
    try:
        raw = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(ProtocolErrorKind.MALFORMED_JSON, str(e)) from None
    if not isinstance(raw, dict):
        raise ProtocolError(ProtocolErrorKind.MALFORMED_JSON, "wire message must be a JSON object")
    mtype = raw.get("type")
    if mtype == "hello":
        proto = _need(raw, "proto", (int,), "hello")
        if proto != PROTO_VERSION:
            raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, f"unsupported proto {proto}")
        return Hello(role=_need(raw, "role", (str,), "hello"), session=_need(raw, "session", (str,), "hello"), proto=proto)
    if mtype == "ack":
        return Ack(session=_need(raw, "session", (str,), "ack"), tick_ms=_need(raw, "tick_ms", (int,), "ack"))
    if mtype == "hb":
        return Heartbeat(t_ms=_need(raw, "t", (int,), "hb"))
    if mtype == "holes":
        t = _need(raw, "t", (int,), "holes")
        reports = raw.get("reports")
        if not isinstance(reports, list):
            raise ProtocolError(ProtocolErrorKind.FIELD_RANGE, "holes.reports must be a list")
        return Holes(t_ms=t, reports=tuple(_report_from_wire(r, t) for r in reports))
    if mtype == "bye":
        return Bye(reason=str(raw.get("reason", "")))
    raise ProtocolError(ProtocolErrorKind.UNKNOWN_TYPE, f"type {mtype!r}")


# --- aggregation ---------------------------------------------------------------

@dataclass(frozen=True)
class HoleStatus:
    state: HoleState
    last_update_ms: int | None
    support_count: int


UNKNOWN_STATUS = HoleStatus(HoleState.UNKNOWN, None, 0)


class HoleAggregate:
    """Rolling per-hole report history with staleness-aware consolidation."""

    def __init__(self, history_per_hole: int = 64):
        self._history: dict[str, deque] = {}
        self._cap = history_per_hole

    def ingest(self, reports: Iterable[HoleReport]) -> None:
        for r in reports:
            self._history.setdefault(r.hole_id, deque(maxlen=self._cap)).append(r)

    def status(self, hole_id: str, now_ms: int, ttl_ms: int) -> HoleStatus:
        history = self._history.get(hole_id)
        if not history:
            return UNKNOWN_STATUS
        qualifying = [r for r in history if r.conf >= MIN_REPORT_CONF and 0 <= now_ms - r.t_ms <= ttl_ms]
        if not qualifying:
            return UNKNOWN_STATUS
        weights: dict[HoleState, float] = {}
        for r in qualifying:
            weights[r.state] = weights.get(r.state, 0.0) + r.conf
        state = min(weights, key=lambda s: (-weights[s], _CONSERVATIVE_RANK[s]))
        return HoleStatus(
            state=state,
            last_update_ms=max(r.t_ms for r in qualifying),
            support_count=len(qualifying),
        )

    def snapshot(self, now_ms: int, ttl_ms: int) -> dict[str, HoleStatus]:
        return {hole: self.status(hole, now_ms, ttl_ms) for hole in self._history}


def aggregate_holes(
    agg: HoleAggregate, now_ms: int, reports: Iterable[HoleReport], cfg: ThresholdConfig
) -> dict[str, HoleStatus]:
    """Fold new reports into the aggregate and return the consolidated view at now."""
    agg.ingest(reports)
    return agg.snapshot(now_ms, cfg.hole_ttl_ms)


# --- session state machine -------------------------------------------------------

class LinkOutcomeKind(str, Enum):
    CLEAN_BYE = "CleanBye"
    HEARTBEAT_TIMEOUT = "HeartbeatTimeout"
    PROTOCOL = "Protocol"
    TRANSPORT_CLOSED = "TransportClosed"


@dataclass(frozen=True)
class LinkOutcome:
    kind: LinkOutcomeKind
    detail: str = ""


ReportSink = Callable[[int, tuple[HoleReport, ...]], None]


class LinkSession:
    """Protocol state for one camera connection, driven by bytes and clock ticks.

    Only validated Holes messages ever reach the sink. The peer is declared
    lost after `heartbeat_timeout_ms` without any complete message.
    """

    def __init__(
        self,
        send: Callable[[bytes], None],
        sink: ReportSink,
        now_ms: int,
        tick_ms: int = 33,
        heartbeat_timeout_ms: int = HEARTBEAT_TIMEOUT_MS,
        max_line_bytes: int = MAX_LINE_BYTES,
    ):
        self._send = send
        self._sink = sink
        self._tick_ms = tick_ms
        self._timeout_ms = heartbeat_timeout_ms
        self._max_line = max_line_bytes
        self._buffer = bytearray()
        self._last_rx_ms = now_ms
        self._greeted = False
        self.outcome: LinkOutcome | None = None

    @property
    def closed(self) -> bool:
        return self.outcome is not None

    def _close(self, kind: LinkOutcomeKind, detail: str = "") -> None:
        if self.outcome is None:
            self.outcome = LinkOutcome(kind, detail)

    def on_bytes(self, data: bytes, now_ms: int) -> None:
        if self.closed:
            return
        self._buffer.extend(data)
        while not self.closed:
            newline = self._buffer.find(b"\n")
            if newline < 0:
                if len(self._buffer) > self._max_line:
                    self._close(LinkOutcomeKind.PROTOCOL, "line exceeds 64 KiB")
                return
            line = bytes(self._buffer[:newline])
            del self._buffer[: newline + 1]
            if len(line) > self._max_line:
                self._close(LinkOutcomeKind.PROTOCOL, "line exceeds 64 KiB")
                return
            try:
                self._handle(decode_message(line), now_ms)
            except ProtocolError as e:
                self._close(LinkOutcomeKind.PROTOCOL, str(e))
                return
            self._last_rx_ms = now_ms

    def _handle(self, msg: LinkMessage, now_ms: int) -> None:
        if isinstance(msg, Hello):
            if self._greeted:
                raise ProtocolError(ProtocolErrorKind.BAD_SEQUENCE, "duplicate hello")
            self._greeted = True
            self._send(encode_message(Ack(session=msg.session, tick_ms=self._tick_ms)))
            return
        if not self._greeted:
            raise ProtocolError(ProtocolErrorKind.BAD_SEQUENCE, "first message must be hello")
        if isinstance(msg, Holes):
            self._sink(msg.t_ms, msg.reports)
        elif isinstance(msg, Heartbeat):
            pass
        elif isinstance(msg, Bye):
            self._close(LinkOutcomeKind.CLEAN_BYE, msg.reason)
        else:
            raise ProtocolError(ProtocolErrorKind.BAD_SEQUENCE, f"unexpected {type(msg).__name__} from peer")

    def on_tick(self, now_ms: int) -> None:
        if not self.closed and now_ms - self._last_rx_ms > self._timeout_ms:
            self._close(LinkOutcomeKind.HEARTBEAT_TIMEOUT, f"silent for {now_ms - self._last_rx_ms} ms")

    def on_transport_closed(self) -> None:
        self._close(LinkOutcomeKind.TRANSPORT_CLOSED)


def _mono_ms() -> int:
    return time.monotonic_ns() // 1_000_000


class ScrewLinkServer:
    """TCP listener accepting camera-node connections, one LinkSession each."""

    def __init__(
        self,
        sink: ReportSink,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        tick_ms: int = 33,
        clock: Callable[[], int] = _mono_ms,
    ):
        self._sink = sink
        self._tick_ms = tick_ms
        self._clock = clock
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.outcomes: list[LinkOutcome] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket) -> None:
        session = LinkSession(
            send=lambda data: conn.sendall(data),
            sink=self._sink,
            now_ms=self._clock(),
            tick_ms=self._tick_ms,
        )
        conn.settimeout(0.1)
        try:
            while not session.closed and not self._stop.is_set():
                try:
                    chunk = conn.recv(4096)
                except socket.timeout:
                    chunk = None
                except OSError:
                    session.on_transport_closed()
                    break
                if chunk == b"":
                    session.on_transport_closed()
                    break
                if chunk:
                    session.on_bytes(chunk, self._clock())
                session.on_tick(self._clock())
        finally:
            self.outcomes.append(session.outcome or LinkOutcome(LinkOutcomeKind.TRANSPORT_CLOSED))
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=2.0)
        for t in self._threads:
            t.join(timeout=2.0)
