"""Live session: stream listeners, fusion loop on the wall clock, HTTP surface.

One orchestrator thread owns all mutable state. Listeners (screw-link
sessions, the local observation-stream socket, control requests) communicate
with it exclusively through an inbox queue of timestamped messages. The HTTP
server exposes:

  GET  /state    current snapshot (stage, phase, holes, guidance, paused)
  GET  /events   server-sent events stream of verifier events (?since=<id>)
  GET  /report   operation report JSON (outcome InProgress until the end)
  POST /control  {"cmd": "pause"|"resume"|"abort"|"ack_guidance", ...}

Pause freezes verification, not staleness: tick ages keep accumulating, so a
dead camera still shows up as stale while paused.

Inbound record timestamps are rebased to the arrival clock; sender clocks are
not trusted for staleness accounting.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
import time
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, urlparse

from .fsm import (
    AssemblyComplete,
    Guidance,
    VerifierState,
    initial_state,
    step,
)
from .gesture import GestureConfig, WindowClassifier
from .model import ObjAngle, ThresholdConfig
from .plan import AssemblyPlan
from .replayio import (
    AngleRecord,
    DetRecord,
    HandRecord,
    HolesRecord,
    MetaRecord,
    ReplayFormatError,
    _parse_record,
)
from .screwlink import HoleReport, ScrewLinkServer
from .session import FusionBuffers, LogEntry, OperationReport, build_report

DEFAULT_HTTP_PORT = 7700
DEFAULT_SCREW_PORT = 7701
DEFAULT_STREAM_PORT = 7702


def _mono_ms() -> int:
    return time.monotonic_ns() // 1_000_000


class _EventBroker:
    """Fan-out of event envelopes to SSE subscribers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self.backlog: list[dict[str, Any]] = []

    def publish(self, envelope: dict[str, Any]) -> None:
        with self._lock:
            self.backlog.append(envelope)
            for q in self._subscribers:
                q.put(envelope)

    def subscribe(self, since: int) -> tuple[list[dict[str, Any]], queue.Queue]:
        q: queue.Queue = queue.Queue()
        with self._lock:
            replay = [e for e in self.backlog if e["event_id"] > since]
            self._subscribers.append(q)
        return replay, q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


class LiveSession:
    """Owns verifier state and buffers; everything arrives through the inbox."""

    def __init__(
        self,
        plan: AssemblyPlan,
        cfg: ThresholdConfig,
        report_path: str | None = None,
        classifier: WindowClassifier | None = None,
        gesture_cfg: GestureConfig = GestureConfig(),
        session_id: str | None = None,
    ):
        self.plan = plan
        self.cfg = cfg
        self.report_path = report_path
        self.buffers = FusionBuffers(cfg, classifier, gesture_cfg)
        self.state: VerifierState = initial_state(plan)
        self.session_id = session_id or f"live-{int(time.time())}"
        self.inbox: "queue.Queue[tuple[str, Any]]" = queue.Queue()
        self.broker = _EventBroker()
        self.log: list[LogEntry] = []
        self.event_seq = 0  # one id sequence for everything published on /events
        self.paused = False
        self.complete = False
        self.aborted = False
        self.active_guidance: dict[str, Any] | None = None
        self.acked_ids: set[int] = set()
        self._epoch = _mono_ms()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._final_report: OperationReport | None = None
        self._report_lock = threading.Lock()
        self._started_ms = 0
        self._last_tick = -1

    # --- clock ---

    def now_ms(self) -> int:
        return _mono_ms() - self._epoch

    # --- inbox producers (called from listener threads) ---

    def submit_record(self, record) -> None:
        self.inbox.put(("record", record))

    def submit_hole_reports(self, _sender_t: int, reports: tuple[HoleReport, ...]) -> None:
        now = self.now_ms()
        rebased = tuple(replace(r, t_ms=now) for r in reports)
        self.inbox.put(("record", HolesRecord(t_ms=now, reports=rebased)))

    def submit_control(self, cmd: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        """Synchronous control request; returns (http_status, body)."""
        done = threading.Event()
        slot: dict[str, Any] = {}
        self.inbox.put(("control", (cmd, done, slot)))
        if not done.wait(timeout=5.0):
            return 500, {"error": "control timed out"}
        return slot["status"], slot["body"]

    # --- orchestrator ---

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run_loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def wait(self, timeout: float | None = None) -> bool:
        if self._thread is None:
            return True
        self._thread.join(timeout=timeout)
        return not self._thread.is_alive()

    def _run_loop(self) -> None:
        tick_ms = self.cfg.tick_ms
        while not self._stop.is_set() and not self.aborted:
            self._drain_inbox()
            now = self.now_ms()
            tick = (now // tick_ms) * tick_ms
            if tick > self._last_tick:
                self._last_tick = tick
                if not self.paused and not self.complete:
                    self._do_tick(tick)
            time.sleep(tick_ms / 3000.0)
        self._finalize()

    def _drain_inbox(self) -> None:
        while True:
            try:
                kind, payload = self.inbox.get_nowait()
            except queue.Empty:
                return
            if kind == "record":
                self.buffers.ingest(payload)
            elif kind == "control":
                cmd, done, slot = payload
                status, body = self._apply_control(cmd)
                slot["status"], slot["body"] = status, body
                done.set()

    def _publish(self, t_ms: int, event_dict: dict[str, Any]) -> int:
        self.event_seq += 1
        self.broker.publish({"event_id": self.event_seq, "t_ms": t_ms, "event": event_dict})
        return self.event_seq

    def _do_tick(self, tick: int) -> None:
        obs = self.buffers.fuse(tick)
        if self.state.prev_tick_ms is not None and obs.tick_ms <= self.state.prev_tick_ms:
            return
        self.state, events = step(self.state, obs, self.plan, self.cfg)
        for event in events:
            event_id = self._publish(tick, event.to_dict())
            self.log.append(LogEntry(event_id=event_id, t_ms=tick, event=event))
            if isinstance(event, Guidance):
                self.active_guidance = {"event_id": event_id, **event.to_dict()}
            if isinstance(event, AssemblyComplete):
                self.complete = True
        if self.complete and self._final_report is None:
            self._write_report()

    def _apply_control(self, cmd: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        name = cmd.get("cmd")
        if name == "pause":
            self.paused = True
        elif name == "resume":
            self.paused = False
        elif name == "abort":
            self.aborted = True
        elif name == "ack_guidance":
            event_id = cmd.get("event_id")
            if not isinstance(event_id, int) or event_id < 1 or event_id > self.event_seq:
                return 409, {"error": f"unknown event_id {event_id!r}"}
            self.acked_ids.add(event_id)
            if self.active_guidance and self.active_guidance.get("event_id") == event_id:
                self.active_guidance = None
            self._publish(self.now_ms(), {"type": "GuidanceAcknowledged", "acked_event_id": event_id})
        else:
            return 409, {"error": f"unknown command {name!r}"}
        return 200, {"applied": self.snapshot()}

    def snapshot(self) -> dict[str, Any]:
        holes = self.buffers.holes.snapshot(self.now_ms(), self.cfg.hole_ttl_ms)
        return {
            "session_id": self.session_id,
            "plan_id": self.plan.plan_id,
            "stage_ordinal": self.state.stage_ordinal,
            "stages_total": len(self.plan.stages),
            "phase": self.state.phase.value,
            "paused": self.paused,
            "complete": self.complete,
            "outcome": self._outcome(),
            "holes": {h: st.state.value for h, st in sorted(holes.items())},
            "last_guidance": self.active_guidance,
            "last_event_id": self.event_seq,
        }

    def _outcome(self) -> str:
        if self.complete:
            return "Complete"
        if self.aborted:
            return "Aborted"
        return "InProgress"

    def current_report(self) -> OperationReport:
        with self._report_lock:
            if self._final_report is not None:
                return self._final_report
            ended = max(self._last_tick, 0)
            return build_report(
                self.session_id, self.plan.plan_id, list(self.log),
                started_ms=self._started_ms, ended_ms=ended, outcome=self._outcome(),
            )

    def _write_report(self) -> None:
        with self._report_lock:
            ended = max(self._last_tick, 0)
            outcome = "Complete" if self.complete else "Aborted"
            self._final_report = build_report(
                self.session_id, self.plan.plan_id, list(self.log),
                started_ms=self._started_ms, ended_ms=ended, outcome=outcome,
            )
            if self.report_path:
                with open(self.report_path, "w", encoding="utf-8") as fh:
                    fh.write(self._final_report.dumps())

    def _finalize(self) -> None:
        if self._final_report is None:
            self._write_report()


# --- stream listener ------------------------------------------------------------------

class StreamListener:
    """TCP listener for the local observation stream: one replay record per line.

    Timestamps are rebased to arrival time; meta records are accepted and
    ignored, malformed lines are counted and dropped (a live feed must not die
    on one bad line).
    """

    def __init__(self, session: LiveSession, host: str = "127.0.0.1", port: int = DEFAULT_STREAM_PORT):
        self.session = session
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self.port = self._sock.getsockname()[1]
        self.dropped_lines = 0
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
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
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _rebase(self, record, now: int):
        if isinstance(record, DetRecord):
            frame = replace(record.frame, t_ms=now)
            return DetRecord(t_ms=now, frame=frame)
        if isinstance(record, HandRecord):
            return replace(record, t_ms=now)
        if isinstance(record, AngleRecord):
            return AngleRecord(t_ms=now, angle=ObjAngle(t_ms=now, degrees=record.angle.degrees, conf=record.angle.conf))
        if isinstance(record, HolesRecord):
            return HolesRecord(t_ms=now, reports=tuple(replace(r, t_ms=now) for r in record.reports))
        return record

    def _serve(self, conn: socket.socket) -> None:
        conn.settimeout(0.2)
        buffer = bytearray()
        while not self._stop.is_set():
            try:
                chunk = conn.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buffer.extend(chunk)
            while True:
                newline = buffer.find(b"\n")
                if newline < 0:
                    break
                line = bytes(buffer[:newline])
                del buffer[: newline + 1]
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    record = _parse_record(raw, 0)
                except (json.JSONDecodeError, ReplayFormatError, ValueError):
                    self.dropped_lines += 1
                    continue
                if isinstance(record, MetaRecord):
                    continue
                self.session.submit_record(self._rebase(record, self.session.now_ms()))
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


# --- HTTP surface ----------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "stageverify"

    @property
    def session(self) -> LiveSession:
        return self.server.session  # type: ignore[attr-defined]

    def log_message(self, *args) -> None:  # quiet by default
        pass

    def _json(self, status: int, body: dict[str, Any]) -> None:
        payload = json.dumps(body, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        if url.path == "/state":
            self._json(200, self.session.snapshot())
        elif url.path == "/report":
            self._json(200, self.session.current_report().to_dict())
        elif url.path == "/events":
            self._serve_events(url)
        else:
            self._json(404, {"error": f"no such path {url.path}"})

    def _serve_events(self, url) -> None:
        params = parse_qs(url.query)
        try:
            since = int(params.get("since", ["0"])[0])
        except ValueError:
            since = 0
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        backlog, q = self.session.broker.subscribe(since)
        try:
            for envelope in backlog:
                self._write_event(envelope)
            while not self.session._stop.is_set() and not self.session.aborted:
                try:
                    envelope = q.get(timeout=0.25)
                except queue.Empty:
                    continue
                self._write_event(envelope)
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.session.broker.unsubscribe(q)

    def _write_event(self, envelope: dict[str, Any]) -> None:
        data = json.dumps(envelope, sort_keys=True)
        self.wfile.write(f"id: {envelope['event_id']}\ndata: {data}\n\n".encode("utf-8"))
        self.wfile.flush()

    def do_POST(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path != "/control":
            self._json(404, {"error": f"no such path {url.path}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            cmd = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._json(400, {"error": "control body must be JSON"})
            return
        status, body = self.session.submit_control(cmd if isinstance(cmd, dict) else {})
        self._json(status, body)


class LiveServer:
    """Composition of one live session with all of its listeners."""

    def __init__(
        self,
        plan: AssemblyPlan,
        cfg: ThresholdConfig | None = None,
        http_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_HTTP_PORT),
        screw_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_SCREW_PORT),
        stream_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_STREAM_PORT),
        report_path: str | None = None,
        classifier: WindowClassifier | None = None,
    ):
        cfg = cfg or ThresholdConfig()
        self.session = LiveSession(plan, cfg, report_path=report_path, classifier=classifier)
        self.screw_server = ScrewLinkServer(
            sink=self.session.submit_hole_reports, host=screw_addr[0], port=screw_addr[1], tick_ms=cfg.tick_ms
        )
        self.stream_listener = StreamListener(self.session, host=stream_addr[0], port=stream_addr[1])
        self.http_server = ThreadingHTTPServer(http_addr, _Handler)
        self.http_server.session = self.session  # type: ignore[attr-defined]
        self.http_server.daemon_threads = True
        self.http_port = self.http_server.server_address[1]
        self.screw_port = self.screw_server.port
        self.stream_port = self.stream_listener.port
        self._http_thread = threading.Thread(target=self.http_server.serve_forever, daemon=True)
        self._started = False

    def start(self) -> None:
        self.session.start()
        self._http_thread.start()
        self._started = True

    def wait(self, timeout: float | None = None) -> bool:
        return self.session.wait(timeout)

    def stop(self) -> OperationReport:
        self.session.stop()
        self.screw_server.stop()
        self.stream_listener.stop()
        if self._started:
            self.http_server.shutdown()
        self.http_server.server_close()
        if self._started:
            self._http_thread.join(timeout=2.0)
        return self.session.current_report()


def run_live(
    plan: AssemblyPlan,
    cfg: ThresholdConfig | None = None,
    http_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_HTTP_PORT),
    screw_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_SCREW_PORT),
    stream_addr: tuple[str, int] = ("127.0.0.1", DEFAULT_STREAM_PORT),
    report_path: str | None = None,
) -> OperationReport:
    """Serve a live session until it is aborted (via POST /control or Ctrl-C)."""
    server = LiveServer(plan, cfg, http_addr, screw_addr, stream_addr, report_path)
    server.start()
    try:
        while not server.wait(timeout=0.5):
            pass
    except KeyboardInterrupt:
        server.session.aborted = True
        server.wait(timeout=3.0)
    return server.stop()
