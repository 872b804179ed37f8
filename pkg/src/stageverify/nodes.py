"""Simulator-backed nodes for live demos and integration tests.

`ScrewCamNode` speaks the screw-link protocol as a close-range camera would;
`StreamFeeder` plays replay records into the local observation-stream socket
in (optionally scaled) real time.
"""

from __future__ import annotations

import socket
import threading
import time
from typing import Iterable, Sequence

from .canonjson import canonical_bytes
from .replayio import ReplayRecord, record_to_dict
from .screwlink import (
    Bye,
    Heartbeat,
    Hello,
    HoleReport,
    Holes,
    HEARTBEAT_INTERVAL_MS,
    decode_message,
    encode_message,
)


class ScrewCamNode:
    """Protocol client: Hello/Ack handshake, then scheduled hole reports + heartbeats.

    `schedule` is a list of (t_rel_ms, reports) pairs relative to the moment
    the node starts sending.
    """

    def __init__(self, host: str, port: int, session: str = "demo", role: str = "screwcam"):
        self._sock = socket.create_connection((host, port), timeout=5.0)
        self._session = session
        self._sock.sendall(encode_message(Hello(role=role, session=session)))
        self._sock.settimeout(5.0)
        ack_line = self._read_line()
        ack = decode_message(ack_line)
        self.tick_ms = getattr(ack, "tick_ms", 33)
        self._thread: threading.Thread | None = None

    def _read_line(self) -> bytes:
        data = bytearray()
        while b"\n" not in data:
            chunk = self._sock.recv(1024)
            if not chunk:
                raise ConnectionError("peer closed during handshake")
            data.extend(chunk)
        return bytes(data.split(b"\n", 1)[0])

    def send_reports(self, t_ms: int, reports: Sequence[HoleReport]) -> None:
        self._sock.sendall(encode_message(Holes(t_ms=t_ms, reports=tuple(reports))))

    def send_heartbeat(self, t_ms: int) -> None:
        self._sock.sendall(encode_message(Heartbeat(t_ms=t_ms)))

    def run_schedule(
        self, schedule: Iterable[tuple[int, Sequence[HoleReport]]], time_scale: float = 1.0
    ) -> None:
        """Send the schedule in scaled real time (blocking); stops quietly if
        the link goes away mid-run."""
        start = time.monotonic()
        last_hb = 0.0
        try:
            for t_rel, reports in schedule:
                target = start + (t_rel / 1000.0) * time_scale
                while True:
                    now = time.monotonic()
                    if now >= target:
                        break
                    if (now - start) - last_hb >= (HEARTBEAT_INTERVAL_MS / 1000.0) * time_scale:
                        self.send_heartbeat(int((now - start) * 1000))
                        last_hb = now - start
                    time.sleep(min(0.02, target - now))
                self.send_reports(t_rel, reports)
        except OSError:
            pass

    def run_schedule_async(self, schedule, time_scale: float = 1.0) -> threading.Thread:
        self._thread = threading.Thread(target=self.run_schedule, args=(schedule, time_scale), daemon=True)
        self._thread.start()
        return self._thread

    def close(self, reason: str = "done") -> None:
        try:
            self._sock.sendall(encode_message(Bye(reason=reason)))
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass

    def kill(self) -> None:
        """Drop the connection without a Bye, as a dying camera would."""
        try:
            self._sock.close()
        except OSError:
            pass


class StreamFeeder:
    """Plays replay records into the observation-stream socket, paced by their timestamps."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port), timeout=5.0)

    def play(self, records: Iterable[ReplayRecord], time_scale: float = 1.0) -> None:
        start = time.monotonic()
        try:
            for record in records:
                t = getattr(record, "t_ms", 0)
                target = start + (t / 1000.0) * time_scale
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                self._sock.sendall(canonical_bytes(record_to_dict(record)))
        except OSError:
            pass

    def play_async(self, records, time_scale: float = 1.0) -> threading.Thread:
        thread = threading.Thread(target=self.play, args=(list(records), time_scale), daemon=True)
        thread.start()
        return thread

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
