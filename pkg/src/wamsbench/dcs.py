"""Data concentrator: frame reassembly, log formats, and the live server.

The concentrator side is deliberately dumb: it sees an in-order byte
stream per connection (the transport already fixed ordering), carves it
into 55-byte frames, stamps each completed frame with the arrival time
of its final byte, and appends everything to two JSON-lines logs:

  capture.jsonl       one record per wire event (CaptureRecord)
  measurements.jsonl  one record per decoded frame (MeasurementRow)

Both logs start with a ``{"header": ...}`` line carrying run metadata
and end with an ``{"integrity": ...}`` trailer of counters, so a log is
self-describing and an analyzer can detect truncation.  All times are
UTC milliseconds; fractional digits carry microsecond precision.

A frame that arrives twice (retransmitted after a late ACK, or resent
across a reconnect) produces one row only: first arrival wins, the
duplicate is counted.  Corrupt bytes never kill a connection's stream;
the assembler scans forward to the next frame boundary and counts what
it skipped.
"""

import json
import logging
import queue
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .frame import FRAME_LEN, MAGIC_BYTES, ChecksumError, FdrFrame, FramingError, decode_frame

log = logging.getLogger(__name__)

# a connection that produced this much junk without one valid frame is
# not speaking the protocol and gets dropped
JUNK_DROP_BYTES = 65_536


def dumps(obj) -> str:
    """Deterministic one-line JSON: fixed separators, insertion order."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def ms(value: float) -> float:
    """Quantize a millisecond value to microsecond precision."""
    return round(value, 3)


@dataclass(frozen=True)
class MeasurementRow:
    device_id: int
    frame_seq: int
    frame_timestamp: int
    arrival_time: float
    frequency: float
    voltage_mag: float
    voltage_angle: float
    status: int

    @classmethod
    def from_frame(cls, frame: FdrFrame, arrival_ms: float) -> "MeasurementRow":
        return cls(
            device_id=frame.device_id,
            frame_seq=frame.frame_seq,
            frame_timestamp=frame.utc_timestamp,
            arrival_time=ms(arrival_ms),
            frequency=frame.frequency,
            voltage_mag=frame.voltage_mag,
            voltage_angle=frame.voltage_angle,
            status=frame.status,
        )

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id,
            "frame_seq": self.frame_seq,
            "frame_timestamp": self.frame_timestamp,
            "arrival_time": self.arrival_time,
            "frequency": self.frequency,
            "voltage_mag": self.voltage_mag,
            "voltage_angle": self.voltage_angle,
            "status": self.status,
        }


@dataclass(frozen=True)
class CaptureRecord:
    """One wire event.

    wall_time is the arrival instant at the receiver, null for copies
    the channel dropped (they never arrived anywhere, but they consumed
    uplink bytes and the accounting must see them).  frame_complete
    lists every frame whose final byte was released to the application
    by this segment, each entry carrying the frame's own timestamp and
    the arrival time of its last byte.
    """

    wall_time: Optional[float]
    device_id: Optional[int]
    direction: str  # UPLINK or ACK
    seq_range: tuple
    payload_bytes: int
    header_bytes: int
    retransmission_class: str
    frame_complete: Optional[list]

    def to_json(self) -> dict:
        return {
            "wall_time": self.wall_time,
            "device_id": self.device_id,
            "direction": self.direction,
            "seq_range": list(self.seq_range),
            "payload_bytes": self.payload_bytes,
            "header_bytes": self.header_bytes,
            "retransmission_class": self.retransmission_class,
            "frame_complete": self.frame_complete,
        }


def frame_complete_entry(row: MeasurementRow) -> dict:
    return {
        "frame_seq": row.frame_seq,
        "frame_timestamp": row.frame_timestamp,
        "arrival_time_of_last_byte": row.arrival_time,
    }


def log_header(
    kind: str,
    mode: str,
    seed,
    epoch_utc_ms: int,
    duration_s: Optional[int],
    skew_bound_ms: float,
) -> dict:
    return {
        "log": kind,
        "mode": mode,
        "seed": seed,
        "epoch_utc_ms": epoch_utc_ms,
        "duration_s": duration_s,
        "skew_bound_ms": skew_bound_ms,
    }


class LogWriter:
    """Append-only JSON-lines file with a header line and a trailer."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self.write({"header": header})

    def write(self, obj) -> None:
        self._fh.write(dumps(obj))
        self._fh.write("\n")

    def close(self, integrity: Optional[dict] = None) -> None:
        if integrity is not None:
            self.write({"integrity": dict(integrity)})
        self._fh.close()


class FrameAssembler:
    """Carves one connection's in-order byte stream into frames."""

    def __init__(self) -> None:
        self.buf = bytearray()
        self.device_id: Optional[int] = None
        self.junk_since_frame = 0

    def feed(self, data: bytes) -> tuple:
        """Returns (decoded frames, Counter of integrity events)."""
        events: Counter = Counter()
        self.buf.extend(data)
        frames = []
        while True:
            idx = self.buf.find(MAGIC_BYTES)
            if idx < 0:
                # nothing frameable; keep a trailing half-magic byte
                keep = 1 if self.buf[-1:] == MAGIC_BYTES[:1] else 0
                junk = len(self.buf) - keep
                if junk:
                    events["resync_bytes"] += junk
                    del self.buf[:junk]
                break
            if idx > 0:
                events["resync_bytes"] += idx
                del self.buf[:idx]
            if len(self.buf) < FRAME_LEN:
                break
            try:
                frame = decode_frame(bytes(self.buf[:FRAME_LEN]))
            except ChecksumError:
                events["crc_errors"] += 1
                events["resync_bytes"] += 1
                del self.buf[:1]  # step past this magic and rescan
                continue
            except FramingError:
                del self.buf[:1]
                continue
            del self.buf[:FRAME_LEN]
            frames.append(frame)
            self.device_id = frame.device_id
        if frames:
            self.junk_since_frame = 0
        else:
            self.junk_since_frame += events["resync_bytes"]
        return frames, events


class IngestState:
    """Shared reassembly state for all connections of one run.

    Deduplication is global on (device_id, frame_seq): the first
    arrival produces the row, later copies only bump a counter.
    """

    def __init__(self) -> None:
        self.assemblers: dict = {}
        self.seen: set = set()
        self.counters: Counter = Counter()

    def assembler(self, conn_key) -> FrameAssembler:
        return self.assemblers.setdefault(conn_key, FrameAssembler())

    def deliver(self, conn_key, data: bytes, arrival_ms: float) -> list:
        """Feed bytes delivered in order on one connection; returns the
        MeasurementRows completed by this delivery."""
        asm = self.assembler(conn_key)
        frames, events = asm.feed(data)
        self.counters.update(events)
        rows = []
        for frame in frames:
            key = (frame.device_id, frame.frame_seq)
            if key in self.seen:
                self.counters["duplicate_frames"] += 1
                continue
            self.seen.add(key)
            rows.append(MeasurementRow.from_frame(frame, arrival_ms))
        self.counters["rows"] += len(rows)
        return rows


class LiveDcsServer:
    """Real-socket concentrator: N device connections, one log writer.

    Connection handlers only move bytes; a single writer thread owns
    the ingest state and both log files, so records and rows land in
    arrival order without locking around the files.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        out_dir: str = ".",
        max_conns: int = 64,
        skew_bound_ms: float = 10.0,
        duration_s: Optional[int] = None,
    ):
        self.host = host
        self.port = port
        self.out_dir = Path(out_dir)
        self.max_conns = max_conns
        self.skew_bound_ms = skew_bound_ms
        self.duration_s = duration_s
        self.ingest = IngestState()
        self._queue: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._active: dict = {}  # conn_id -> socket
        self._next_id = 0
        self._threads: list = []
        self._offsets: dict = {}  # conn_id -> delivered byte count
        self._listener = None
        self._capture = None
        self._rows = None

    def start(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        epoch = round(time.time() * 1000)
        args = ("live", None, epoch, self.duration_s, self.skew_bound_ms)
        self._capture = LogWriter(self.out_dir / "capture.jsonl", log_header("capture", *args))
        self._rows = LogWriter(
            self.out_dir / "measurements.jsonl", log_header("measurements", *args)
        )
        self._listener = socket.create_server((self.host, self.port))
        self.port = self._listener.getsockname()[1]
        self._listener.settimeout(0.2)
        for target in (self._accept_loop, self._writer_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        log.info("dcs listening on %s:%d", self.host, self.port)

    def stop(self) -> None:
        self._stop.set()
        with self._lock:
            socks = list(self._active.values())
        for sock in socks:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        while self._threads:  # handlers may still be registering
            self._threads.pop().join(timeout=10.0)
        self._capture.close(self.ingest.counters)
        self._rows.close(self.ingest.counters)

    # -- threads -----------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with self._lock:
                if len(self._active) >= self.max_conns:
                    log.warning("refusing connection from %s: at max_conns", addr)
                    self._queue.put(("refused", None, None, None))
                    sock.close()
                    continue
                self._next_id += 1
                conn_id = self._next_id
                self._active[conn_id] = sock
            t = threading.Thread(target=self._handler, args=(sock, conn_id), daemon=True)
            t.start()
            self._threads.append(t)
        self._listener.close()

    def _handler(self, sock: socket.socket, conn_id: int) -> None:
        sock.settimeout(0.5)
        try:
            while not self._stop.is_set():
                try:
                    data = sock.recv(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                self._queue.put(("data", conn_id, data, time.time() * 1000.0))
        finally:
            sock.close()
            with self._lock:
                self._active.pop(conn_id, None)

    def _writer_loop(self) -> None:
        while True:
            try:
                item = self._queue.get(timeout=0.2)
            except queue.Empty:
                if self._stop.is_set():
                    break
                continue
            self._process(item)

    def _process(self, item) -> None:
        kind, conn_id, data, arrival = item
        if kind == "refused":
            self.ingest.counters["refused_connections"] += 1
            return
        rows = self.ingest.deliver(conn_id, data, arrival)
        asm = self.ingest.assembler(conn_id)
        start = self._offsets.get(conn_id, 0)
        self._offsets[conn_id] = start + len(data)
        record = CaptureRecord(
            wall_time=ms(arrival),
            device_id=asm.device_id,
            direction="UPLINK",
            seq_range=(start, start + len(data)),
            payload_bytes=len(data),
            header_bytes=0,  # no sniffer in live mode, payload bytes only
            retransmission_class="FIRST",
            frame_complete=[frame_complete_entry(r) for r in rows] or None,
        )
        self._capture.write(record.to_json())
        self.ingest.counters["records"] += 1
        for row in rows:
            self._rows.write(row.to_json())
        if asm.junk_since_frame > JUNK_DROP_BYTES:
            log.warning("conn %d: dropping malformed stream", conn_id)
            self.ingest.counters["dropped_connections"] += 1
            asm.junk_since_frame = 0
            with self._lock:
                sock = self._active.get(conn_id)
            if sock is not None:
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
