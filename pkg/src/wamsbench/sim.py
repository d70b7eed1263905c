"""Batch simulation runs: devices, channels, transport, and ingest in
one deterministic event loop.

A run wires every configured device to its own uplink/downlink pair,
re-dials a fresh transport connection whenever one fails, and feeds the
concentrator-side reassembly exactly the byte stream the transport
releases.  It writes the same two JSON-lines logs the live server
produces, so the analyzer treats both modes identically.

The capture log is an omniscient tap: every wire copy appears exactly
once.  Copies the channel dropped are written at transmit time with a
null wall_time; delivered data copies are written at arrival, after the
reassembler has decided which frames they completed, so the record can
carry the frame_complete list.  Line order is therefore not globally
time-sorted and readers must not assume it is.

Concentrator outages are modeled as the host refusing the port: any
segment arriving inside an outage window is answered with an RST over
the downlink instead of being delivered, which kills the sender's
connection and starts its redial loop.
"""

import logging
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .dcs import CaptureRecord, IngestState, LogWriter, frame_complete_entry, log_header, ms
from .fdr import DeviceNode
from .scenario import Scenario
from .simnet import Link, Simulator
from .tcplite import HEADER_BYTES, RST, Connection, Segment, connect_pair

log = logging.getLogger(__name__)

# after the last frame leaves the grid, let in-flight retransmissions
# and redial loops settle before the run stops
DRAIN_GRACE_S = 30


@dataclass(frozen=True)
class DeviceReport:
    device_id: int
    frames_generated: int
    frames_sent: int
    frames_dropped_offline: int
    reconnects: int
    dials: int


@dataclass(frozen=True)
class RunResult:
    capture_path: Path
    measurements_path: Path
    devices: tuple
    capture_counters: dict
    ingest_counters: dict
    events_processed: int

    @property
    def rows(self) -> int:
        return self.ingest_counters.get("rows", 0)


class _DeviceHarness:
    """Everything one device owns for the lifetime of a run.

    The two channel links persist across re-dials so their occupancy
    and random streams carry over; only the transport pair is rebuilt.
    """

    def __init__(self, run: "_SimulationRun", spec):
        self.run = run
        self.spec = spec
        self.device_id = spec.config.device_id
        seed = run.scenario.seed
        self.uplink = Link(run.sim, spec.uplink, random.Random(f"{seed}:dev{self.device_id}:up"))
        self.downlink = Link(
            run.sim, spec.downlink, random.Random(f"{seed}:dev{self.device_id}:down")
        )
        self.dials = 0
        self.node = DeviceNode(
            run.sim,
            spec.config,
            run.scenario.epoch_utc_ms,
            seed,
            run.scenario.duration_s,
            self._make_connection,
        )
        self._pending_rows: list = []

    def _make_connection(self, node: DeviceNode) -> Connection:
        self.dials += 1
        conn_key = f"dev{self.device_id}#{self.dials}"
        client, server = connect_pair(
            self.run.sim,
            self.run.scenario.transport,
            self.uplink,
            self.downlink,
            name=f"{conn_key}.client",
        )
        server.name = f"{conn_key}.server"
        client.on_wire = self._on_uplink_wire
        server.on_wire = self._on_downlink_wire
        server.on_deliver = lambda data: self._on_deliver(conn_key, data)
        self._wrap_server(server)
        return client

    # -- capture hooks -------------------------------------------------------

    def _on_uplink_wire(self, seg: Segment, arrival_us: Optional[int]) -> None:
        if seg.payload and arrival_us is not None:
            return  # written at arrival, with the reassembly outcome attached
        self.run.write_record(self.device_id, "UPLINK", seg, arrival_us)

    def _on_downlink_wire(self, seg: Segment, arrival_us: Optional[int]) -> None:
        self.run.write_record(self.device_id, "ACK", seg, arrival_us)

    def _on_deliver(self, conn_key: str, data: bytes) -> None:
        arrival_ms = self.run.wall_ms(self.run.sim.now_us)
        self._pending_rows.extend(self.run.ingest.deliver(conn_key, data, arrival_ms))

    def _wrap_server(self, server: Connection) -> None:
        """Interpose on segment arrival for outage gating and capture.

        Data copies must be logged at their arrival instant together
        with the frames they completed, and during an outage nothing
        reaches the transport at all: the concentrator answers RST.
        """
        original = server.deliver_segment

        def deliver(seg: Segment) -> None:
            run = self.run
            if run.in_outage(run.sim.now_us):
                if seg.payload:
                    run.write_record(self.device_id, "UPLINK", seg, run.sim.now_us)
                self._send_rst(server)
                return
            if not seg.payload:
                original(seg)
                return
            self._pending_rows = []
            original(seg)
            rows, self._pending_rows = self._pending_rows, []
            run.write_record(self.device_id, "UPLINK", seg, run.sim.now_us, rows)
            for row in rows:
                run.rows_log.write(row.to_json())

        server.deliver_segment = deliver  # type: ignore[method-assign]

    def _send_rst(self, server: Connection) -> None:
        self.run.capture_counters["outage_rsts"] += 1
        rst = Segment(seq=0, ack=0, flags=frozenset({RST}))
        arrival_us = self.downlink.transmit(HEADER_BYTES)
        self.run.write_record(self.device_id, "ACK", rst, arrival_us)
        client = server.peer
        if arrival_us is not None and client is not None:
            self.run.sim.schedule(arrival_us, lambda: client.deliver_segment(rst))

    def report(self) -> DeviceReport:
        n = self.node
        return DeviceReport(
            device_id=self.device_id,
            frames_generated=n.frames_generated,
            frames_sent=n.frames_sent,
            frames_dropped_offline=n.frames_dropped_offline,
            reconnects=n.reconnects,
            dials=self.dials,
        )


class _SimulationRun:
    def __init__(self, scenario: Scenario, out_dir):
        self.scenario = scenario
        self.out_dir = Path(out_dir)
        self.sim = Simulator()
        self.ingest = IngestState()
        self.capture_counters: Counter = Counter()
        # pre-seed so the integrity trailer has a stable schema even
        # when a scenario never exercises a counter
        for key in ("records", "uplink_copies", "ack_copies", "dropped_copies", "outage_rsts"):
            self.capture_counters[key] = 0
        self.capture_log: Optional[LogWriter] = None
        self.rows_log: Optional[LogWriter] = None

    def wall_ms(self, t_us: int) -> float:
        return self.scenario.epoch_utc_ms + t_us / 1000.0

    def in_outage(self, t_us: int) -> bool:
        t_s = t_us / 1_000_000.0
        return any(start <= t_s < end for start, end in self.scenario.outages)

    def write_record(
        self,
        device_id: int,
        direction: str,
        seg: Segment,
        arrival_us: Optional[int],
        rows: Optional[list] = None,
    ) -> None:
        record = CaptureRecord(
            wall_time=ms(self.wall_ms(arrival_us)) if arrival_us is not None else None,
            device_id=device_id,
            direction=direction,
            seq_range=(seg.seq, seg.seq + seg.seq_len),
            payload_bytes=len(seg.payload),
            header_bytes=HEADER_BYTES,
            retransmission_class=seg.retx_class.value,
            frame_complete=[frame_complete_entry(r) for r in rows] if rows else None,
        )
        self.capture_log.write(record.to_json())
        self.capture_counters["records"] += 1
        self.capture_counters[f"{direction.lower()}_copies"] += 1
        if arrival_us is None:
            self.capture_counters["dropped_copies"] += 1

    def _header(self, kind: str) -> dict:
        sc = self.scenario
        header = log_header(kind, "sim", sc.seed, sc.epoch_utc_ms, sc.duration_s, sc.skew_bound_ms)
        header["scenario"] = sc.name
        header["t_fdr_ms"] = sc.default_t_fdr_ms
        header["t_dcs_ms"] = sc.t_dcs_ms
        return header

    def run(self) -> RunResult:
        sc = self.scenario
        self.out_dir.mkdir(parents=True, exist_ok=True)
        capture_path = self.out_dir / "capture.jsonl"
        rows_path = self.out_dir / "measurements.jsonl"
        self.capture_log = LogWriter(capture_path, self._header("capture"))
        self.rows_log = LogWriter(rows_path, self._header("measurements"))
        harnesses = [_DeviceHarness(self, spec) for spec in sc.devices]
        try:
            for h in harnesses:
                h.node.start()
            processed = self.sim.run_until((sc.duration_s + DRAIN_GRACE_S) * 1_000_000)
        finally:
            self.capture_log.close(dict(sorted(self.capture_counters.items())))
            self.rows_log.close(dict(sorted(self.ingest.counters.items())))
        log.info(
            "scenario %s: %d events, %d rows, %d capture records",
            sc.name,
            processed,
            self.ingest.counters["rows"],
            self.capture_counters["records"],
        )
        return RunResult(
            capture_path=capture_path,
            measurements_path=rows_path,
            devices=tuple(h.report() for h in harnesses),
            capture_counters=dict(self.capture_counters),
            ingest_counters=dict(self.ingest.counters),
            events_processed=processed,
        )


def run_simulation(scenario: Scenario, out_dir) -> RunResult:
    """Execute one scenario and write capture/measurement logs to out_dir."""
    return _SimulationRun(scenario, out_dir).run()
