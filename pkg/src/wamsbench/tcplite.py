"""Simplified reliable byte-stream transport over the simulated channel.

Reproduces the handful of TCP behaviors the testbench measures: the
three-way handshake, cumulative ACKs, adaptive retransmission timeout
with exponential backoff, fast retransmit on three duplicate ACKs, and
optional two-way segmentation of a frame.  Everything else (congestion
windows, SACK, graceful teardown) is deliberately out of scope; at 550
payload bytes per second per device none of it would ever engage.

Each wire copy carries a retransmission class (FIRST, RTO_RETX,
FAST_RETX) so the capture log can account for every byte placed on the
wire.  Header overhead is a fixed 40 bytes per segment (20 IP + 20 TCP,
no options); the serialization term on the channel uses the payload
length for data segments, since the link-rate math treats the frame
itself as the unit being clocked out.
"""

import dataclasses
import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .simnet import Simulator

log = logging.getLogger(__name__)

HEADER_BYTES = 40  # 20 IP + 20 TCP, no options

SYN = "SYN"
ACK = "ACK"
PSH = "PSH"
RST = "RST"


class RetxClass(enum.Enum):
    FIRST = "FIRST"
    RTO_RETX = "RTO_RETX"
    FAST_RETX = "FAST_RETX"


class ConnState(enum.Enum):
    CLOSED = "CLOSED"
    SYN_SENT = "SYN_SENT"
    SYN_RCVD = "SYN_RCVD"
    ESTABLISHED = "ESTABLISHED"


class TransportError(Exception):
    """Operation not valid in the connection's current state."""


@dataclass(frozen=True)
class Segment:
    """One TCP-lite segment as it appears on the wire."""

    seq: int
    ack: int
    flags: frozenset
    payload: bytes = b""
    retx_class: RetxClass = RetxClass.FIRST

    @property
    def seq_len(self) -> int:
        # SYN consumes one sequence number; pure ACKs consume none
        return len(self.payload) + (1 if SYN in self.flags else 0)

    @property
    def wire_bytes(self) -> int:
        return HEADER_BYTES + len(self.payload)

    def describe(self) -> str:
        names = "+".join(sorted(self.flags)) or "-"
        return f"{names} seq={self.seq} ack={self.ack} len={len(self.payload)}"


@dataclass(frozen=True)
class TransportConfig:
    mss: int = 1460
    min_rto_ms: float = 200.0
    max_rto_ms: float = 60_000.0
    initial_rto_ms: float = 1_000.0
    alpha: float = 0.125
    beta: float = 0.25
    dupack_threshold: int = 3
    split_at: int = 27
    syn_retry_limit: int = 5
    retx_limit: int = 15

    def __post_init__(self) -> None:
        if self.mss < 2:
            raise ValueError("mss must allow at least a 2-byte payload")
        if self.min_rto_ms <= 0 or self.max_rto_ms < self.min_rto_ms:
            raise ValueError("rto bounds must satisfy 0 < min <= max")
        if not 1 <= self.split_at:
            raise ValueError("split_at must be >= 1")


@dataclass
class _InFlight:
    segment: Segment
    send_time_us: int
    retx_count: int = 0


class Connection:
    """One endpoint of a TCP-lite connection.

    The two endpoints are cross-wired through ``peer`` and each owns a
    one-way channel link for its outgoing direction.  All state changes
    happen synchronously inside event callbacks, so a single event loop
    drives both ends without locks.

    on_deliver receives in-order application bytes.  on_wire sees every
    copy placed on the wire together with its arrival time in us, None
    when the channel dropped that copy.
    """

    def __init__(
        self,
        sim: Simulator,
        config: TransportConfig,
        link,
        role: str,
        name: str = "",
        on_deliver: Optional[Callable[[bytes], None]] = None,
        on_wire: Optional[Callable[[Segment, Optional[int]], None]] = None,
        on_established: Optional[Callable[[], None]] = None,
        on_failed: Optional[Callable[[str], None]] = None,
    ):
        if role not in ("client", "server"):
            raise ValueError(f"role must be client or server, got {role!r}")
        self.sim = sim
        self.config = config
        self.link = link
        self.role = role
        self.name = name or role
        self.peer: Optional["Connection"] = None
        self.on_deliver = on_deliver
        self.on_wire = on_wire
        self.on_established = on_established
        self.on_failed = on_failed

        self.state = ConnState.CLOSED
        self.snd_una = 0
        self.snd_next = 0
        self.rcv_next = 0
        self.dup_ack_count = 0
        self.srtt: Optional[float] = None
        self.rttvar: Optional[float] = None
        self.rto = config.initial_rto_ms
        self.unacked: list[_InFlight] = []

        self._ooo: dict[int, bytes] = {}  # reassembly buffer, seq -> payload
        self._timer_id: Optional[int] = None
        self._dead = False
        self.wire_copies: Counter = Counter()
        self.wire_bytes: Counter = Counter()
        self.protocol_errors = 0
        self.dup_data_segments = 0

    # -- opening ---------------------------------------------------------

    def open(self) -> None:
        """Active open: send SYN and wait for the handshake to finish."""
        if self.state is not ConnState.CLOSED:
            raise TransportError(f"open in state {self.state.value}")
        if self.role != "client":
            raise TransportError("only the client end opens actively")
        self.snd_una = 0
        self.snd_next = 1  # SYN occupies sequence 0
        syn = Segment(seq=0, ack=0, flags=frozenset({SYN}))
        self.unacked.append(_InFlight(syn, self.sim.now_us))
        self.state = ConnState.SYN_SENT
        self._transmit(syn)
        self._arm_timer()

    # -- sending ---------------------------------------------------------

    def send(self, payload: bytes, split: bool = False) -> int:
        """Queue application bytes; returns the number of segments sent.

        ``split`` is the caller's per-frame segmentation decision: when
        true the payload goes out as two segments cut at the configured
        split point.  Payloads above the MSS are chunked regardless.
        """
        if self.state is not ConnState.ESTABLISHED:
            raise TransportError(f"send in state {self.state.value}")
        if not payload:
            raise TransportError("empty payload")
        cfg = self.config
        if len(payload) > cfg.mss:
            parts = [payload[i : i + cfg.mss] for i in range(0, len(payload), cfg.mss)]
        elif split and len(payload) >= 2:
            cut = min(cfg.split_at, len(payload) - 1)
            parts = [payload[:cut], payload[cut:]]
        else:
            parts = [payload]
        for part in parts:
            seg = Segment(
                seq=self.snd_next,
                ack=self.rcv_next,
                flags=frozenset({ACK, PSH}),
                payload=part,
            )
            self.snd_next += seg.seq_len
            self.unacked.append(_InFlight(seg, self.sim.now_us))
            self._transmit(seg)
        if self._timer_id is None:  # never postpone an older segment's timeout
            self._arm_timer()
        return len(parts)

    def close(self) -> None:
        """Drop the connection without ceremony."""
        self._disarm_timer()
        self.state = ConnState.CLOSED
        self._dead = True

    @property
    def established(self) -> bool:
        return self.state is ConnState.ESTABLISHED

    # -- segment arrival ---------------------------------------------------

    def on_segment(self, seg: Segment) -> None:
        if RST in seg.flags:
            self._fail("reset by peer")
            return
        if self.state is ConnState.CLOSED:
            return
        if self.state is ConnState.SYN_SENT:
            if SYN in seg.flags and ACK in seg.flags and seg.ack == self.snd_next:
                self._process_ack(seg)
                self.rcv_next = seg.seq + 1
                self.state = ConnState.ESTABLISHED
                self._send_pure_ack()
                if self.on_established:
                    self.on_established()
            return
        if self.state is ConnState.SYN_RCVD:
            if SYN in seg.flags and ACK not in seg.flags:
                return  # duplicate SYN; our timer re-sends the SYN+ACK
            if ACK in seg.flags and seg.ack >= 1:
                self._process_ack(seg)
                self.state = ConnState.ESTABLISHED
                if self.on_established:
                    self.on_established()
                if seg.payload:
                    self._process_data(seg)
            return
        # ESTABLISHED
        if SYN in seg.flags:
            self._send_pure_ack()  # peer missed our handshake ACK
            return
        if ACK in seg.flags:
            self._process_ack(seg)
        if seg.payload:
            self._process_data(seg)

    def accept_syn(self, seg: Segment) -> None:
        """Passive open: server reaction to the first SYN."""
        if self.role != "server":
            raise TransportError("only the server end accepts")
        if self.state is not ConnState.CLOSED:
            return
        self.rcv_next = seg.seq + 1
        self.snd_una = 0
        self.snd_next = 1
        synack = Segment(seq=0, ack=self.rcv_next, flags=frozenset({SYN, ACK}))
        self.unacked.append(_InFlight(synack, self.sim.now_us))
        self.state = ConnState.SYN_RCVD
        self._transmit(synack)
        self._arm_timer()

    # -- ACK processing ----------------------------------------------------

    def _process_ack(self, seg: Segment) -> None:
        ack = seg.ack
        if ack > self.snd_next:
            self.protocol_errors += 1
            log.warning("%s: ack %d beyond snd_next %d ignored", self.name, ack, self.snd_next)
            return
        if ack > self.snd_una:
            self.snd_una = ack
            self.dup_ack_count = 0
            acked, remaining = [], []
            for entry in self.unacked:
                target = acked if entry.segment.seq + entry.segment.seq_len <= ack else remaining
                target.append(entry)
            self.unacked = remaining
            # An ack covering several segments marks a loss-recovery
            # epoch: the covered segments sat behind a receiver-side
            # hole, so their age measures the recovery, not the path.
            # Only the unambiguous single-segment case is sampled, and
            # never a retransmit (Karn's rule).
            if len(acked) == 1 and acked[0].retx_count == 0:
                self.rto_update((self.sim.now_us - acked[0].send_time_us) / 1000.0)
            elif self.srtt is not None:
                # forward progress ends the timeout episode: drop the
                # exponential backoff back to the estimator's figure
                cfg = self.config
                self.rto = min(
                    max(cfg.min_rto_ms, self.srtt + 4.0 * self.rttvar), cfg.max_rto_ms
                )
            if self.unacked:
                self._arm_timer()
            else:
                self._disarm_timer()
            return
        if (
            ack == self.snd_una
            and not seg.payload
            and SYN not in seg.flags
            and self.unacked
        ):
            self.dup_ack_count += 1
            if self.dup_ack_count >= self.config.dupack_threshold:
                self.dup_ack_count = 0
                lowest = self.unacked[0]
                if lowest.retx_count == 0:  # never race an RTO recovery
                    lowest.retx_count += 1
                    self._transmit(
                        dataclasses.replace(lowest.segment, retx_class=RetxClass.FAST_RETX)
                    )

    def rto_update(self, sample_ms: float) -> float:
        """Feed one round-trip sample to the estimator; returns the new rto."""
        cfg = self.config
        if self.srtt is None:
            self.srtt = sample_ms
            self.rttvar = sample_ms / 2.0
        else:
            self.srtt = (1.0 - cfg.alpha) * self.srtt + cfg.alpha * sample_ms
            self.rttvar = (1.0 - cfg.beta) * self.rttvar + cfg.beta * abs(self.srtt - sample_ms)
        self.rto = min(max(cfg.min_rto_ms, self.srtt + 4.0 * self.rttvar), cfg.max_rto_ms)
        return self.rto

    # -- data receive ------------------------------------------------------

    def _process_data(self, seg: Segment) -> None:
        if seg.seq == self.rcv_next:
            chunks = [seg.payload]
            self.rcv_next += len(seg.payload)
            while self.rcv_next in self._ooo:
                part = self._ooo.pop(self.rcv_next)
                chunks.append(part)
                self.rcv_next += len(part)
            if self.on_deliver:
                self.on_deliver(b"".join(chunks))
        elif seg.seq > self.rcv_next:
            self._ooo[seg.seq] = seg.payload  # hole before it; buffer
        else:
            self.dup_data_segments += 1
        self._send_pure_ack()

    def _send_pure_ack(self) -> None:
        self._transmit(Segment(seq=self.snd_next, ack=self.rcv_next, flags=frozenset({ACK})))

    # -- retransmission timer ----------------------------------------------

    def _arm_timer(self) -> None:
        self._disarm_timer()
        self._timer_id = self.sim.schedule_in(round(self.rto * 1000), self._on_rto)

    def _disarm_timer(self) -> None:
        if self._timer_id is not None:
            self.sim.cancel(self._timer_id)
            self._timer_id = None

    def _on_rto(self) -> None:
        self._timer_id = None
        if not self.unacked:
            return  # nothing in flight, timer should have been disarmed
        handshake = self.state in (ConnState.SYN_SENT, ConnState.SYN_RCVD)
        limit = self.config.syn_retry_limit if handshake else self.config.retx_limit
        lowest = self.unacked[0]
        if lowest.retx_count >= limit:
            self._fail("retransmit limit exceeded")
            return
        lowest.retx_count += 1
        self._transmit(dataclasses.replace(lowest.segment, retx_class=RetxClass.RTO_RETX))
        self.rto = min(self.rto * 2.0, self.config.max_rto_ms)  # exponential backoff
        self._arm_timer()

    def _fail(self, reason: str) -> None:
        if self._dead:
            return
        log.info("%s: connection failed: %s", self.name, reason)
        self._disarm_timer()
        self.state = ConnState.CLOSED
        self._dead = True
        self.unacked.clear()
        self._ooo.clear()
        if self.on_failed:
            self.on_failed(reason)

    # -- wire --------------------------------------------------------------

    def _transmit(self, seg: Segment) -> None:
        self.wire_copies[seg.retx_class] += 1
        self.wire_bytes[seg.retx_class] += seg.wire_bytes
        # data segments are clocked out at their payload length; control
        # segments have nothing but headers to serialize
        serialized = len(seg.payload) if seg.payload else HEADER_BYTES
        arrival_us = self.link.transmit(serialized)
        if self.on_wire:
            self.on_wire(seg, arrival_us)
        if arrival_us is not None and self.peer is not None:
            peer = self.peer
            self.sim.schedule(arrival_us, lambda: peer.deliver_segment(seg))

    def deliver_segment(self, seg: Segment) -> None:
        """Entry point for segments arriving from the peer's channel."""
        if self._dead:
            return  # stale in-flight segment for a retired connection
        if self.role == "server" and self.state is ConnState.CLOSED and SYN in seg.flags:
            self.accept_syn(seg)
        else:
            self.on_segment(seg)


def connect_pair(
    sim: Simulator,
    config: TransportConfig,
    uplink,
    downlink,
    **client_kwargs,
) -> tuple[Connection, Connection]:
    """Build a cross-wired client/server pair over two one-way links.

    The client still needs ``open()`` called to start the handshake.
    """
    client = Connection(sim, config, uplink, "client", **client_kwargs)
    server = Connection(sim, config, downlink, "server")
    client.peer = server
    server.peer = client
    return client, server
