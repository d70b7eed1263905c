"""Deterministic discrete-event core and the impaired-channel model.

Simulation time is integer microseconds to keep event ordering exact.
Events scheduled for the same instant dispatch in insertion order.

A channel adds a fixed propagation delay, a serialization term from the
link rate, and a random jitter sample, and may drop a unit outright
with a fixed per-unit probability.  Every random draw comes from a
caller-supplied seeded generator, so identical seeds replay identical
runs.
"""

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

US_PER_MS = 1000
US_PER_S = 1_000_000


class SchedulingError(Exception):
    """Attempt to schedule an event before the current simulation time."""


@dataclass(order=True)
class Event:
    fire_us: int
    insertion_seq: int
    event_id: int = field(compare=False)
    action: Optional[Callable[[], None]] = field(compare=False)


class Simulator:
    """Event queue plus the simulation clock it drives.

    The clock only moves while events are processed; ties break in
    insertion order.  Canceled events stay in the heap but never fire.
    """

    def __init__(self) -> None:
        self._now_us = 0
        self._heap: list[Event] = []
        self._seq = 0
        self._next_id = 1
        self._live: dict[int, Event] = {}

    @property
    def now_us(self) -> int:
        return self._now_us

    def schedule(self, fire_us: int, action: Callable[[], None]) -> int:
        """Queue ``action`` to run at ``fire_us``; returns a cancelable id."""
        if fire_us < self._now_us:
            raise SchedulingError(f"fire_us={fire_us} is before now={self._now_us}")
        event = Event(fire_us, self._seq, self._next_id, action)
        self._seq += 1
        self._next_id += 1
        heapq.heappush(self._heap, event)
        self._live[event.event_id] = event
        return event.event_id

    def schedule_in(self, delay_us: int, action: Callable[[], None]) -> int:
        return self.schedule(self._now_us + delay_us, action)

    def cancel(self, event_id: int) -> None:
        event = self._live.pop(event_id, None)
        if event is not None:
            event.action = None

    def run_until(self, t_end_us: int) -> int:
        """Process every event with fire time <= ``t_end_us``, in order.

        The clock ends at exactly ``t_end_us`` even if the queue drains
        early.  Returns the number of events dispatched.
        """
        if t_end_us < self._now_us:
            raise SchedulingError(f"t_end_us={t_end_us} is before now={self._now_us}")
        processed = 0
        while self._heap and self._heap[0].fire_us <= t_end_us:
            event = heapq.heappop(self._heap)
            if event.action is None:
                continue  # canceled
            del self._live[event.event_id]
            self._now_us = event.fire_us
            event.action()
            processed += 1
        self._now_us = t_end_us
        return processed

    def pending(self) -> int:
        return len(self._live)


@dataclass(frozen=True)
class JitterSpec:
    """Random extra delay per transmitted unit, clamped to a hard cap.

    kind "constant" always yields median_ms; "exponential" draws with
    the given median; "lognormal" draws exp(N(ln median, sigma)).  Every
    sample is clamped to [0, cap_ms].
    """

    kind: str = "constant"
    median_ms: float = 0.0
    sigma: float = 0.0
    cap_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "exponential", "lognormal"):
            raise ValueError(f"unknown jitter kind {self.kind!r}")
        if self.median_ms < 0 or self.cap_ms < 0 or self.sigma < 0:
            raise ValueError("jitter parameters must be non-negative")
        if self.kind == "constant" and self.median_ms > self.cap_ms:
            raise ValueError("constant jitter above cap_ms")
        if self.kind != "constant" and self.median_ms > 0 and self.cap_ms <= 0:
            raise ValueError(f"{self.kind} jitter requires cap_ms > 0")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "constant" or self.median_ms == 0:
            return min(self.median_ms, self.cap_ms)
        if self.kind == "exponential":
            raw = rng.expovariate(math.log(2) / self.median_ms)
        else:
            raw = rng.lognormvariate(math.log(self.median_ms), self.sigma)
        return min(raw, self.cap_ms)


@dataclass(frozen=True)
class ChannelParams:
    """One direction of the access network, reduced to four knobs.

    t_p_ms is the mean propagation delay, r_ul_bps the link rate used
    for the serialization term, and p_loss an independent per-unit drop
    probability standing in for whatever makes the transport retransmit.
    """

    t_p_ms: float = 0.0
    r_ul_bps: float = 384_000.0
    jitter: JitterSpec = JitterSpec()
    p_loss: float = 0.0

    def __post_init__(self) -> None:
        if self.r_ul_bps <= 0:
            raise ValueError(f"r_ul_bps={self.r_ul_bps} must be positive")
        if self.t_p_ms < 0:
            raise ValueError(f"t_p_ms={self.t_p_ms} must be non-negative")
        if not 0.0 <= self.p_loss <= 1.0:
            raise ValueError(f"p_loss={self.p_loss} outside [0, 1]")


def serialization_ms(len_bytes: int, params: ChannelParams) -> float:
    return 8.0 * len_bytes / params.r_ul_bps * 1000.0


def transit_delay(len_bytes: int, params: ChannelParams, rng: random.Random) -> float:
    """Delay in ms for one unit of ``len_bytes``: propagation plus
    serialization plus one jitter draw."""
    if len_bytes <= 0:
        raise ValueError(f"len_bytes={len_bytes} must be positive")
    return params.t_p_ms + serialization_ms(len_bytes, params) + params.jitter.sample(rng)


def should_drop(params: ChannelParams, rng: random.Random) -> bool:
    """True with probability p_loss, independently per call."""
    if params.p_loss == 0.0:
        return False
    return rng.random() < params.p_loss


class Link:
    """Channel endpoint that also serializes back-to-back units in order.

    A unit entering a busy link waits for the previous unit's
    serialization to finish, so two segments of one split frame occupy
    the link sequentially instead of overlapping.  Loss is decided at
    entry; a dropped unit still occupies the link (loss is downstream).
    """

    def __init__(self, sim: Simulator, params: ChannelParams, rng: random.Random):
        self.sim = sim
        self.params = params
        self.rng = rng
        self._free_at_us = 0

    def transmit(self, serialized_bytes: int) -> Optional[int]:
        """Place one unit on the link; returns its arrival time in us,
        or None when the channel drops it."""
        entry_us = max(self.sim.now_us, self._free_at_us)
        ser_us = round(serialization_ms(serialized_bytes, self.params) * US_PER_MS)
        self._free_at_us = entry_us + ser_us
        if should_drop(self.params, self.rng):
            return None
        delay_ms = self.params.t_p_ms + self.params.jitter.sample(self.rng)
        return entry_us + ser_us + round(delay_ms * US_PER_MS)
