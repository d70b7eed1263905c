"""Communication metrics computed from a capture log.

The capture log is the single input: every wire copy is one record,
delivered data copies list the frames they completed, and the header
says when the run started and how long it was configured to last.
Everything in this module is a pure function of that file, so re-running
an analysis always reproduces the same bytes, and the log's line order
never matters.

Metric definitions, chosen once and used everywhere:

  delay        per frame, arrival of its last byte minus (frame
               timestamp + sender processing time).  A capture taken
               against a skewed clock can go slightly negative; delays
               below minus the header's skew bound are flagged and
               excluded from averages.
  throughput   per device and per window, bits of successfully
               delivered uplink data copies (payload plus that copy's
               headers) divided by the window length; kbit/s.  Dropped
               copies never count; a delivered retransmission does,
               because the receiver genuinely got those bytes.
  retx pct     bytes of timeout retransmissions over total uplink bytes
               placed on the wire, every copy counted, delivered or
               not.  Acknowledgement-direction traffic is excluded from
               both sides of the ratio.  Fast-retransmit percentage is
               the same ratio for the other class, and wasted bandwidth
               is their sum by definition.

Reporting slots: the sampling workflow treats the run as one population
slot per configured second.  A frame belongs to the slot its timestamp
falls in, where a grid instant on a second boundary belongs to the
second it closes: slot k covers (k, k+1] seconds after the epoch, so a
10 Hz device contributes exactly ten frames per slot.  Throughput
windows are wall-clock aligned: window k covers arrivals in [k, k+1).
"""

import csv
import json
import logging
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "device",
    "avg_throughput_kbps",
    "avg_delay_ms",
    "max_delay_ms",
    "retx_pct",
    "fast_retx_pct",
    "wasted_bw_pct",
]

_REQUIRED_KEYS = frozenset(
    ["wall_time", "device_id", "direction", "payload_bytes", "header_bytes", "retransmission_class"]
)


class CaptureError(Exception):
    """The file is not a usable capture log."""


@dataclass(frozen=True)
class Capture:
    header: dict
    records: list
    integrity: Optional[dict]
    skipped_lines: int

    @property
    def epoch_utc_ms(self) -> int:
        return self.header.get("epoch_utc_ms") or 0

    @property
    def skew_bound_ms(self) -> float:
        return self.header.get("skew_bound_ms") or 0.0

    @property
    def t_fdr_ms(self) -> float:
        return self.header.get("t_fdr_ms") or 0.0

    @property
    def t_dcs_ms(self) -> float:
        return self.header.get("t_dcs_ms") or 0.0

    def devices(self) -> list:
        return sorted({r["device_id"] for r in self.records if r["device_id"] is not None})

    def population_slots(self) -> int:
        """Number of 1-second population slots this capture covers.

        The configured duration wins; a live capture without one gets
        the smallest slot count covering every frame and arrival.
        """
        duration = self.header.get("duration_s")
        if duration:
            return int(duration)
        last = 0
        for rec in self.records:
            for entry in rec.get("frame_complete") or ():
                last = max(last, _slot_of_timestamp(entry["frame_timestamp"], self.epoch_utc_ms) + 1)
            if rec["wall_time"] is not None:
                last = max(last, int((rec["wall_time"] - self.epoch_utc_ms) // 1000) + 1)
        return last


@dataclass(frozen=True)
class FrameDelay:
    device_id: int
    frame_seq: int
    frame_timestamp: int
    arrival_time: float
    t_ci_ms: float
    t_ete_ms: float
    flagged: bool


@dataclass(frozen=True)
class DeviceMetrics:
    device: int
    avg_throughput_kbps: float
    avg_delay_ms: float
    max_delay_ms: float
    retx_pct: float
    fast_retx_pct: float
    wasted_bw_pct: float


@dataclass(frozen=True)
class MetricsSummary:
    devices: tuple
    population_slots: int
    selected_slots: int
    frames_counted: int
    flagged_delays: int


def _slot_of_timestamp(ts_ms: int, epoch_ms: int) -> int:
    # ceil division: a timestamp exactly on a second boundary closes
    # that second rather than opening the next
    return -((ts_ms - epoch_ms) // -1000) - 1


def _window_of_wall(wall_ms: float, epoch_ms: int, window_s: float) -> int:
    return math.floor((wall_ms - epoch_ms) / (1000.0 * window_s))


def load_capture(path) -> Capture:
    """Parse a capture log, skipping corrupt lines with a warning."""
    path = Path(path)
    header = None
    integrity = None
    records: list = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if not isinstance(obj, dict):
                skipped += 1
                continue
            if "header" in obj:
                if header is None and isinstance(obj["header"], dict):
                    header = obj["header"]
                else:
                    skipped += 1
                continue
            if "integrity" in obj:
                integrity = obj["integrity"]
                continue
            if not _REQUIRED_KEYS <= obj.keys():
                skipped += 1
                continue
            records.append(obj)
    if header is None:
        raise CaptureError(f"{path}: no header line, not a capture log")
    if skipped:
        log.warning("%s: skipped %d corrupt lines", path, skipped)
    return Capture(header=header, records=records, integrity=integrity, skipped_lines=skipped)


def one_way_delays(
    capture: Capture,
    t_fdr_ms: Optional[float] = None,
    t_dcs_ms: Optional[float] = None,
) -> list:
    """Per-frame delay series, sorted by (device, frame_seq).

    The communication delay counts from the instant the frame left the
    device (timestamp plus the device's processing time) to the arrival
    of its last byte.  The end-to-end figure adds the processing times
    on both sides back on top.
    """
    t_fdr = capture.t_fdr_ms if t_fdr_ms is None else t_fdr_ms
    t_dcs = capture.t_dcs_ms if t_dcs_ms is None else t_dcs_ms
    skew = capture.skew_bound_ms
    out = []
    for rec in capture.records:
        for entry in rec.get("frame_complete") or ():
            t_ci = entry["arrival_time_of_last_byte"] - (entry["frame_timestamp"] + t_fdr)
            out.append(
                FrameDelay(
                    device_id=rec["device_id"],
                    frame_seq=entry["frame_seq"],
                    frame_timestamp=entry["frame_timestamp"],
                    arrival_time=entry["arrival_time_of_last_byte"],
                    t_ci_ms=t_ci,
                    t_ete_ms=t_ci + t_fdr + t_dcs,
                    flagged=t_ci < -skew,
                )
            )
    out.sort(key=lambda d: (d.device_id, d.frame_seq))
    return out


def throughput_series(capture: Capture, window_s: float = 1.0) -> dict:
    """Per-device delivered-byte rate in kbit/s, one value per window."""
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    windows = max(1, math.ceil(capture.population_slots() / window_s))
    series = {dev: [0.0] * windows for dev in capture.devices()}
    for rec in capture.records:
        if rec["direction"] != "UPLINK" or not rec["payload_bytes"] or rec["wall_time"] is None:
            continue
        if rec["device_id"] not in series:
            continue
        w = _window_of_wall(rec["wall_time"], capture.epoch_utc_ms, window_s)
        if 0 <= w < windows:
            bits = (rec["payload_bytes"] + rec["header_bytes"]) * 8
            series[rec["device_id"]][w] += bits / (window_s * 1000.0)
    return series


def _uplink_wire_bytes(records) -> Counter:
    totals: Counter = Counter()
    for rec in records:
        if rec["direction"] == "UPLINK":
            totals[rec["retransmission_class"]] += rec["payload_bytes"] + rec["header_bytes"]
    return totals


def _retx_pcts(totals: Counter) -> tuple:
    denom = sum(totals.values())
    if denom == 0:
        return 0.0, 0.0
    return (
        100.0 * totals["RTO_RETX"] / denom,
        100.0 * totals["FAST_RETX"] / denom,
    )


def retransmission_stats(capture: Capture) -> tuple:
    """(timeout retx %, fast retx %) over all uplink wire bytes."""
    return _retx_pcts(_uplink_wire_bytes(capture.records))


def wasted_bandwidth_pct(capture: Capture) -> float:
    retx, fast = retransmission_stats(capture)
    return retx + fast


def summarize(
    capture: Capture,
    sample_indices=None,
    t_fdr_ms: Optional[float] = None,
    t_dcs_ms: Optional[float] = None,
) -> MetricsSummary:
    """Per-device metric summary, optionally over sampled 1-second slots.

    With sample_indices the averages reproduce the random-sampling
    workflow: only frames whose slot was drawn and only the drawn
    throughput windows contribute.  Retransmission percentages are byte
    ratios over the whole capture either way; sampling a ratio of
    totals is not meaningful.  Passing every index equals not sampling.
    """
    population = capture.population_slots()
    selected = None
    if sample_indices is not None:
        selected = set(sample_indices)
        bad = sorted(i for i in selected if not 0 <= i < population)
        if bad:
            raise ValueError(f"sample indices out of range [0, {population}): {bad}")

    delays = one_way_delays(capture, t_fdr_ms, t_dcs_ms)
    per_dev_delays = defaultdict(list)
    flagged = 0
    frames_counted = 0
    for d in delays:
        if d.flagged:
            flagged += 1
            continue
        slot = _slot_of_timestamp(d.frame_timestamp, capture.epoch_utc_ms)
        if not 0 <= slot < population or (selected is not None and slot not in selected):
            continue
        frames_counted += 1
        per_dev_delays[d.device_id].append(d.t_ci_ms)

    series = throughput_series(capture, window_s=1.0)
    slot_list = sorted(selected) if selected is not None else range(population)
    per_dev_retx = defaultdict(Counter)
    for rec in capture.records:
        if rec["device_id"] is not None and rec["direction"] == "UPLINK":
            cls = rec["retransmission_class"]
            per_dev_retx[rec["device_id"]][cls] += rec["payload_bytes"] + rec["header_bytes"]

    rows = []
    for dev in capture.devices():
        values = series.get(dev, [])
        throughput = statistics.fmean(values[i] for i in slot_list) if population else 0.0
        dev_delays = per_dev_delays.get(dev)
        retx, fast = _retx_pcts(per_dev_retx[dev])
        rows.append(
            DeviceMetrics(
                device=dev,
                avg_throughput_kbps=throughput,
                avg_delay_ms=statistics.fmean(dev_delays) if dev_delays else math.nan,
                max_delay_ms=max(dev_delays) if dev_delays else math.nan,
                retx_pct=retx,
                fast_retx_pct=fast,
                wasted_bw_pct=retx + fast,
            )
        )
    return MetricsSummary(
        devices=tuple(rows),
        population_slots=population,
        selected_slots=len(selected) if selected is not None else population,
        frames_counted=frames_counted,
        flagged_delays=flagged,
    )


# -- output ----------------------------------------------------------------


def _summary_cells(metrics: DeviceMetrics) -> list:
    return [
        str(metrics.device),
        f"{metrics.avg_throughput_kbps:.3f}",
        f"{metrics.avg_delay_ms:.3f}",
        f"{metrics.max_delay_ms:.3f}",
        f"{metrics.retx_pct:.4f}",
        f"{metrics.fast_retx_pct:.4f}",
        f"{metrics.wasted_bw_pct:.4f}",
    ]


def write_summary_csv(summary: MetricsSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for metrics in summary.devices:
            writer.writerow(_summary_cells(metrics))


def format_table(summary: MetricsSummary) -> str:
    """Console rendering of the summary: one aligned row per device."""
    table = [SUMMARY_COLUMNS] + [_summary_cells(m) for m in summary.devices]
    widths = [max(len(row[col]) for row in table) for col in range(len(SUMMARY_COLUMNS))]
    lines = []
    for i, row in enumerate(table):
        cells = [c.ljust(w) if i == 0 else c.rjust(w) for c, w in zip(row, widths)]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def write_delay_series_csv(delays, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["device", "frame_seq", "frame_timestamp", "arrival_time", "t_ci_ms", "t_ete_ms", "flagged"]
        )
        for d in delays:
            writer.writerow(
                [
                    d.device_id,
                    d.frame_seq,
                    d.frame_timestamp,
                    f"{d.arrival_time:.3f}",
                    f"{d.t_ci_ms:.3f}",
                    f"{d.t_ete_ms:.3f}",
                    int(d.flagged),
                ]
            )


def write_throughput_series_csv(series: dict, window_s: float, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["device", "window_start_s", "kbit_per_s"])
        for dev in sorted(series):
            for k, value in enumerate(series[dev]):
                writer.writerow([dev, f"{k * window_s:g}", f"{value:.3f}"])
