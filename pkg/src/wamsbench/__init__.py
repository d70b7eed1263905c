"""Desk-scale testbench for synchrophasor wide-area monitoring telemetry.

Emulated grid sensors stream 55-byte timestamped frames at 10 Hz to a
data concentrator over a simulated impaired network (or real sockets).
An analysis pipeline computes one-way delay, throughput, retransmission
percentages, wasted bandwidth, and the sample-size statistics used to
pick how much of a capture to analyze.
"""

__version__ = "0.1.0"
