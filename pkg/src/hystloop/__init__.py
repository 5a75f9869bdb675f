"""Closed-loop waveform control of a hysteretic magnetic plant."""

__version__ = "0.1.0"
