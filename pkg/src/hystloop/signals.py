"""
Reference waveforms, waveform metrics and trace I/O.

All metric functions assume the trace spans a whole number of periods. They do not try to detect
the period; the loop engine hands them whole-period windows only.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import numpy.typing as npt

from .errors import DegenerateSignalError, ParameterError

# Theoretical RMS / mean-rectified ratios of the ideal shapes.
FF_SINE = math.pi / (2.0 * math.sqrt(2.0))
FF_SQUARE = 1.0
FF_TRIANGLE = 2.0 / math.sqrt(3.0)
FF_PARABOLIC = math.sqrt(6.0 / 5.0)
"""Integral of a triangle wave: piecewise parabolic arches."""

FF_BY_SHAPE = {
    "sine": FF_SINE,
    "square": FF_SQUARE,
    "triangle": FF_TRIANGLE,
    "parabolic": FF_PARABOLIC,
}

# Shape obtained by integrating each reference shape once (v_B -> B).
INTEGRATED_SHAPE = {"sine": "sine", "square": "triangle", "triangle": "parabolic"}

SHAPES = ("sine", "square", "triangle")
MIN_SAMPLES_PER_PERIOD = 16


@dataclasses.dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled real-valued series. ``dt`` is the sample period in seconds."""

    samples: npt.NDArray[np.float64]
    dt: float
    label: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ParameterError("samples", f"expected a 1-D sequence, got shape {arr.shape}")
        object.__setattr__(self, "samples", arr)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ParameterError("dt", f"must be positive and finite, got {self.dt}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def time(self) -> npt.NDArray[np.float64]:
        return np.arange(len(self.samples)) * self.dt

    def tail(self, n: int) -> SignalTrace:
        """Last ``n`` samples as a new trace."""
        if not 0 < n <= len(self.samples):
            raise ParameterError("n", f"window of {n} samples does not fit a trace of {len(self.samples)}")
        return SignalTrace(self.samples[-n:], self.dt, self.label)


@dataclasses.dataclass(frozen=True)
class ReferenceSpec:
    shape: str = "sine"
    frequency: float = 5.0
    """Hz"""
    amplitude: float = 1.0
    phase: float = 0.0
    """Radians."""
    periods: int = 5
    samples_per_period: int = 1000

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ParameterError("shape", f"must be one of {SHAPES}, got {self.shape!r}")
        if not (self.frequency > 0 and math.isfinite(self.frequency)):
            raise ParameterError("frequency", f"must be positive, got {self.frequency}")
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ParameterError("amplitude", f"must be positive, got {self.amplitude}")
        if not math.isfinite(self.phase):
            raise ParameterError("phase", f"must be finite, got {self.phase}")
        if int(self.periods) != self.periods or self.periods < 1:
            raise ParameterError("periods", f"must be a positive integer, got {self.periods}")
        if int(self.samples_per_period) != self.samples_per_period or self.samples_per_period < MIN_SAMPLES_PER_PERIOD:
            raise ParameterError(
                "samples_per_period",
                f"must be an integer >= {MIN_SAMPLES_PER_PERIOD}, got {self.samples_per_period}",
            )

    @property
    def dt(self) -> float:
        return 1.0 / (self.frequency * self.samples_per_period)

    @property
    def n_samples(self) -> int:
        return int(self.periods) * int(self.samples_per_period)


def generate_reference(spec: ReferenceSpec) -> SignalTrace:
    """
    Samples the reference waveform at t = k*dt.

    The square wave is +amplitude on the first half of each cycle (cycle fraction in [0, 0.5)) and
    -amplitude on the second, so the rising zero crossing maps to +amplitude. The triangle has the same
    phase convention as the sine: zero at the cycle start, rising to +amplitude at a quarter cycle.
    """
    n = spec.n_samples
    k = np.arange(n, dtype=np.float64)
    # Cycle fraction computed from the index keeps sample instants exact for integer samples/period.
    frac = np.mod(k / spec.samples_per_period + spec.phase / (2.0 * math.pi), 1.0)
    if spec.shape == "sine":
        y = np.sin(2.0 * math.pi * frac)
    elif spec.shape == "square":
        y = np.where(frac < 0.5, 1.0, -1.0)
    else:
        y = np.where(frac < 0.25, 4.0 * frac, np.where(frac < 0.75, 2.0 - 4.0 * frac, 4.0 * frac - 4.0))
    return SignalTrace(spec.amplitude * y, spec.dt, f"ref_{spec.shape}")


def _values(trace: SignalTrace | Sequence[float] | npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    x = trace.samples if isinstance(trace, SignalTrace) else np.asarray(trace, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("trace", "empty trace")
    return x


def rms(trace: SignalTrace | Sequence[float]) -> float:
    x = _values(trace)
    return float(np.sqrt(np.mean(x * x)))


def mean_rectified(trace: SignalTrace | Sequence[float]) -> float:
    """Mean of |x|."""
    return float(np.mean(np.abs(_values(trace))))


def dc_component(trace: SignalTrace | Sequence[float]) -> float:
    return float(np.mean(_values(trace)))


def form_factor_percent(trace: SignalTrace | Sequence[float], ff_theoretical: float = FF_SINE) -> float:
    """
    Relative deviation, in percent, of the RMS / mean-rectified ratio from that of the ideal shape.

    The caller must pass a window covering an integer number of periods, otherwise the result is biased.
    Negative values mean the signal is "squarer" than the ideal shape.
    """
    if not (ff_theoretical > 0 and math.isfinite(ff_theoretical)):
        raise ParameterError("ff_theoretical", f"must be positive, got {ff_theoretical}")
    x = _values(trace)
    peak = float(np.max(np.abs(x)))
    mr = float(np.mean(np.abs(x)))
    if peak == 0.0 or mr < 1e-15 * peak:
        raise DegenerateSignalError("mean rectified value is zero; form factor undefined")
    ratio = float(np.sqrt(np.mean(x * x))) / mr
    return 100.0 * (ratio - ff_theoretical) / ff_theoretical


def integrate_trace(trace: SignalTrace, scale: float = 1.0, remove_mean: bool = False) -> SignalTrace:
    """
    Cumulative trapezoidal integral starting at zero, times ``scale``.
    With ``remove_mean`` the mean of the result is subtracted so the integral is centered.
    """
    x = _values(trace)
    out = np.empty_like(x)
    out[0] = 0.0
    np.cumsum(0.5 * (x[1:] + x[:-1]) * trace.dt, out=out[1:])
    out *= scale
    if remove_mean:
        out -= np.mean(out)
    return SignalTrace(out, trace.dt, f"int_{trace.label}" if trace.label else "integral")


def ff_theoretical_for(shape: str) -> float:
    try:
        return FF_BY_SHAPE[shape]
    except KeyError:
        raise ParameterError("shape", f"unknown shape {shape!r}; expected one of {sorted(FF_BY_SHAPE)}") from None


def format_float(x: float) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(x))


def write_traces_csv(path: str | Path, traces: Mapping[str, SignalTrace] | Iterable[SignalTrace]) -> None:
    """
    Writes equally long traces as columns ``t,<label>...`` with t = index*dt.
    A mapping supplies the column names; a plain iterable uses each trace's label.
    """
    items = list(traces.items()) if isinstance(traces, Mapping) else [(tr.label, tr) for tr in traces]
    if not items:
        raise ParameterError("traces", "nothing to write")
    n = len(items[0][1])
    dt = items[0][1].dt
    for name, tr in items:
        if len(tr) != n:
            raise ParameterError(name, f"length {len(tr)} differs from {n}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t"] + [name for name, _ in items])
        cols = [tr.samples for _, tr in items]
        for i in range(n):
            w.writerow([format_float(i * dt)] + [format_float(c[i]) for c in cols])
    tmp.replace(path)


def read_traces_csv(path: str | Path) -> dict[str, SignalTrace]:
    """
    Reads a file written by :func:`write_traces_csv`. The sample period is recovered from the first two
    time stamps. Malformed content raises ``ParameterError`` naming the line number.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or not rows[0] or rows[0][0] != "t":
        raise ParameterError("line 1", "header must start with column 't'")
    header = rows[0]
    if len(set(header)) != len(header):
        raise ParameterError("line 1", "duplicate column names")
    data: list[list[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParameterError(f"line {lineno}", f"expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as ex:
            raise ParameterError(f"line {lineno}", str(ex)) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"line {lineno}", "non-finite value")
        data.append(vals)
    if len(data) < 2:
        raise ParameterError("data", "at least two samples are required to infer dt")
    arr = np.array(data)
    dt = float(arr[1, 0] - arr[0, 0])
    return {name: SignalTrace(arr[:, j], dt, name) for j, name in enumerate(header) if j > 0}
