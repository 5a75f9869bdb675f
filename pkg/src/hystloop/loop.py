"""
Closed-loop engine: controller -> plant with a one-sample measurement delay.

Sample k: the controller sees (ref[k], v_B[k-1]) and emits u[k]; the plant consumes u[k] (plus any
input disturbance) and produces v_B[k]. The first ``init_cycles`` periods drive the plant open-loop with
the raw reference while the controller runs in shadow mode; at the handoff its internal recursion is
re-seeded so the drive continues without a jump.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Any, Union

import numpy as np

from . import controller as ctl
from . import plant as pl
from .errors import DivergenceError, NumericError, ParameterError, StateError
from .signals import (
    INTEGRATED_SHAPE,
    ReferenceSpec,
    SignalTrace,
    dc_component,
    ff_theoretical_for,
    form_factor_percent,
    generate_reference,
    integrate_trace,
)

DIVERGENCE_FACTOR = 1e12

ControllerSpec = Union[ctl.CtrlParams, ctl.PidParams, None]


@dataclasses.dataclass(frozen=True)
class Symmetrization:
    relaxation: float = 0.5
    """Fraction of the last period's mean removed per period, in (0, 1]."""
    target: str = "u"
    """'u' corrects the drive's own DC; 'output' corrects the DC observed on v_B."""

    def __post_init__(self) -> None:
        if not 0 < self.relaxation <= 1:
            raise ParameterError("relaxation", f"must be in (0, 1], got {self.relaxation}")
        if self.target not in ("u", "output"):
            raise ParameterError("target", f"must be 'u' or 'output', got {self.target!r}")


@dataclasses.dataclass(frozen=True)
class LoopConfig:
    reference: ReferenceSpec
    plant: pl.PlantKind
    controller: ControllerSpec = None
    init_cycles: int = 0
    symmetrization: Symmetrization | None = None
    measure_periods: int = 1
    seed: int = 0
    noise_std: float = 0.0
    """Std-dev of Gaussian noise added to the measurement seen by the controller."""
    disturbance: float = 0.0
    """Constant added to the plant input."""
    disturbance_start_period: int = 0

    def __post_init__(self) -> None:
        periods = self.reference.periods
        if int(self.init_cycles) != self.init_cycles or self.init_cycles < 0:
            raise ParameterError("init_cycles", f"must be a non-negative integer, got {self.init_cycles}")
        if int(self.measure_periods) != self.measure_periods or self.measure_periods < 1:
            raise ParameterError("measure_periods", f"must be a positive integer, got {self.measure_periods}")
        if self.measure_periods > periods - self.init_cycles:
            raise ParameterError(
                "measure_periods",
                f"{self.measure_periods} exceeds periods - init_cycles = {periods - self.init_cycles}",
            )
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ParameterError("noise_std", f"must be non-negative, got {self.noise_std}")
        if not math.isfinite(self.disturbance):
            raise ParameterError("disturbance", f"must be finite, got {self.disturbance}")
        if int(self.disturbance_start_period) != self.disturbance_start_period or self.disturbance_start_period < 0:
            raise ParameterError("disturbance_start_period", f"must be a non-negative integer")
        if isinstance(self.controller, ctl.CtrlParams):
            ctl.validate(self.controller)


@dataclasses.dataclass(frozen=True)
class RunResult:
    traces: dict[str, SignalTrace]
    """Keys: ref, u, vB, B, plus H for JA plants."""
    metrics: dict[str, float]
    manifest: dict[str, Any]
    warnings: tuple[str, ...] = ()

    @property
    def is_magnetic(self) -> bool:
        return "H" in self.traces


def symmetrize(u_history: SignalTrace | np.ndarray, period_samples: int, relaxation: float) -> float:
    """
    Offset to add to the drive over the next period: minus ``relaxation`` times the mean of the last full
    period of ``u_history``. The engine accumulates these increments, so the per-period DC of an otherwise
    unchanged drive decays by the factor (1 - relaxation) each period.
    """
    if not 0 < relaxation <= 1:
        raise ParameterError("relaxation", f"must be in (0, 1], got {relaxation}")
    x = u_history.samples if isinstance(u_history, SignalTrace) else np.asarray(u_history, dtype=np.float64)
    if period_samples < 1 or len(x) < period_samples:
        raise StateError(f"symmetrization needs a full period of {period_samples} samples, have {len(x)}")
    return -relaxation * float(np.mean(x[-period_samples:]))


def run_open_loop(cfg: LoopConfig) -> RunResult:
    """Plant driven directly by the reference (any controller in ``cfg`` is ignored)."""
    return run_closed_loop(dataclasses.replace(cfg, controller=None, symmetrization=None))


def run_closed_loop(cfg: LoopConfig) -> RunResult:
    ref_tr = generate_reference(cfg.reference)
    ref = ref_tr.samples
    dt = ref_tr.dt
    spp = int(cfg.reference.samples_per_period)
    n = len(ref)
    n_init = int(cfg.init_cycles) * spp
    limit = DIVERGENCE_FACTOR * cfg.reference.amplitude
    magnetic = isinstance(cfg.plant, (pl.JaStatic, pl.JaDynamic))
    spec = cfg.controller
    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, cfg.noise_std, n) if cfg.noise_std > 0 else None
    dist_start = int(cfg.disturbance_start_period) * spp

    u_arr = np.zeros(n)
    v_arr = np.zeros(n)
    h_arr = np.full(n, math.nan) if magnetic else None
    pstate = pl.initial_state(cfg.plant)
    if isinstance(spec, ctl.CtrlParams):
        cstate: Any = ctl.reset(spec)
    elif isinstance(spec, ctl.PidParams):
        cstate = ctl.PidState()
    else:
        cstate = None
    sym = cfg.symmetrization
    offset = 0.0
    v_prev = 0.0

    def partial(k: int) -> dict[str, np.ndarray]:
        out = {"ref": ref[:k].copy(), "u": u_arr[:k].copy(), "vB": v_arr[:k].copy()}
        if h_arr is not None:
            out["H"] = h_arr[:k].copy()
        return out

    for k in range(n):
        r = ref[k]
        try:
            if spec is None:
                u = r
            else:
                meas = v_prev if noise is None else v_prev + noise[k]
                if isinstance(spec, ctl.CtrlParams):
                    if k == n_init and n_init > 0:
                        cstate = ctl.handoff(cstate, u_arr[k - 1])
                    uc, cstate = ctl.ctrl_step(cstate, r, meas, dt, spec)
                else:
                    uc, cstate = ctl.pid_step(cstate, r, meas, dt, spec)
                if k < n_init:
                    u = r
                else:
                    j = k - n_init
                    if sym is not None and j > 0 and j % spp == 0:
                        if sym.target == "u":
                            offset += symmetrize(u_arr[:k], spp, sym.relaxation)
                        else:
                            offset += _output_correction(u_arr[k - spp : k], v_arr[k - spp : k], sym.relaxation)
                    u = uc + offset
            d = cfg.disturbance if k >= dist_start else 0.0
            v, pstate = pl.plant_eval(cfg.plant, u + d, pstate, dt)
        except NumericError as ex:
            raise DivergenceError(k, str(ex), partial(k)) from ex
        u_arr[k] = u
        v_arr[k] = v
        if h_arr is not None:
            h_arr[k] = pl.applied_field(pstate)
        if not (abs(u) <= limit and abs(v) <= limit):
            raise DivergenceError(k, f"|u|={abs(u):.3g} or |v_B|={abs(v):.3g} exceeds {limit:.3g}", partial(k + 1))
        v_prev = v

    traces = {
        "ref": ref_tr,
        "u": SignalTrace(u_arr, dt, "u"),
        "vB": SignalTrace(v_arr, dt, "vB"),
    }
    # The integration constant of B is arbitrary; centre it on the measured window so the start-up
    # transient does not leave an offset there.
    b = integrate_trace(traces["vB"]).samples
    traces["B"] = SignalTrace(b - np.mean(b[-int(cfg.measure_periods) * spp :]), dt, "B")
    if h_arr is not None:
        traces["H"] = SignalTrace(h_arr, dt, "H")
    metrics = compute_metrics(traces, cfg)
    warnings = tuple(ctl.validate(spec)) if isinstance(spec, ctl.CtrlParams) else ()
    if isinstance(pstate, (pl.JaState, pl.DynamicState)):
        clamps = pstate.clamp_events if isinstance(pstate, pl.JaState) else pstate.ja.clamp_events
        if clamps:
            warnings += (f"magnetization clamped to +/-Ms in {clamps} sub-steps",)
    return RunResult(traces=traces, metrics=metrics, manifest=config_to_dict(cfg), warnings=warnings)


def _output_correction(u_last: np.ndarray, v_last: np.ndarray, relaxation: float) -> float:
    """Offset in drive units that cancels a fraction of the DC seen on v_B over the last period."""
    v_span = float(np.ptp(v_last))
    if v_span == 0.0:
        return 0.0
    gain = float(np.ptp(u_last)) / v_span  # incremental drive-per-output estimate over the period
    return -relaxation * gain * float(np.mean(v_last))


def loop_area(x: np.ndarray, y: np.ndarray) -> float:
    """Closed contour integral of x dy over the samples (trapezoidal, closing segment included)."""
    xc = np.append(x, x[0])
    yc = np.append(y, y[0])
    return float(np.sum(0.5 * (xc[1:] + xc[:-1]) * np.diff(yc)))


def compute_metrics(traces: dict[str, SignalTrace], cfg: LoopConfig) -> dict[str, float]:
    """Metrics over the last ``measure_periods`` whole periods."""
    spp = int(cfg.reference.samples_per_period)
    w = int(cfg.measure_periods) * spp
    shape = cfg.reference.shape
    ref = traces["ref"].samples[-w:]
    u = traces["u"].samples[-w:]
    vb = traces["vB"].samples[-w:]
    b = traces["B"].samples[-w:]
    x = traces["H"].samples[-w:] if "H" in traces else u
    area = sum(loop_area(x[i : i + spp], vb[i : i + spp]) for i in range(0, w, spp)) / cfg.measure_periods
    return {
        "ff_vb_percent": form_factor_percent(vb, ff_theoretical_for(shape)),
        "ff_B_percent": form_factor_percent(b, ff_theoretical_for(INTEGRATED_SHAPE[shape])),
        "rmse_tracking": float(np.sqrt(np.mean((ref - vb) ** 2))),
        "dc_u": dc_component(u),
        "dc_vB": dc_component(vb),
        "loop_area": area,
    }


def per_period_dc(trace: SignalTrace, period_samples: int) -> np.ndarray:
    """Mean of each whole period in the trace."""
    x = trace.samples
    m = len(x) // period_samples
    return x[: m * period_samples].reshape(m, period_samples).mean(axis=1)


# ---------------------------------------------------------------------------------------------------------------------
# Config echo


def plant_to_dict(kind: pl.PlantKind) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": pl.PLANT_NAMES[type(kind)]}
    if isinstance(kind, (pl.JaStatic, pl.JaDynamic)):
        p = kind.params
        out.update(Ms=p.Ms, a=p.a, k_pin=p.k_pin, c_rev=p.c_rev, alpha=p.alpha, field_gain=p.field_gain)
        if p.dynamic is not None:
            out.update(k_eddy=p.dynamic.k_eddy, k_excess=p.dynamic.k_excess)
    elif isinstance(kind, pl.Linear):
        out.update(gain=kind.gain, time_constant=kind.time_constant)
    else:
        out.update(gain=kind.gain, sat_level=kind.sat_level)
    return out


def controller_to_dict(spec: ControllerSpec) -> dict[str, Any]:
    if spec is None:
        return {"kind": "none"}
    if isinstance(spec, ctl.CtrlParams):
        return {"kind": "cpi", **dataclasses.asdict(spec)}
    return {"kind": "pid", **dataclasses.asdict(spec)}


def config_to_dict(cfg: LoopConfig) -> dict[str, Any]:
    """Fully resolved configuration with a fixed key order."""
    r = cfg.reference
    sym = cfg.symmetrization
    return {
        "reference": {
            "shape": r.shape,
            "frequency": r.frequency,
            "amplitude": r.amplitude,
            "phase": r.phase,
            "periods": r.periods,
            "samples_per_period": r.samples_per_period,
        },
        "plant": plant_to_dict(cfg.plant),
        "controller": controller_to_dict(cfg.controller),
        "loop": {
            "init_cycles": cfg.init_cycles,
            "measure_periods": cfg.measure_periods,
            "seed": cfg.seed,
            "noise_std": cfg.noise_std,
            "disturbance": cfg.disturbance,
            "disturbance_start_period": cfg.disturbance_start_period,
            "symmetrization": None if sym is None else {"relaxation": sym.relaxation, "target": sym.target},
        },
    }
