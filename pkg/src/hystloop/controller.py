"""
Discrete model-free controller without derivative estimation, plus a textbook PID baseline.

At step k the controller receives the reference sample and the measurement produced at the previous
sample, and emits

    integral_acc[k+1] = integral_acc[k] + Ki * (v_ref - v_meas) * dt
    u_internal[k+1]   = u_internal[k] + Kp * (k_alpha * exp(-k_beta * k) - v_meas)
    u[k]              = integral_acc[k+1] + u_internal[k+1]

The exponential is an initialization function standing in for the derivative estimate of the classical
model-free law; it fades out as the step index grows.
"""

from __future__ import annotations

import dataclasses
import math

from .errors import NumericError, ParameterError


@dataclasses.dataclass(frozen=True)
class CtrlParams:
    Kp: float = 0.05
    Ki: float = 100.0
    k_alpha: float = 0.0
    k_beta: float = 0.0
    u_limit: float | None = None
    """Symmetric output saturation; None disables it."""
    anti_windup: bool = False
    """Freeze integral_acc while the output saturates."""
    u_internal0: float = 0.0

    def __post_init__(self) -> None:
        for name in ("Kp", "Ki", "k_alpha", "k_beta", "u_internal0"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ParameterError(name, f"must be a finite number, got {v!r}")
        if self.u_limit is not None and not (self.u_limit > 0 and math.isfinite(self.u_limit)):
            raise ParameterError("u_limit", f"must be positive when set, got {self.u_limit}")


@dataclasses.dataclass(frozen=True)
class CtrlState:
    k: int = 0
    integral_acc: float = 0.0
    u_internal: float = 0.0
    last_u: float = 0.0


def validate(params: CtrlParams) -> list[str]:
    """Raises on hard violations, returns human-readable warnings for legal but suspicious settings."""
    if not params.Kp > 0:
        raise ParameterError("Kp", f"must be positive, got {params.Kp}")
    if params.Ki < 0:
        raise ParameterError("Ki", f"must be non-negative, got {params.Ki}")
    if params.k_beta < 0:
        raise ParameterError("k_beta", f"must be non-negative, got {params.k_beta}")
    warnings = []
    if params.Ki == 0:
        warnings.append("Ki = 0: the reference enters only through the initialization term; no tracking integral")
    if params.k_beta == 0 and params.k_alpha != 0:
        warnings.append("k_beta = 0 with k_alpha != 0: the initialization term is a permanent bias ramp")
    if params.anti_windup and params.u_limit is None:
        warnings.append("anti_windup has no effect without u_limit")
    return warnings


def reset(params: CtrlParams) -> CtrlState:
    return CtrlState(k=0, integral_acc=0.0, u_internal=params.u_internal0, last_u=0.0)


def ctrl_step(state: CtrlState, v_ref: float, v_meas: float, dt: float, params: CtrlParams) -> tuple[float, CtrlState]:
    if not (math.isfinite(v_ref) and math.isfinite(v_meas)):
        raise NumericError(f"non-finite controller input v_ref={v_ref}, v_meas={v_meas}", step=state.k)
    if not dt > 0:
        raise ParameterError("dt", f"must be positive, got {dt}")
    err = v_ref - v_meas
    integral = state.integral_acc + params.Ki * err * dt
    internal = state.u_internal + params.Kp * (params.k_alpha * math.exp(-params.k_beta * state.k) - v_meas)
    u = integral + internal
    lim = params.u_limit
    if lim is not None and abs(u) > lim:
        u = math.copysign(lim, u)
        if params.anti_windup:
            integral = state.integral_acc
    if not math.isfinite(u):
        raise NumericError("controller output is not finite", step=state.k)
    return u, CtrlState(k=state.k + 1, integral_acc=integral, u_internal=internal, last_u=u)


def handoff(state: CtrlState, u_last: float) -> CtrlState:
    """
    Re-seeds the internal recursion so that the first closed-loop output continues from ``u_last``
    (bumpless transfer after open-loop initialization cycles). The step index is kept.
    """
    return dataclasses.replace(state, u_internal=u_last - state.integral_acc, last_u=u_last)


@dataclasses.dataclass(frozen=True)
class PidParams:
    """Parallel PID; the derivative acts on the error through a first-order filter of bandwidth N_filter [rad/s]."""

    Kp: float = 1.0
    Ki: float = 0.0
    Kd: float = 0.0
    N_filter: float = 100.0
    u_limit: float | None = None

    def __post_init__(self) -> None:
        for name in ("Kp", "Ki", "Kd", "N_filter"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(name, f"must be non-negative and finite, got {v}")
        if self.N_filter == 0 and self.Kd != 0:
            raise ParameterError("N_filter", "must be positive when Kd is used")


@dataclasses.dataclass(frozen=True)
class PidState:
    k: int = 0
    integral: float = 0.0
    derivative: float = 0.0
    last_error: float = 0.0


def pid_step(state: PidState, v_ref: float, v_meas: float, dt: float, params: PidParams) -> tuple[float, PidState]:
    if not (math.isfinite(v_ref) and math.isfinite(v_meas)):
        raise NumericError(f"non-finite controller input v_ref={v_ref}, v_meas={v_meas}", step=state.k)
    err = v_ref - v_meas
    integral = state.integral + params.Ki * err * dt
    # Backward-Euler discretization of Kd*N*s/(s + N).
    n_dt = params.N_filter * dt
    deriv = (state.derivative + params.Kd * params.N_filter * (err - state.last_error)) / (1.0 + n_dt)
    u = params.Kp * err + integral + deriv
    if params.u_limit is not None and abs(u) > params.u_limit:
        u = math.copysign(params.u_limit, u)
    return u, PidState(k=state.k + 1, integral=integral, derivative=deriv, last_error=err)
