"""
Plants driven by the controller output.

The main plant is the scalar Jiles-Atherton (JA) hysteresis model in the usual split form:

    He    = H + alpha*M
    M_an  = Ms * L(He/a),           L(x) = coth(x) - 1/x
    dM_irr/dH = (M_an - M_irr) / (delta*k_pin - alpha*(M_an - M_irr)),    delta = sign(dH)
    M     = M_irr + c_rev*(M_an - M_irr)
    B     = mu0*(H + M)

The irreversible increment is zeroed whenever (M_an - M)*delta < 0. The ODE in H is integrated with
classical RK4 over sub-steps no wider than a/20 (within |H| <= 50a), so the result depends on the end
points of the field increment only (not on how the caller partitions it) to within integration error.

The rate-dependent variant adds a loss-separation field to the static one,

    H_applied = H_static + k_eddy*dB/dt + k_excess*sign(dB/dt)*sqrt(|dB/dt|),

and solves that implicitly for H_static at every sample.

Two memoryless/linear plants (first-order lag, tanh saturation) serve as test oracles.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Union

from scipy.optimize import brentq

from .errors import ConfigurationError, NumericError, ParameterError

MU_0 = 4e-7 * math.pi
"""Vacuum permeability [H/m], pre-2019 exact value."""

_SERIES_THRESHOLD = 1e-4
_LARGE_X = 30.0


@dataclasses.dataclass(frozen=True)
class DynamicCoef:
    k_eddy: float = 0.02
    """Classical eddy-current field per unit dB/dt [A*s/(m*T)]."""
    k_excess: float = 0.3
    """Excess-loss field per unit sqrt(|dB/dt|)."""

    def __post_init__(self) -> None:
        for name in ("k_eddy", "k_excess"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ParameterError(name, f"must be non-negative and finite, got {v}")


@dataclasses.dataclass(frozen=True)
class JaParams:
    """
    Jiles-Atherton material constants. Defaults are representative of non-oriented SiFe and serve as
    test fixtures only; they are not identified from any particular measured sample.

        Ms          saturation magnetization        A/m
        a           anhysteretic shape parameter    A/m
        k_pin       pinning (loss) parameter        A/m
        c_rev       reversibility                   [0, 1)
        alpha       inter-domain coupling           [0, a/Ms)
        field_gain  applied field per unit input    A/m per unit of u
    """

    Ms: float = 1.6e6
    a: float = 1100.0
    k_pin: float = 400.0
    c_rev: float = 0.2
    alpha: float = 1.6e-4
    field_gain: float = 1.0
    dynamic: DynamicCoef | None = None

    def __post_init__(self) -> None:
        def check(name: str, ok: bool) -> None:
            if not ok:
                raise ParameterError(name, f"invalid value {getattr(self, name)}")

        for name in ("Ms", "a", "k_pin", "c_rev", "alpha", "field_gain"):
            check(name, math.isfinite(getattr(self, name)))
        check("Ms", self.Ms > 0)
        check("a", self.a > 0)
        check("k_pin", self.k_pin >= 0)
        check("c_rev", 0 <= self.c_rev < 1)
        check("alpha", 0 <= self.alpha < self.a / self.Ms)
        check("field_gain", self.field_gain > 0)

    @property
    def max_substep(self) -> float:
        return self.a / 20.0


CANONICAL_JA = JaParams()


@dataclasses.dataclass(frozen=True)
class JaState:
    H: float = 0.0
    M: float = 0.0
    B: float = 0.0
    prev_dH_sign: int = 1
    clamp_events: int = 0
    """Number of sub-steps where M had to be clamped to +/-Ms; zero in healthy runs."""


def _langevin(x: float) -> float:
    if abs(x) < _SERIES_THRESHOLD:
        return x / 3.0 - x**3 / 45.0
    return 1.0 / math.tanh(x) - 1.0 / x


def _langevin_slope(x: float) -> float:
    ax = abs(x)
    if ax < _SERIES_THRESHOLD:
        return 1.0 / 3.0 - x * x / 15.0
    if ax > _LARGE_X:
        return 1.0 / (x * x)
    s = math.sinh(x)
    return 1.0 / (x * x) - 1.0 / (s * s)


def anhysteretic(He: float, params: JaParams) -> float:
    """Langevin anhysteretic magnetization at effective field ``He`` [A/m]."""
    return params.Ms * _langevin(He / params.a)


def anhysteretic_slope(He: float, params: JaParams) -> float:
    """dM_an/dHe."""
    return params.Ms / params.a * _langevin_slope(He / params.a)


def _slope_function(params: JaParams):
    """dM/dH(H, M, delta) with the material constants bound as locals (hot path of every simulation)."""
    Ms, a, k, c, alpha = params.Ms, params.a, params.k_pin, params.c_rev, params.alpha
    ms_a = Ms / a
    one_c = 1.0 - c
    k_floor = 0.05 * k
    tanh, sinh = math.tanh, math.sinh

    def slope(H: float, M: float, delta: int) -> float:
        x = (H + alpha * M) / a
        ax = x if x >= 0.0 else -x
        if ax < _SERIES_THRESHOLD:
            lang = x / 3.0 - x * x * x / 45.0
            dlang = 1.0 / 3.0 - x * x / 15.0
        elif ax > _LARGE_X:
            lang = (1.0 if x > 0 else -1.0) - 1.0 / x
            dlang = 1.0 / (x * x)
        else:
            sh = sinh(x)
            lang = 1.0 / tanh(x) - 1.0 / x
            dlang = 1.0 / (x * x) - 1.0 / (sh * sh)
        m_an = Ms * lang
        dm_an = ms_a * dlang
        if k == 0.0:
            # No pinning: the irreversible part follows the anhysteretic exactly.
            return dm_an / (1.0 - alpha * dm_an)
        diff = m_an - (M - c * m_an) / one_c
        if diff * delta > 0.0:
            ad = diff if diff > 0 else -diff
            # delta*denominator = k - alpha*|diff|; floored to keep the slope bounded after abrupt reversals.
            den = k - alpha * ad
            dirr = ad / (den if den > k_floor else k_floor)
        else:
            dirr = 0.0
        return (one_c * dirr + c * dm_an) / (1.0 - alpha * c * dm_an)

    return slope


_slope_cache: dict[JaParams, object] = {}


def _slope_for(params: JaParams):
    f = _slope_cache.get(params)
    if f is None:
        if len(_slope_cache) > 256:
            _slope_cache.clear()
        f = _slope_cache[params] = _slope_function(params)
    return f


def susceptibility(H: float, M: float, delta: int, params: JaParams) -> float:
    """Differential susceptibility dM/dH at (H, M) for a field moving in direction ``delta``."""
    return _slope_for(params)(H, M, delta)


_FAR_FIELD = 50.0
"""Beyond |H| = 50a the sub-steps grow geometrically (M is pinned within 2 % of +/-Ms there)."""
_FAR_GROWTH = 0.05


def _rk4(f, x: float, M: float, h: float, delta: int, Ms: float) -> tuple[float, int]:
    hh = 0.5 * h
    k1 = f(x, M, delta)
    k2 = f(x + hh, M + hh * k1, delta)
    k3 = f(x + hh, M + hh * k2, delta)
    k4 = f(x + h, M + h * k3, delta)
    M += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    if M > Ms:
        return Ms, 1
    if M < -Ms:
        return -Ms, 1
    return M, 0


def _advance(H: float, M: float, H_next: float, params: JaParams) -> tuple[float, int]:
    """
    RK4 integration of M from H to H_next; returns (M_next, clamp_count).

    Inside |H| <= 50a the increment is split into equal sub-steps no wider than a/20. Outside, the
    sub-step grows in proportion to the distance from that boundary, which keeps the cost of absurd
    fields (a diverging candidate during tuning) logarithmic instead of linear in |H|.
    """
    dH = H_next - H
    if dH == 0.0:
        return M, 0
    delta = 1 if dH > 0 else -1
    f = _slope_for(params)
    Ms = params.Ms
    h0 = params.max_substep
    far = _FAR_FIELD * params.a
    clamps = 0
    x = H
    while x != H_next:
        if abs(x) < far or (abs(x) == far and (x > 0) != (delta > 0)):
            # Near region: uniform sub-steps up to the boundary (or the target).
            end = H_next if abs(H_next) <= far else math.copysign(far, H_next)
            n = max(1, math.ceil(abs(end - x) / h0))
            h = (end - x) / n
            for i in range(n):
                M, c = _rk4(f, x + i * h, M, h, delta, Ms)
                clamps += c
            x = end
        else:
            outward = (x > 0) == (delta > 0)
            excess = abs(x) - far
            step = max(h0, _FAR_GROWTH * excess / (1.0 if outward else 1.0 + _FAR_GROWTH))
            if outward:
                end = x + delta * step
                if (H_next - end) * delta < 0:
                    end = H_next
            else:
                end = x + delta * min(step, excess)
                if (H_next - end) * delta < 0:
                    end = H_next
            M, c = _rk4(f, x, M, end - x, delta, Ms)
            clamps += c
            x = end
    return M, clamps


def ja_step(state: JaState, H_next: float, dt: float, params: JaParams) -> JaState:
    """Advances the static JA state to the applied field ``H_next`` (rate-independent; dt only validated)."""
    if not math.isfinite(H_next):
        raise NumericError(f"non-finite field H_next={H_next}")
    if not dt > 0:
        raise ParameterError("dt", f"must be positive, got {dt}")
    if H_next == state.H:
        return state
    M, clamps = _advance(state.H, state.M, H_next, params)
    return JaState(
        H=H_next,
        M=M,
        B=MU_0 * (H_next + M),
        prev_dH_sign=1 if H_next > state.H else -1,
        clamp_events=state.clamp_events + clamps,
    )


def ja_dynamic_field(dB_dt: float, params: JaParams) -> float:
    """Rate-dependent field [A/m] added on top of the static field: eddy-current plus excess term."""
    if params.dynamic is None:
        raise ConfigurationError("dynamic JA field requested on a parameter set without dynamic coefficients")
    d = params.dynamic
    return d.k_eddy * dB_dt + d.k_excess * math.copysign(math.sqrt(abs(dB_dt)), dB_dt)


# ---------------------------------------------------------------------------------------------------------------------
# Plant kinds


@dataclasses.dataclass(frozen=True)
class JaStatic:
    params: JaParams = CANONICAL_JA


@dataclasses.dataclass(frozen=True)
class JaDynamic:
    params: JaParams = dataclasses.field(default_factory=lambda: JaParams(dynamic=DynamicCoef()))

    def __post_init__(self) -> None:
        if self.params.dynamic is None:
            raise ConfigurationError("ja_dynamic plant requires dynamic coefficients")


@dataclasses.dataclass(frozen=True)
class Linear:
    """First-order lag; time_constant = 0 degenerates to a static gain (pass-through for gain 1)."""

    gain: float = 1.0
    time_constant: float = 0.0

    def __post_init__(self) -> None:
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise ParameterError("gain", f"must be positive, got {self.gain}")
        if not (self.time_constant >= 0 and math.isfinite(self.time_constant)):
            raise ParameterError("time_constant", f"must be non-negative, got {self.time_constant}")


@dataclasses.dataclass(frozen=True)
class Saturating:
    gain: float = 1.0
    sat_level: float = 1.0

    def __post_init__(self) -> None:
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise ParameterError("gain", f"must be positive, got {self.gain}")
        if not (self.sat_level > 0 and math.isfinite(self.sat_level)):
            raise ParameterError("sat_level", f"must be positive, got {self.sat_level}")


PlantKind = Union[JaStatic, JaDynamic, Linear, Saturating]

PLANT_NAMES = {JaStatic: "ja_static", JaDynamic: "ja_dynamic", Linear: "linear", Saturating: "saturating"}


@dataclasses.dataclass(frozen=True)
class DynamicState:
    ja: JaState = JaState()
    """State of the static branch; ja.H is the static (effective) field."""
    H_applied: float = 0.0


@dataclasses.dataclass(frozen=True)
class LinearState:
    v: float = 0.0


PlantState = Union[JaState, DynamicState, LinearState, None]


def initial_state(kind: PlantKind) -> PlantState:
    """Demagnetized / at-rest state."""
    if isinstance(kind, JaStatic):
        return JaState()
    if isinstance(kind, JaDynamic):
        return DynamicState()
    if isinstance(kind, Linear):
        return LinearState()
    if isinstance(kind, Saturating):
        return None
    raise ConfigurationError(f"unknown plant kind {kind!r}")


def applied_field(state: PlantState) -> float:
    """Applied field H [A/m] of a JA plant state; NaN for non-magnetic plants."""
    if isinstance(state, JaState):
        return state.H
    if isinstance(state, DynamicState):
        return state.H_applied
    return math.nan


def _dynamic_step(state: DynamicState, H_applied: float, dt: float, params: JaParams) -> DynamicState:
    ja = state.ja
    if not math.isfinite(H_applied):
        raise NumericError(f"non-finite field H_applied={H_applied}")
    if H_applied == ja.H:
        # Static field already equals the applied one: dB/dt must be zero, nothing moves.
        return DynamicState(ja, H_applied)
    H0, M0, B0 = ja.H, ja.M, ja.B
    dyn = params.dynamic
    assert dyn is not None
    slope = _slope_for(params)
    delta = 1 if H_applied > H0 else -1
    tol = 1e-9 * params.a

    def residual(Hs: float) -> tuple[float, float]:
        """g(Hs) = Hs + H_dyn(dB/dt) - H_applied and dg/dHs; g is increasing in Hs."""
        M, _ = _advance(H0, M0, Hs, params)
        rate = (MU_0 * (Hs + M) - B0) / dt
        g = Hs + ja_dynamic_field(rate, params) - H_applied
        ar = abs(rate)
        d_field = dyn.k_eddy + (0.5 * dyn.k_excess / math.sqrt(ar) if ar > 0 else math.inf)
        return g, 1.0 + d_field * MU_0 * (1.0 + slope(Hs, M, delta)) / dt

    # g(H0) and g(H_applied) bracket the root. Safeguarded Newton: fall back to bisection whenever the
    # Newton iterate leaves the current bracket (e.g. near Hs = H0 where the sqrt term is singular).
    lo, hi = (H0, H_applied) if delta > 0 else (H_applied, H0)
    chi0 = slope(H0, M0, delta)
    x = H0 + (H_applied - H0) / (1.0 + dyn.k_eddy * MU_0 * (1.0 + chi0) / dt)
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        g, dg = residual(x)
        if g == 0.0:
            break
        if g < 0.0:
            lo = x
        else:
            hi = x
        xn = x - g / dg
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < tol or hi - lo < tol:
            x = xn
            break
        x = xn
    Hs = x
    return DynamicState(ja_step(ja, Hs, dt, params), H_applied)


def plant_eval(kind: PlantKind, u: float, state: PlantState, dt: float) -> tuple[float, PlantState]:
    """
    One sample of the plant: consumes the drive value ``u`` and returns (v_B, new_state).
    For the JA plants v_B is the induction B itself [T], with H = field_gain*u.
    """
    if not math.isfinite(u):
        raise NumericError(f"non-finite plant input u={u}")
    if isinstance(kind, JaStatic):
        assert isinstance(state, JaState)
        s = ja_step(state, kind.params.field_gain * u, dt, kind.params)
        return s.B, s
    if isinstance(kind, JaDynamic):
        assert isinstance(state, DynamicState)
        d = _dynamic_step(state, kind.params.field_gain * u, dt, kind.params)
        return d.ja.B, d
    if isinstance(kind, Linear):
        assert isinstance(state, LinearState)
        target = kind.gain * u
        if kind.time_constant == 0.0:
            v = target
        else:
            v = target + (state.v - target) * math.exp(-dt / kind.time_constant)
        return v, LinearState(v)
    if isinstance(kind, Saturating):
        return kind.sat_level * math.tanh(kind.gain * u / kind.sat_level), None
    raise ConfigurationError(f"unknown plant kind {kind!r}")


def saturation_knee(params: JaParams) -> float:
    """
    Knee-point induction [T] of the anhysteretic B(H) curve: the point past which a further 10 % rise
    in B takes a 50 % rise in H (the usual IEC knee-point convention for magnetic cores).
    """

    def b_an(H: float) -> float:
        # Anhysteretic with mean-field coupling: M = M_an(H + alpha*M), solved by bisection on M.
        lo, hi = 0.0, params.Ms
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if anhysteretic(H + params.alpha * mid, params) > mid:
                lo = mid
            else:
                hi = mid
        return MU_0 * (H + 0.5 * (lo + hi))

    def excess(H: float) -> float:
        return b_an(1.5 * H) / b_an(H) - 1.1

    # excess() is +0.4 on the linear part and falls below zero past the knee; at very large H the vacuum
    # term mu0*H takes over again, so the bracket stays well below that regime.
    return b_an(brentq(excess, 1e-3 * params.a, 100.0 * params.a, xtol=1e-9 * params.a))
