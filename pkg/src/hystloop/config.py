"""
Experiment configuration files.

The on-disk format is sectioned key/value text (INI) with units spelled out in the key names::

    [reference]
    shape = sine
    frequency_hz = 5
    amplitude = 1.45

    [plant]
    kind = ja_static
    field_gain_A_per_m = 4000

Unknown sections and keys are errors, as are keys that do not apply to the selected plant or controller
kind. A run manifest (JSON, written by ``simulate``) can be loaded in place of an INI file and resolves
to the identical configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from pathlib import Path
from typing import Any, Callable, Mapping

from . import controller as ctl
from . import plant as pl
from .errors import HystloopError, ParameterError
from .loop import LoopConfig, Symmetrization, config_to_dict
from .signals import ReferenceSpec
from . import tuning


class ConfigError(HystloopError):
    """Invalid configuration; the message names the offending ``section.key``."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def _int(s: str) -> int:
    f = float(s)
    if f != int(f):
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


# ini key -> (canonical name, parser)
_Schema = Mapping[str, tuple[str, Callable[[str], Any]]]

REFERENCE_KEYS: _Schema = {
    "shape": ("shape", str),
    "frequency_hz": ("frequency", float),
    "amplitude": ("amplitude", float),
    "phase_rad": ("phase", float),
    "periods": ("periods", _int),
    "samples_per_period": ("samples_per_period", _int),
}
PLANT_KEYS: _Schema = {
    "kind": ("kind", str),
    "Ms_A_per_m": ("Ms", float),
    "a_A_per_m": ("a", float),
    "k_pin_A_per_m": ("k_pin", float),
    "c_rev": ("c_rev", float),
    "alpha": ("alpha", float),
    "field_gain_A_per_m": ("field_gain", float),
    "k_eddy_A_s_per_m_T": ("k_eddy", float),
    "k_excess": ("k_excess", float),
    "gain": ("gain", float),
    "time_constant_s": ("time_constant", float),
    "sat_level": ("sat_level", float),
}
CONTROLLER_KEYS: _Schema = {
    "kind": ("kind", str),
    "Kp": ("Kp", float),
    "Ki": ("Ki", float),
    "k_alpha": ("k_alpha", float),
    "k_beta_per_step": ("k_beta", float),
    "u_limit": ("u_limit", _opt_float),
    "anti_windup": ("anti_windup", _bool),
    "u_internal0": ("u_internal0", float),
    "Kd": ("Kd", float),
    "N_filter_rad_per_s": ("N_filter", float),
}
LOOP_KEYS: _Schema = {
    "init_cycles": ("init_cycles", _int),
    "measure_periods": ("measure_periods", _int),
    "seed": ("seed", _int),
    "noise_std": ("noise_std", float),
    "disturbance": ("disturbance", float),
    "disturbance_start_period": ("disturbance_start_period", _int),
    "symmetrization_lambda": ("relaxation", _opt_float),
    "symmetrization_target": ("target", str),
}
TUNE_KEYS: _Schema = {
    "optimizer": ("optimizer", str),
    "objective": ("objective", str),
    "budget": ("budget", _int),
    "iters": ("iters", _int),
    "T0": ("T0", float),
    "cooling": ("cooling", float),
    "seed": ("seed", _int),
    "points_per_dim": ("points_per_dim", _int),
    "refine": ("refine", _bool),
    "w_err": ("w_err", float),
    "w_ff": ("w_ff", float),
}
SECTIONS: dict[str, _Schema] = {
    "reference": REFERENCE_KEYS,
    "plant": PLANT_KEYS,
    "controller": CONTROLLER_KEYS,
    "loop": LOOP_KEYS,
    "tune": TUNE_KEYS,
}
FREE_SECTIONS = ("search", "surrogate")
"""Sections whose keys are parameter names (tunable gains) rather than a fixed schema."""

PLANT_FIELDS = {
    "ja_static": {"Ms", "a", "k_pin", "c_rev", "alpha", "field_gain"},
    "ja_dynamic": {"Ms", "a", "k_pin", "c_rev", "alpha", "field_gain", "k_eddy", "k_excess"},
    "linear": {"gain", "time_constant"},
    "saturating": {"gain", "sat_level"},
}
CONTROLLER_FIELDS = {
    "cpi": {"Kp", "Ki", "k_alpha", "k_beta", "u_limit", "anti_windup", "u_internal0"},
    "pid": {"Kp", "Ki", "Kd", "N_filter", "u_limit"},
    "none": set(),
}


@dataclasses.dataclass(frozen=True)
class Experiment:
    loop: LoopConfig
    tune: tuning.TuneSpec | None
    name: str = "run"


def read_raw(path: str | Path) -> dict[str, dict[str, str]]:
    """INI file -> {section: {key: raw string}}, key case preserved."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        with open(path) as f:
            cp.read_file(f)
    except configparser.Error as ex:
        raise ConfigError(f"cannot parse {path}: {ex}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def apply_overrides(raw: dict[str, dict[str, str]], overrides: list[str]) -> dict[str, dict[str, str]]:
    """Applies ``section.key=value`` strings on top of a raw config."""
    out = {s: dict(v) for s, v in raw.items()}
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        out.setdefault(section, {})[key] = value.strip()
    return out


def _canonical(raw: Mapping[str, Mapping[str, str]]) -> dict[str, dict[str, Any]]:
    """Validates section/key names and converts raw strings to typed canonical fields."""
    out: dict[str, dict[str, Any]] = {}
    for section, items in raw.items():
        if section in FREE_SECTIONS:
            continue
        schema = SECTIONS.get(section)
        if schema is None:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SECTIONS) + list(FREE_SECTIONS)}")
        typed: dict[str, Any] = {}
        for key, value in items.items():
            if key not in schema:
                raise ConfigError(f"{section}.{key}: unknown key; expected one of {sorted(schema)}")
            name, parse = schema[key]
            try:
                typed[name] = parse(value)
            except ValueError as ex:
                raise ConfigError(f"{section}.{key}: {ex}") from None
        out[section] = typed
    return out


def _build(section: str, factory: Callable[..., Any], **kwargs: Any) -> Any:
    try:
        return factory(**kwargs)
    except ParameterError as ex:
        raise ConfigError(f"{section}.{ex.field}: {ex.message}") from None
    except HystloopError as ex:
        raise ConfigError(f"{section}: {ex}") from None


def _plant(d: Mapping[str, Any]) -> pl.PlantKind:
    d = dict(d)
    kind = d.pop("kind", "ja_static")
    if kind not in PLANT_FIELDS:
        raise ConfigError(f"plant.kind: unknown plant {kind!r}; expected one of {sorted(PLANT_FIELDS)}")
    extra = set(d) - PLANT_FIELDS[kind]
    if extra:
        raise ConfigError(f"plant: keys {sorted(extra)} do not apply to kind {kind!r}")
    if kind in ("ja_static", "ja_dynamic"):
        dyn = None
        if kind == "ja_dynamic":
            dyn = _build(
                "plant",
                pl.DynamicCoef,
                **{k: d.pop(k) for k in ("k_eddy", "k_excess") if k in d},
            )
        params = _build("plant", pl.JaParams, dynamic=dyn, **d)
        return _build("plant", pl.JaStatic if kind == "ja_static" else pl.JaDynamic, params=params)
    return _build("plant", pl.Linear if kind == "linear" else pl.Saturating, **d)


def _controller(d: Mapping[str, Any]) -> ctl.CtrlParams | ctl.PidParams | None:
    d = dict(d)
    kind = d.pop("kind", "cpi")
    if kind not in CONTROLLER_FIELDS:
        raise ConfigError(f"controller.kind: unknown controller {kind!r}; expected one of {sorted(CONTROLLER_FIELDS)}")
    extra = set(d) - CONTROLLER_FIELDS[kind]
    if extra:
        raise ConfigError(f"controller: keys {sorted(extra)} do not apply to kind {kind!r}")
    if kind == "none":
        return None
    if kind == "pid":
        return _build("controller", ctl.PidParams, **d)
    params = _build("controller", ctl.CtrlParams, **d)
    _build("controller", ctl.validate, params=params)
    return params


def loop_config_from_dict(d: Mapping[str, Mapping[str, Any]]) -> LoopConfig:
    """Inverse of :func:`hystloop.loop.config_to_dict` (also accepts partially specified sections)."""
    ref = _build("reference", ReferenceSpec, **d.get("reference", {}))
    plant = _plant(d.get("plant", {}))
    controller = _controller(d.get("controller", {}))
    lp = dict(d.get("loop", {}))
    sym = lp.pop("symmetrization", None)
    relaxation = lp.pop("relaxation", None)
    target = lp.pop("target", None)
    if sym is None and relaxation is not None:
        sym = {"relaxation": relaxation, **({"target": target} if target is not None else {})}
    elif target is not None and sym is None:
        raise ConfigError("loop.symmetrization_target: set without symmetrization_lambda")
    symmetrization = _build("loop", Symmetrization, **sym) if sym is not None else None
    return _build("loop", LoopConfig, reference=ref, plant=plant, controller=controller, symmetrization=symmetrization, **lp)


def _search_space(raw: Mapping[str, str]) -> dict[str, tuning.Dim]:
    space = {}
    for name, value in raw.items():
        parts = [p.strip() for p in value.split(",")]
        if len(parts) not in (2, 3):
            raise ConfigError(f"search.{name}: expected 'min, max[, linear|log]', got {value!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError as ex:
            raise ConfigError(f"search.{name}: {ex}") from None
        if len(parts) == 3:
            space[name] = _build("search", tuning.Dim, min=lo, max=hi, scale=parts[2])
        else:
            space[name] = _build("search", tuning.default_dim, name=name, lo=lo, hi=hi)
    return space


class SurrogateObjective:
    """Sum of squared distances to fixed centers; a cheap stand-in for a closed-loop run in smoke tests."""

    def __init__(self, centers: Mapping[str, float]) -> None:
        self.centers = dict(centers)

    def __call__(self, values: Mapping[str, float]) -> float:
        return sum((v - self.centers.get(k, 0.0)) ** 2 for k, v in values.items())


def _tune_spec(raw: Mapping[str, Mapping[str, str]], typed: Mapping[str, Any], loop: LoopConfig) -> tuning.TuneSpec:
    t = dict(typed)
    space = _search_space(raw.get("search", {}))
    if not space:
        raise ConfigError("search: at least one parameter range is required for tuning")
    opt_name = t.pop("optimizer", "grid")
    obj_name = t.pop("objective", "sq_error")
    budget = t.pop("budget", 1000)
    anneal_keys = {k: t.pop(k) for k in ("iters", "T0", "cooling", "seed") if k in t}
    grid_keys = {k: t.pop(k) for k in ("points_per_dim", "refine") if k in t}
    weights = {k: t.pop(k) for k in ("w_err", "w_ff") if k in t}
    if opt_name == "anneal":
        if grid_keys:
            raise ConfigError(f"tune: keys {sorted(grid_keys)} do not apply to the anneal optimizer")
        optimizer: tuning.Anneal | tuning.Grid = _build("tune", tuning.Anneal, **anneal_keys)
    elif opt_name == "grid":
        if anneal_keys:
            raise ConfigError(f"tune: keys {sorted(anneal_keys)} do not apply to the grid optimizer")
        optimizer = _build("tune", tuning.Grid, **grid_keys)
    else:
        raise ConfigError(f"tune.optimizer: expected 'anneal' or 'grid', got {opt_name!r}")
    objective: tuning.Objective
    if obj_name == "weighted":
        objective = tuning.Weighted(**weights)
    elif weights:
        raise ConfigError("tune: w_err / w_ff only apply to objective = weighted")
    elif obj_name == "surrogate":
        try:
            centers = {k: float(v) for k, v in raw.get("surrogate", {}).items()}
        except ValueError as ex:
            raise ConfigError(f"surrogate: {ex}") from None
        objective = SurrogateObjective(centers)
    else:
        objective = obj_name
    return _build(
        "tune",
        tuning.TuneSpec,
        search_space=space,
        optimizer=optimizer,
        base_config=loop,
        objective=objective,
        budget=budget,
    )


def experiment_from_raw(raw: Mapping[str, Mapping[str, str]], name: str = "run") -> Experiment:
    typed = _canonical(raw)
    loop = loop_config_from_dict(typed)
    tune = _tune_spec(raw, typed["tune"], loop) if "tune" in typed else None
    if tune is None and raw.get("search"):
        raise ConfigError("search: given without a [tune] section")
    return Experiment(loop=loop, tune=tune, name=name)


def load_experiment(path: str | Path, overrides: list[str] | None = None) -> Experiment:
    """
    Loads an INI config, or a JSON run manifest written by ``simulate``. Overrides (``section.key=value``)
    use INI key names and are applied before validation.
    """
    path = Path(path)
    name = path.stem.removesuffix("_manifest")
    if path.suffix.lower() == ".json":
        with open(path) as f:
            try:
                manifest = json.load(f)
            except json.JSONDecodeError as ex:
                raise ConfigError(f"cannot parse {path}: {ex}") from None
        cfg = manifest.get("config", manifest)
        if overrides:
            raise ConfigError("overrides are not supported when re-running from a manifest")
        return Experiment(loop=loop_config_from_dict(cfg), tune=None, name=name)
    raw = apply_overrides(read_raw(path), overrides or [])
    return experiment_from_raw(raw, name)


def resolved(loop: LoopConfig) -> dict[str, Any]:
    return config_to_dict(loop)
