"""
Derivative-free tuning of the controller gains: simulated annealing and an exhaustive grid search.

Every candidate is scored by a fresh closed-loop run (no warm start), so the objective is a pure function
of the parameters. Runs that diverge get a finite penalty instead of raising, which keeps both optimizers
total.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .controller import CtrlParams
from .errors import HystloopError, ParameterError
from .loop import LoopConfig, run_closed_loop

PENALTY = 1e9
TUNABLE = ("Kp", "Ki", "k_alpha", "k_beta")

_logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Dim:
    min: float
    max: float
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.scale not in ("linear", "log"):
            raise ParameterError("scale", f"must be 'linear' or 'log', got {self.scale!r}")
        if not (math.isfinite(self.min) and math.isfinite(self.max) and self.min < self.max):
            raise ParameterError("range", f"need finite min < max, got [{self.min}, {self.max}]")
        if self.scale == "log" and self.min <= 0:
            raise ParameterError("range", f"log scale needs a positive minimum, got {self.min}")

    def to_unit(self, x: float) -> float:
        if self.scale == "log":
            return (math.log(x) - math.log(self.min)) / (math.log(self.max) - math.log(self.min))
        return (x - self.min) / (self.max - self.min)

    def from_unit(self, z: float) -> float:
        if self.scale == "log":
            return math.exp(math.log(self.min) + z * (math.log(self.max) - math.log(self.min)))
        return self.min + z * (self.max - self.min)


def default_dim(name: str, lo: float, hi: float) -> Dim:
    """Gains span decades and are searched in log space; the initialization constants linearly."""
    return Dim(lo, hi, "log" if name in ("Kp", "Ki") else "linear")


@dataclasses.dataclass(frozen=True)
class Anneal:
    iters: int = 500
    T0: float = 0.01
    """Initial temperature, in objective units."""
    cooling: float = 0.99
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iters < 1:
            raise ParameterError("iters", f"must be >= 1, got {self.iters}")
        if not self.T0 > 0:
            raise ParameterError("T0", f"must be positive, got {self.T0}")
        if not 0 < self.cooling < 1:
            raise ParameterError("cooling", f"must be in (0, 1), got {self.cooling}")


@dataclasses.dataclass(frozen=True)
class Grid:
    points_per_dim: int = 5
    refine: bool = False
    """Follow the grid with one finer grid spanning the neighbours of the best point."""

    def __post_init__(self) -> None:
        if self.points_per_dim < 1:
            raise ParameterError("points_per_dim", f"must be >= 1, got {self.points_per_dim}")


@dataclasses.dataclass(frozen=True)
class Weighted:
    w_err: float = 1.0
    w_ff: float = 1.0


Objective = Union[str, Weighted, Callable[[Mapping[str, float]], float]]
OBJECTIVES = ("sq_error", "ff_percent_abs")


@dataclasses.dataclass(frozen=True)
class TuneSpec:
    search_space: Mapping[str, Dim]
    optimizer: Union[Anneal, Grid]
    base_config: LoopConfig | None = None
    objective: Objective = "sq_error"
    budget: int = 1000
    workers: int | None = None
    """Parallel grid evaluations; None reads HYSTLOOP_THREADS (default 1)."""

    def __post_init__(self) -> None:
        if not self.search_space:
            raise ParameterError("search_space", "empty")
        if self.budget < 1:
            raise ParameterError("budget", f"must be >= 1, got {self.budget}")
        if callable(self.objective):
            return
        if isinstance(self.objective, str) and self.objective not in OBJECTIVES:
            raise ParameterError("objective", f"must be one of {OBJECTIVES} or weighted, got {self.objective!r}")
        if self.base_config is None or not isinstance(self.base_config.controller, CtrlParams):
            raise ParameterError("base_config", "loop objectives need a base config with a cpi controller")
        unknown = set(self.search_space) - set(TUNABLE)
        if unknown:
            raise ParameterError("search_space", f"unknown parameters {sorted(unknown)}; tunable: {TUNABLE}")


@dataclasses.dataclass(frozen=True)
class TuneResult:
    best_values: dict[str, float]
    best_score: float
    evaluations: int
    history: list[tuple[dict[str, float], float]]
    best_params: CtrlParams | None = None


def objective(cfg: LoopConfig, kind: str | Weighted = "sq_error") -> float:
    """
    Scores one closed-loop run over its measurement window: mean squared tracking error, |FF(v_B)| in
    percent, or a weighted sum of both. Failed runs score PENALTY.
    """
    try:
        res = run_closed_loop(cfg)
    except HystloopError as ex:
        _logger.debug("candidate failed: %s", ex)
        return PENALTY
    sq = res.metrics["rmse_tracking"] ** 2
    ff = abs(res.metrics["ff_vb_percent"])
    if kind == "sq_error":
        score = sq
    elif kind == "ff_percent_abs":
        score = ff
    elif isinstance(kind, Weighted):
        score = kind.w_err * sq + kind.w_ff * ff
    else:
        raise ParameterError("objective", f"unknown objective {kind!r}")
    return score if math.isfinite(score) else PENALTY


def _evaluate(spec: TuneSpec, values: Mapping[str, float]) -> float:
    if callable(spec.objective):
        score = float(spec.objective(values))
        return score if math.isfinite(score) else PENALTY
    assert spec.base_config is not None
    ctrl = dataclasses.replace(spec.base_config.controller, **values)
    return objective(dataclasses.replace(spec.base_config, controller=ctrl), spec.objective)


def _best_params(spec: TuneSpec, values: Mapping[str, float]) -> CtrlParams | None:
    if not set(values) <= set(TUNABLE):
        return None
    base = spec.base_config.controller if spec.base_config is not None else None
    return dataclasses.replace(base if isinstance(base, CtrlParams) else CtrlParams(), **values)


def _result(spec: TuneSpec, history: list[tuple[dict[str, float], float]], best_i: int) -> TuneResult:
    values, score = history[best_i]
    return TuneResult(dict(values), score, len(history), history, _best_params(spec, values))


def anneal(spec: TuneSpec) -> TuneResult:
    """
    Metropolis chain on the unit cube (log coordinates for log dimensions), started at the midpoint.
    Proposals are Gaussian with per-dimension width 0.1*range*T/T0 at temperature T = T0*cooling**i,
    reflected at the bounds. Returns the best point ever visited.
    """
    opt = spec.optimizer
    if not isinstance(opt, Anneal):
        raise ParameterError("optimizer", "anneal() needs an Anneal optimizer")
    names = list(spec.search_space)
    dims = [spec.search_space[n] for n in names]
    rng = np.random.default_rng(opt.seed)

    def decode(z: np.ndarray) -> dict[str, float]:
        return {n: d.from_unit(float(zi)) for n, d, zi in zip(names, dims, z)}

    z = np.full(len(dims), 0.5)
    cur = decode(z)
    cur_score = _evaluate(spec, cur)
    history = [(cur, cur_score)]
    best_i = 0
    for i in range(1, min(opt.iters, spec.budget)):
        t = opt.T0 * opt.cooling**i
        cand_z = z + rng.normal(0.0, 0.1 * t / opt.T0, len(dims))
        cand_z = np.abs(cand_z)  # reflect at 0
        cand_z = np.where(cand_z > 1.0, 2.0 - cand_z, cand_z)  # reflect at 1
        cand_z = np.clip(cand_z, 0.0, 1.0)
        cand = decode(cand_z)
        s = _evaluate(spec, cand)
        history.append((cand, s))
        if s < history[best_i][1]:
            best_i = len(history) - 1
        accept = s <= cur_score or rng.random() < math.exp(-(s - cur_score) / t)
        if accept:
            z, cur_score = cand_z, s
    return _result(spec, history, best_i)


def _axis(dim: Dim, n: int) -> list[float]:
    if n == 1:
        return [dim.from_unit(0.5)]
    return [dim.from_unit(z) for z in np.linspace(0.0, 1.0, n)]


def _workers(spec: TuneSpec) -> int:
    if spec.workers is not None:
        return max(1, spec.workers)
    try:
        return max(1, int(os.environ.get("HYSTLOOP_THREADS", "1")))
    except ValueError:
        return 1


def _score_points(spec: TuneSpec, points: Sequence[dict[str, float]]) -> list[float]:
    workers = _workers(spec)
    if workers > 1 and not callable(spec.objective) and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_evaluate, itertools.repeat(spec), points))
    return [_evaluate(spec, p) for p in points]


def _argmin(history: list[tuple[dict[str, float], float]], names: list[str]) -> int:
    # Ties go to the lexicographically smallest parameter vector.
    return min(range(len(history)), key=lambda i: (history[i][1], [history[i][0][n] for n in names]))


def grid_search(spec: TuneSpec) -> TuneResult:
    """
    Exhaustive Cartesian grid (log-spaced along log dimensions). The grid must fit the budget; this is
    checked before anything is evaluated. Evaluations may run on a process pool; the reduction is by
    index, so the result does not depend on the worker count.
    """
    opt = spec.optimizer
    if not isinstance(opt, Grid):
        raise ParameterError("optimizer", "grid_search() needs a Grid optimizer")
    names = list(spec.search_space)
    dims = [spec.search_space[n] for n in names]
    size = opt.points_per_dim ** len(dims)
    if size > spec.budget:
        raise ParameterError("budget", f"grid of {size} points exceeds the budget of {spec.budget} evaluations")
    axes = [_axis(d, opt.points_per_dim) for d in dims]
    points = [dict(zip(names, combo)) for combo in itertools.product(*axes)]
    history = list(zip(points, _score_points(spec, points)))
    best_i = _argmin(history, names)

    if opt.refine and opt.points_per_dim > 1 and len(history) + size <= spec.budget:
        step = 1.0 / (opt.points_per_dim - 1)
        best = history[best_i][0]
        local_axes = []
        for n, d in zip(names, dims):
            zc = d.to_unit(best[n])
            lo, hi = max(0.0, zc - step), min(1.0, zc + step)
            local_axes.append([d.from_unit(z) for z in np.linspace(lo, hi, opt.points_per_dim)])
        local = [dict(zip(names, combo)) for combo in itertools.product(*local_axes)]
        history += list(zip(local, _score_points(spec, local)))
        best_i = _argmin(history, names)
    return _result(spec, history, best_i)


def tune(spec: TuneSpec) -> TuneResult:
    if isinstance(spec.optimizer, Anneal):
        return anneal(spec)
    return grid_search(spec)
