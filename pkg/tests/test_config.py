import json

import pytest

from hystloop.config import (
    ConfigError,
    SurrogateObjective,
    apply_overrides,
    experiment_from_raw,
    load_experiment,
    loop_config_from_dict,
    read_raw,
)
from hystloop.controller import CtrlParams, PidParams
from hystloop.loop import Symmetrization, config_to_dict
from hystloop.plant import DynamicCoef, JaDynamic, JaParams, JaStatic, Linear, Saturating
from hystloop.tuning import Anneal, Grid, Weighted

FULL = """
[reference]
shape = sine
frequency_hz = 5      # quasi-static
amplitude = 1.45
phase_rad = 0
periods = 5
samples_per_period = 1000

[plant]
kind = ja_static
Ms_A_per_m = 1.6e6
a_A_per_m = 1100
k_pin_A_per_m = 400
c_rev = 0.2
alpha = 1.6e-4
field_gain_A_per_m = 4000

[controller]
kind = cpi
Kp = 1e-4
Ki = 3000
k_alpha = 0
k_beta_per_step = 0
u_limit = none
anti_windup = false

[loop]
init_cycles = 2
measure_periods = 3
seed = 7
symmetrization_lambda = 0.5
symmetrization_target = u
"""


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_full_config(tmp_path):
    exp = load_experiment(write(tmp_path, FULL))
    cfg = exp.loop
    assert exp.name == "exp"
    assert cfg.reference.frequency == 5.0
    assert cfg.plant == JaStatic(JaParams(field_gain=4000.0))
    assert cfg.controller == CtrlParams(Kp=1e-4, Ki=3000.0)
    assert cfg.symmetrization == Symmetrization(0.5, "u")
    assert cfg.seed == 7
    assert exp.tune is None


def test_defaults_fill_missing_keys(tmp_path):
    exp = load_experiment(write(tmp_path, "[reference]\n[plant]\nkind = linear\n"))
    assert exp.loop.plant == Linear()
    assert exp.loop.controller == CtrlParams()
    assert exp.loop.symmetrization is None


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[reference]\nfrequency = 5\n", "reference.frequency"),
        ("[referense]\n", "referense"),
        ("[plant]\nkind = linear\nsat_level = 2\n", "sat_level"),
        ("[plant]\nkind = magnet\n", "plant.kind"),
        ("[controller]\nkind = pid\nk_alpha = 1\n", "k_alpha"),
        ("[reference]\nfrequency_hz = -1\n", "reference.frequency"),
        ("[reference]\nperiods = 2.5\n", "reference.periods"),
        ("[controller]\nKp = -1\n", "controller.Kp"),
        ("[controller]\nanti_windup = maybe\n", "controller.anti_windup"),
        ("[plant]\nalpha = 1\n", "plant.alpha"),
        ("[loop]\nmeasure_periods = 9\n", "loop.measure_periods"),
        ("[loop]\nsymmetrization_target = u\n", "symmetrization_target"),
        ("[search]\nKp = 1, 2\n", "search"),
        ("just text", "parse"),
    ],
)
def test_invalid_configs_name_the_field(tmp_path, text, needle):
    with pytest.raises(ConfigError) as ei:
        load_experiment(write(tmp_path, text))
    assert needle in str(ei.value)


def test_overrides(tmp_path):
    p = write(tmp_path, FULL)
    exp = load_experiment(p, ["controller.Kp=2.5", "loop.seed = 9", "reference.shape=square"])
    assert exp.loop.controller.Kp == 2.5
    assert exp.loop.seed == 9
    assert exp.loop.reference.shape == "square"
    with pytest.raises(ConfigError):
        load_experiment(p, ["controller.Kp"])
    with pytest.raises(ConfigError):
        load_experiment(p, ["Kp=3"])
    with pytest.raises(ConfigError) as ei:
        load_experiment(p, ["controller.gain=3"])
    assert "controller.gain" in str(ei.value)


def test_apply_overrides_does_not_mutate():
    raw = {"controller": {"Kp": "1"}}
    out = apply_overrides(raw, ["controller.Kp=2", "loop.seed=3"])
    assert raw == {"controller": {"Kp": "1"}}
    assert out == {"controller": {"Kp": "2"}, "loop": {"seed": "3"}}


def test_key_case_is_preserved(tmp_path):
    raw = read_raw(write(tmp_path, "[plant]\nMs_A_per_m = 1e6\n"))
    assert raw == {"plant": {"Ms_A_per_m": "1e6"}}


def test_dynamic_and_oracle_plants(tmp_path):
    text = "[reference]\n[plant]\nkind = ja_dynamic\nk_eddy_A_s_per_m_T = 0.5\nk_excess = 0.1\nfield_gain_A_per_m = 4000\n"
    plant = load_experiment(write(tmp_path, text)).loop.plant
    assert plant == JaDynamic(JaParams(field_gain=4000.0, dynamic=DynamicCoef(0.5, 0.1)))
    plant = load_experiment(write(tmp_path, "[plant]\nkind = saturating\nsat_level = 2\n")).loop.plant
    assert plant == Saturating(1.0, 2.0)
    with pytest.raises(ConfigError):
        load_experiment(write(tmp_path, "[plant]\nkind = ja_static\nk_eddy_A_s_per_m_T = 0.5\n"))


def test_pid_and_open_loop_controllers(tmp_path):
    text = "[controller]\nkind = pid\nKp = 2\nKd = 0.1\nN_filter_rad_per_s = 300\n"
    assert load_experiment(write(tmp_path, text)).loop.controller == PidParams(Kp=2.0, Kd=0.1, N_filter=300.0)
    assert load_experiment(write(tmp_path, "[controller]\nkind = none\n")).loop.controller is None


def test_dict_round_trip():
    exp = experiment_from_raw({"reference": {"shape": "triangle"}, "plant": {"kind": "ja_dynamic"}, "loop": {"symmetrization_lambda": "0.3", "symmetrization_target": "output"}})
    d = config_to_dict(exp.loop)
    again = loop_config_from_dict(json.loads(json.dumps(d)))
    assert again == exp.loop
    assert config_to_dict(again) == d


def test_tune_sections(tmp_path):
    text = FULL + "\n[tune]\noptimizer = anneal\nobjective = weighted\nw_err = 2\nw_ff = 0.1\niters = 50\nseed = 4\nbudget = 50\n[search]\nKp = 1e-5, 1e-3\nKi = 100, 1e4, linear\n"
    exp = load_experiment(write(tmp_path, text))
    t = exp.tune
    assert t.optimizer == Anneal(iters=50, seed=4)
    assert t.objective == Weighted(2.0, 0.1)
    assert t.search_space["Kp"].scale == "log"
    assert t.search_space["Ki"].scale == "linear"
    assert t.base_config == exp.loop


@pytest.mark.parametrize(
    "tune, search, needle",
    [
        ("optimizer = grid\niters = 5\n", "Kp = 1, 2\n", "iters"),
        ("optimizer = simplex\n", "Kp = 1, 2\n", "tune.optimizer"),
        ("optimizer = grid\n", "", "search"),
        ("optimizer = grid\n", "Kp = 1\n", "search.Kp"),
        ("optimizer = grid\n", "gain = 1, 2\n", "search_space"),
        ("optimizer = grid\nw_err = 1\n", "Kp = 1, 2\n", "weighted"),
        ("optimizer = anneal\ncooling = 1.5\n", "Kp = 1, 2\n", "tune.cooling"),
        ("optimizer = grid\nbogus = 1\n", "Kp = 1, 2\n", "tune.bogus"),
    ],
)
def test_invalid_tune_sections(tmp_path, tune, search, needle):
    text = "[reference]\n[plant]\nkind = linear\n[tune]\n" + tune + "[search]\n" + search
    with pytest.raises(ConfigError) as ei:
        load_experiment(write(tmp_path, text))
    assert needle in str(ei.value)


def test_surrogate_objective(tmp_path):
    text = "[plant]\nkind = linear\n[tune]\noptimizer = grid\nobjective = surrogate\n[search]\nx = 0, 1\n[surrogate]\nx = 0.25\n"
    t = load_experiment(write(tmp_path, text)).tune
    assert isinstance(t.objective, SurrogateObjective)
    assert t.objective({"x": 0.75}) == pytest.approx(0.25)
    assert t.optimizer == Grid()


def test_manifest_is_a_config(tmp_path):
    exp = load_experiment(write(tmp_path, FULL))
    manifest = {"tool": "hystloop", "config": config_to_dict(exp.loop)}
    p = tmp_path / "exp_manifest.json"
    p.write_text(json.dumps(manifest))
    again = load_experiment(p)
    assert again.loop == exp.loop
    assert again.name == "exp"
    with pytest.raises(ConfigError):
        load_experiment(p, ["controller.Kp=1"])
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_experiment(p)


def test_missing_file_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        load_experiment(tmp_path / "nope.ini")
