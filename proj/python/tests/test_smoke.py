import pytest

import daggerlab as dl

SMALL = {"iterations": "2", "samples_per_iteration": "40", "eval_episodes": "5", "bc_epochs": "5"}


def test_presets_listed():
    names = dl.presets()
    assert "rc_rnd" in names and "maze_bc" in names
    assert "met_window = 30" in dl.config_text("rc_rnd")


def test_run_is_reproducible():
    a = dl.run("maze_rnd", seed=4, set=SMALL, trace=True)
    b = dl.run("maze_rnd", seed=4, set=SMALL, trace=True)
    assert a["metrics_csv"] == b["metrics_csv"]
    assert a["trace_csv"] == b["trace_csv"]
    last = a["metrics"][-1]
    assert 0.0 <= last["task_performance"] <= 1.0
    assert last["expert_frames"] <= last["env_steps"]
    assert a["run_id"] == "rnd_gridmaze_s4"


def test_config_text_round_trips():
    text = dl.config_text("rc_ensemble", set={"seed": "9"})
    assert dl.config_text(text) == text


def test_bad_config_raises():
    with pytest.raises(ValueError):
        dl.run("extends = \"rc_rnd\"\nbogus = 1\n")
    with pytest.raises(ValueError):
        dl.run("rc_rnd", set={"no_such_key": "1"})


def test_gate_and_arithmetic():
    controllers, nswitch = dl.gate([0.0, 5.0, 0.0, 0.0, 0.0], threshold=1.0, met_window=2)
    assert controllers == ["novice", "expert", "expert", "expert", "novice"]
    assert nswitch == 1
    assert dl.calibrate_threshold([1.0, 2.0, 3.0], 2.0) == 4.0
    assert dl.lazy_thresholds(4.0, 2.0) == 2.0
    assert round(dl.expert_minutes(16664, "racetrack2d"), 2) == 27.77


def test_env_oracle_episode():
    env = dl.Env("gridmaze", seed=5)
    success = False
    while not env.done:
        _, done, success = env.step(env.oracle_action())
    assert success
    with pytest.raises(Exception):
        dl.Env("moon")


def test_starved_gate_raises_liveness_error():
    starved = dict(SMALL, rnd_lambda_factor="1e12", max_steps_guard="100")
    with pytest.raises(dl.LivenessError, match="expert samples"):
        dl.run("maze_rnd", set=starved)
