import math

import numpy as np
import pytest

import metaiqa

TINY = """
[backbone]
conv = 4:3:2,8:3:2
hidden = 8
height = 16
width = 16

[meta]
k = 2
inner_steps = 1
query_steps = 1
alpha = 0.001
beta = 0.5
epochs = 2

[finetune]
steps = 3
alpha = 0.001

[tasks]
bases = 4
height = 16
width = 16

[experiment]
protocol = ablation
seeds = 0
held_out = gaussian-blur
"""


def test_metric_anchor():
    assert metaiqa.srocc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    assert metaiqa.plcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert metaiqa.srocc([1, 2, 3], [5, 5, 5]) is None
    assert metaiqa.fractional_ranks([10, 20, 20, 30]) == [1.0, 2.5, 2.5, 4.0]


def test_adam_first_steps():
    theta = metaiqa.adam_trajectory(0.0, 1.0, 0.1, 2)
    assert theta[0] == pytest.approx(-0.1, abs=1e-6)
    assert theta[1] == pytest.approx(-0.2346874094, abs=1e-9)


def test_outer_update_worked_example():
    assert metaiqa.outer_update([1.0], [[0.8], [0.6]], 0.5) == [0.85]
    with pytest.raises(metaiqa.MetaIQAError):
        metaiqa.outer_update([1.0, 2.0], [[0.8]], 0.5)


def test_derive_seed_is_stable():
    assert metaiqa.derive_seed(3, "bases") == metaiqa.derive_seed(3, "bases")
    assert metaiqa.derive_seed(3, "bases") != metaiqa.derive_seed(4, "bases")


def test_default_model_layout():
    model = metaiqa.Model.build(metaiqa.Config(), 0)
    assert model.parameter_count == 64737
    assert len(model.names) == 12
    scores = model.predict(np.zeros((2, 3, 32, 32), dtype=np.float32))
    assert len(scores) == 2 and all(math.isfinite(s) for s in scores)


def test_checkpoint_round_trip(tmp_path):
    config = metaiqa.Config()
    model = metaiqa.Model.build(config, 5)
    model.save(tmp_path / "m.miqa")
    loaded = metaiqa.Model.load(tmp_path / "m.miqa", config)
    assert loaded == model
    assert loaded.checksum == model.checksum


def test_bad_config_rejected():
    with pytest.raises(metaiqa.MetaIQAError, match="unknown config key"):
        metaiqa.Config.parse("[meta]\nbogus = 1\n")


def test_tiny_ablation_is_deterministic():
    config = metaiqa.Config.parse(TINY)
    first = metaiqa.run_protocol_csv(config)
    assert first == metaiqa.run_protocol_csv(config)
    assert first.splitlines()[0] == metaiqa.RESULTS_HEADER
    rows = metaiqa.run_protocol(config)
    phases = {r["phase"] for r in rows if r["unit"] == "gaussian-blur"}
    assert {"meta", "baseline", "scratch"} <= phases
