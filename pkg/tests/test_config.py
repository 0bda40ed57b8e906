import json

import pytest

from rotoropt.config import DEFAULT_CONFIG, RunConfig, config_hash, get_config, save_config
from rotoropt.errors import ConfigError
from rotoropt.mesh import MAGNET_1, MAGNET_2


def test_defaults_without_a_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert get_config() == DEFAULT_CONFIG
    run = RunConfig.load()
    assert run.positions == 11
    assert run.harmonics == 8
    assert run.budget_materials() == (MAGNET_1, MAGNET_2)


def test_missing_named_file(tmp_path):
    with pytest.raises(ConfigError):
        get_config(str(tmp_path / "absent.json"))


def test_file_overrides_defaults(tmp_path):
    path = tmp_path / "run.json"
    save_config({"positions": 3, "objective": "torque_ed"}, str(path))
    run = RunConfig.load(str(path))
    assert run.positions == 3
    assert run.quasistatic
    assert run.mesh_size_m == DEFAULT_CONFIG["mesh_size_m"]


@pytest.mark.parametrize("content", ['{"positons": 3}', "[1, 2]", "{not json"])
def test_bad_files(tmp_path, content):
    path = tmp_path / "run.json"
    path.write_text(content)
    with pytest.raises(ConfigError):
        RunConfig.load(str(path))


@pytest.mark.parametrize("changes", [
    {"objective": "efficiency"},
    {"harmonics": 7},
    {"volume_fraction": 1.5},
    {"volume_materials": ["m3"]},
    {"threads": 0},
    {"exterior_min_level": 3, "exterior_max_level": 1},
    {"temperature_limit_degc": 30.0},
])
def test_invalid_values(changes):
    with pytest.raises(ConfigError):
        run = RunConfig.from_dict(changes)
        run.thermal_params()


def test_hash_tracks_content():
    run = RunConfig.from_dict({})
    assert run.hash == RunConfig.from_dict({}).hash == config_hash(json.loads(json.dumps(run.to_dict())))
    assert run.replace(threads=4).hash != run.hash


def test_quasistatic_when_temperature_is_weighted():
    assert not RunConfig.from_dict({}).quasistatic
    assert RunConfig.from_dict({"thermal_weight": 1e6}).quasistatic


def test_parameter_objects():
    run = RunConfig.from_dict({"stress_limit_pa": 300e6, "angle_tol_deg": 2.0, "thermal_weight": 5.0})
    assert run.elastic_params().stress_limit == 300e6
    assert run.optimizer_params().angle_tol == pytest.approx(0.0349066, rel=1e-5)
    assert run.thermal_params().weight == 5.0
    assert run.effective_threads(deterministic=True) == 1
