import json

import pytest
import yaml

from poriferous.config import ScenarioConfig, load_config, parse_faults

from conftest import CONFIGS, config


def test_parse_faults():
    assert parse_faults("200:4,5,6;300:2") == {200: [4, 5, 6], 300: [2]}
    assert parse_faults("10:1; 10:2;") == {10: [1, 2]}
    assert parse_faults("") == {}


def test_defaults_and_steps():
    c = ScenarioConfig()
    assert (c.N, c.beta, c.K_star) == (6, 0.005, 30)
    assert c.max_steps == 400


@pytest.mark.parametrize("bad", [dict(N=1), dict(beta=0.0), dict(K_star=0), dict(dt=-0.1)])
def test_invalid_values(bad):
    with pytest.raises(ValueError):
        ScenarioConfig(**bad)


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("N: 4\nbogus: 1\n")
    with pytest.raises(ValueError, match="bogus"):
        load_config(p)


def test_json_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"N": 4, "faults": {"5": [1]}}))
    c = load_config(p, seed=7, K_star=None)
    assert (c.N, c.seed, c.K_star) == (4, 7, 30)
    assert c.faults == {5: [1]}


def test_dump_round_trip_resolves_mesh(tmp_path):
    c = config("holes3", N=5)
    c.dump(tmp_path / "out.yaml")
    back = load_config(tmp_path / "out.yaml")
    assert back.N == 5 and back.generators == c.generators
    assert back.load_mesh().faces.shape == c.load_mesh(CONFIGS).faces.shape
    assert yaml.safe_load((tmp_path / "out.yaml").read_text())["weld_threshold"] == float("inf")
