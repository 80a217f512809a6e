import json

import pytest

from posekv.config import RunConfig, load_config, parse_config
from posekv.errors import ConfigError
from posekv.retrieval import QueryBased
from posekv.worldsim import CostModel


def test_defaults_map_onto_rollout_config():
    rc = RunConfig().rollout_config()
    assert rc.window.tokens_per_frame == 64 and rc.compression.retention_fraction == 0.25
    assert rc.sink_source == "first_chunk" and rc.hot_budget_bytes is None
    assert rc.cost == CostModel.lingbot()


def test_sections_override():
    cfg = parse_config(
        {
            "retrieval": {"strategy": "query", "layer": 1, "k": 4},
            "store": {"hot_budget_bytes": 0, "latency_per_byte": 1e-9, "layers": 2},
            "cost": {"per_token_attention_s": 1e-6, "fixed_step_s": 0.5},
        }
    )
    rc = cfg.rollout_config()
    assert rc.strategy == QueryBased(1) and rc.window.retrieved_chunks == 4
    assert rc.transfer.latency_per_byte == 1e-9 and rc.hot_budget_bytes == 0
    assert rc.cost == CostModel(1e-6, 0.5)


@pytest.mark.parametrize(
    "data, field",
    [
        ({"window": {"tokens_per_frame": 2}}, "window.tokens_per_frame"),
        ({"compression": {"retention_fraction": 1.5}}, "compression.retention_fraction"),
        ({"store": {"dtype_bytes": 3}}, "store.dtype_bytes"),
        ({"modes": ["fast"]}, "modes.0"),
        ({"bogus": 1}, "bogus"),
        ({"window": {"recent_frames": 4}}, "window"),
        ({"cost": {"fixed_step_s": 0.1}}, "cost"),
    ],
)
def test_errors_name_the_field(data, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert field in str(exc.value)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    bad.write_text("[]")
    with pytest.raises(ConfigError, match="object"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"seed": 4}))
    assert load_config(good).seed == 4
    assert load_config(None) == RunConfig()
