"""Configuration loading and the small shared helpers."""

import pytest
import yaml
from pydantic import ValidationError

from mindscape.shared.config import MindscapeConfig, load_config
from mindscape.shared.utils import (
    atomic_write_text,
    canonical_json,
    extract_json_from_model_output,
    get_env_var,
)


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "conf" / "run.yaml"
    path.parent.mkdir()
    path.write_text(
        yaml.safe_dump(
            {
                "index": {"chunk_words": 50, "cache_dir": "cache"},
                "retrieval": {"alpha": 0.25},
                "eval": {"dataset": "data/qa.jsonl", "corpus": "/abs/corpus", "method": "mia-rag"},
            }
        ),
        encoding="utf-8",
    )
    return path


def test_defaults():
    config = MindscapeConfig()
    assert config.index.chunk_words == 200
    assert config.index.window_size == 20
    assert (config.signature.k0, config.signature.k_sum) == (50, 5)
    assert config.signature.weights == (0.3, 0.4, 0.3)
    assert config.retrieval.alpha == 0.5
    assert config.agent.steps == 3
    assert config.agent.init_mode == "first-k"
    assert config.providers.updater.script == "update-answer"


def test_load_yaml_resolves_relative_paths(config_file):
    config = load_config(config_file)
    assert config.index.chunk_words == 50
    assert config.retrieval.alpha == 0.25
    assert config.evaluation.method == "mia-rag"
    assert config.evaluation.dataset == str((config_file.parent / "data" / "qa.jsonl").resolve())
    assert config.index.cache_dir == str((config_file.parent / "cache").resolve())
    assert config.evaluation.corpus == "/abs/corpus"


def test_env_overrides(config_file, monkeypatch):
    monkeypatch.setenv("MINDSCAPE_ALPHA", "0.9")
    monkeypatch.setenv("MINDSCAPE_STEPS", "5")
    monkeypatch.setenv("MINDSCAPE_INDEX_PATH", "/tmp/indexes")
    config = load_config(config_file)
    assert config.retrieval.alpha == 0.9
    assert config.agent.steps == 5
    assert config.evaluation.index == "/tmp/indexes"
    assert load_config(config_file, apply_env=False).retrieval.alpha == 0.25


def test_config_path_from_env(config_file, monkeypatch):
    monkeypatch.setenv("MINDSCAPE_CONFIG", str(config_file))
    assert load_config().index.chunk_words == 50


def test_invalid_configs(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ValidationError):
        MindscapeConfig.model_validate({"retrieval": {"alpha": 1.5}})
    with pytest.raises(ValidationError):
        MindscapeConfig.model_validate({"retrieval": {"beta": 1}})
    with pytest.raises(ValidationError):
        MindscapeConfig.model_validate({"signature": {"weights": [0.5, 0.5, 0.5]}})
    with pytest.raises(ValidationError):
        MindscapeConfig.model_validate({"signature": {"weights": [1.2, -0.2, 0.0]}})

    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n", encoding="utf-8")
    with pytest.raises(ValueError, match="mapping"):
        load_config(listing)


def test_eval_alias_and_fingerprint():
    by_alias = MindscapeConfig.model_validate({"eval": {"seeds": [1, 2]}})
    by_name = MindscapeConfig(evaluation={"seeds": [1, 2]})
    assert by_alias.evaluation.seeds == [1, 2]
    assert by_alias.fingerprint() == by_name.fingerprint()
    assert by_alias.fingerprint() != MindscapeConfig().fingerprint()
    assert len(MindscapeConfig().fingerprint()) == 64


def test_extract_json_from_model_output():
    assert extract_json_from_model_output('```json\n{"a": 1}\n```') == {"a": 1}
    assert extract_json_from_model_output('Here: {"b": {"c": 2}} done') == {"b": {"c": 2}}
    assert extract_json_from_model_output("{broken {\"d\": 3}") == {"d": 3}
    assert "error" in extract_json_from_model_output("[1, 2]")


def test_canonical_json_is_order_free():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})
    assert canonical_json({"a": "é"}) == '{"a":"é"}'


def test_atomic_write_text(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    atomic_write_text(target, "first")
    atomic_write_text(target, "second")
    assert target.read_text(encoding="utf-8") == "second"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_get_env_var(monkeypatch):
    monkeypatch.setenv("MINDSCAPE_TEST_VALUE", "x")
    assert get_env_var("MINDSCAPE_TEST_VALUE") == "x"
    monkeypatch.delenv("MINDSCAPE_TEST_VALUE")
    with pytest.raises(ValueError):
        get_env_var("MINDSCAPE_TEST_VALUE")
