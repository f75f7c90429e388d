"""Tests for configuration loading, validation and defaults."""

from pathlib import Path

import pytest

from ambiver.config import (
    REFERENCE_DEFAULTS,
    AmbiVerConfig,
    FusionConfig,
    KeyframeConfig,
    PipelineConfig,
    RemoteBackendConfig,
)
from ambiver.exceptions import MissingFileError


def _lookup(config, dotted):
    value = config
    for part in dotted.split("."):
        value = getattr(value, part)
    return value


def test_defaults_match_reference_values():
    """The default config reproduces the published experimental setup."""

    config = PipelineConfig()
    for dotted, expected in REFERENCE_DEFAULTS.items():
        assert _lookup(config, dotted) == expected, dotted
    assert config.backend == "mock"


def test_dump_load_dump_is_byte_identical(tmp_path):
    """Serializing a loaded config reproduces the original text exactly."""

    config = PipelineConfig.from_value(
        {"fusion": {"top_k": 3}, "bev": {"background": [0, 0, 0]}, "workers": 2}
    )
    path = config.dump(tmp_path / "config.yaml")
    first = path.read_text(encoding="utf-8")

    reloaded = PipelineConfig.load(path)
    assert reloaded == config
    assert reloaded.dumps() == first


def test_from_value_accepts_nested_mappings():
    """Nested sections are built from plain mappings."""

    config = PipelineConfig.from_value(
        {"keyframes": {"n_target": 20}, "ablations": {"no_fusion": True}}
    )
    assert config.keyframes == KeyframeConfig(n_target=20)
    assert config.ablations.no_fusion
    assert not config.ablations.no_parse


def test_from_value_rejects_unknown_fields():
    """Typos in a config file are reported instead of ignored."""

    with pytest.raises(ValueError, match="Unknown FusionConfig"):
        FusionConfig.from_value({"eps": 0.3})

    with pytest.raises(TypeError):
        FusionConfig.from_value(0.3)


def test_section_invariants():
    """Out-of-range parameters are rejected at construction."""

    with pytest.raises(ValueError):
        FusionConfig(theta_min=70.0, theta_max=60.0)
    with pytest.raises(ValueError):
        FusionConfig(gamma=0.0)
    with pytest.raises(ValueError):
        KeyframeConfig(alpha_dec=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(backend="oracle")
    with pytest.raises(ValueError, match="replay_path"):
        PipelineConfig(backend="replay")


def test_with_overrides_applies_dotted_keys_and_skips_none():
    """Dotted overrides replace single fields; ``None`` leaves them alone."""

    base = PipelineConfig()
    updated = base.with_overrides(
        {"fusion.top_k": 2, "ablations.no_bev": True, "fusion.eps_d": None}
    )
    assert updated.fusion.top_k == 2
    assert updated.fusion.eps_d == base.fusion.eps_d
    assert updated.ablations.no_bev
    assert base.fusion.top_k == 6

    with pytest.raises(ValueError, match="Unknown config field"):
        base.with_overrides({"fusion.radius": 1.0})


def test_load_missing_file(tmp_path):
    """Loading a config that does not exist raises MissingFileError."""

    with pytest.raises(MissingFileError):
        PipelineConfig.load(tmp_path / "nope.yaml")


def test_remote_endpoint_falls_back_to_environment(monkeypatch):
    """The remote endpoint is taken from the environment when unset."""

    monkeypatch.setenv(AmbiVerConfig.endpoint_env, "http://vlm.local/complete")
    assert RemoteBackendConfig().resolved_endpoint() == "http://vlm.local/complete"
    explicit = RemoteBackendConfig(endpoint="http://other/complete")
    assert explicit.resolved_endpoint() == "http://other/complete"


def test_api_key_is_never_dumped(monkeypatch):
    """The credential lives only in the environment."""

    monkeypatch.setenv(AmbiVerConfig.api_key_env, "secret-token")
    text = PipelineConfig(backend="remote").dumps()
    assert "secret-token" not in text
    assert AmbiVerConfig.remote_api_key() == "secret-token"


def test_lexicon_dir_override(tmp_path):
    """set_lexicon_dir validates the directory and get_lexicon_dir prefers overrides."""

    original = AmbiVerConfig.lexicon_dir
    try:
        AmbiVerConfig.set_lexicon_dir(tmp_path)
        assert AmbiVerConfig.get_lexicon_dir() == tmp_path
        assert AmbiVerConfig.get_lexicon_dir("/elsewhere") == Path("/elsewhere")
        with pytest.raises(MissingFileError):
            AmbiVerConfig.set_lexicon_dir(tmp_path / "missing")
    finally:
        AmbiVerConfig.lexicon_dir = original
