import pytest

from utils.config import Settings, load_settings
from utils.errors import ConfigError


def test_missing_file_gives_defaults(tmp_path):
    assert load_settings(str(tmp_path / "absent.env")) == Settings()


def test_values_are_parsed_by_field_type(tmp_path):
    path = tmp_path / "test.env"
    path.write_text("TICK_MS=50\nGUARD_RECLAIM=false\nUPPER_POLICY=deny\nGAMMA=0.5\nMODEL_DIR=/tmp/models\n")
    settings = load_settings(str(path))
    assert settings.tick_ms == 50
    assert settings.guard_reclaim is False
    assert settings.upper_policy == "deny"
    assert settings.gamma == 0.5
    assert settings.model_dir == "/tmp/models"
    assert settings.cutoff_ms == Settings().cutoff_ms


@pytest.mark.parametrize(
    "line",
    ["TICK_MS=abc", "ALLOCATE_AT=middle", "UPPER_POLICY=maybe", "GAMMA=1.5", "TAU=-0.1", "TICK_MS=0", "GUARD_RECLAIM=perhaps"],
)
def test_invalid_values_are_config_errors(tmp_path, line):
    path = tmp_path / "bad.env"
    path.write_text(line + "\n")
    with pytest.raises(ConfigError):
        load_settings(str(path))


def test_override_skips_none():
    settings = Settings().override(seed=7, tick_ms=None)
    assert settings.seed == 7
    assert settings.tick_ms == Settings().tick_ms
