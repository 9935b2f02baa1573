"""Unit tests for settings loading."""

from pathlib import Path

import pytest

from isoalign.core.config import Settings, load_settings
from isoalign.core.exceptions import ValidationError


@pytest.fixture(autouse=True)
def _isolated_cwd(tmp_path, monkeypatch):
    """Run from an empty directory so no stray .env is picked up."""
    monkeypatch.chdir(tmp_path)


def test_defaults() -> None:
    """No variables set gives the documented defaults."""
    settings = load_settings()
    assert settings == Settings()
    assert settings.num_threads == 1
    assert settings.bound_tolerance == 1e-9


def test_environment_overrides(monkeypatch) -> None:
    """ALIGN_* variables are read and converted."""
    monkeypatch.setenv("ALIGN_NUM_THREADS", "4")
    monkeypatch.setenv("ALIGN_LOG_LEVEL", "debug")
    monkeypatch.setenv("ALIGN_BOUND_TOL", "1e-6")
    settings = load_settings()
    assert settings.num_threads == 4
    assert settings.log_level == "DEBUG"
    assert settings.bound_tolerance == 1e-6


def test_env_file_does_not_override_process(tmp_path: Path, monkeypatch) -> None:
    """Values from the .env file fill gaps but never beat the process environment."""
    env_file = tmp_path / "custom.env"
    env_file.write_text("ALIGN_NUM_THREADS=3\nALIGN_RANK_RTOL=1e-8\n")
    monkeypatch.setenv("ALIGN_NUM_THREADS", "2")
    # load_dotenv writes into os.environ; register the key so monkeypatch cleans it up
    monkeypatch.setenv("ALIGN_RANK_RTOL", "")
    monkeypatch.delenv("ALIGN_RANK_RTOL")
    settings = load_settings(env_file)
    assert settings.num_threads == 2
    assert settings.rank_rtol == 1e-8


@pytest.mark.parametrize(
    "name,value",
    [
        ("ALIGN_NUM_THREADS", "zero"),
        ("ALIGN_NUM_THREADS", "0"),
        ("ALIGN_LOG_LEVEL", "LOUD"),
        ("ALIGN_BOUND_TOL", "-1"),
        ("ALIGN_RANK_RTOL", "0"),
    ],
)
def test_invalid_values(monkeypatch, name: str, value: str) -> None:
    """Malformed or out-of-range values raise ValidationError."""
    monkeypatch.setenv(name, value)
    with pytest.raises(ValidationError):
        load_settings()


def test_with_tolerance() -> None:
    """The CLI tolerance replaces the configured one; None keeps it."""
    base = Settings()
    assert base.with_tolerance(None) is base
    assert base.with_tolerance(1e-3).bound_tolerance == 1e-3
    with pytest.raises(ValidationError):
        base.with_tolerance(-1.0)
