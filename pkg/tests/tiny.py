"""Small configurations shared by the engine, report and CLI tests."""

from pathlib import Path

from citycond.engine import ExperimentConfig, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def tiny_config(**overrides) -> ExperimentConfig:
    """``tiny_config(model={"backbone": "gru"}, seed=21)`` style nested overrides."""
    base = load_config(CONFIGS / "tiny.yaml")
    return base.with_overrides(overrides) if overrides else base
