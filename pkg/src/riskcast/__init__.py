"""Quantitative cyber-risk modeling: scenario chains, expert-fitted factors, Monte Carlo and uplift analytics."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(name: str = "") -> Path:
    """Path to a bundled fixture file (or the fixture directory)."""
    return Path(str(resources.files(__name__) / "data")) / name
