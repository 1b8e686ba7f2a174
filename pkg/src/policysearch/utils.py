"""Utility functions for the policy-search toolkit."""

import os
import subprocess
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError

THREADS_ENV_VAR = "POLICYSEARCH_THREADS"


def get_threads_from_env(var_name: str = THREADS_ENV_VAR) -> Optional[int]:
    """
    Get the worker-thread count from an environment variable.

    Args:
        var_name: Name of the environment variable

    Returns:
        Thread count or None if the variable is unset

    Raises:
        ConfigError: If the variable is set but not a positive integer
    """
    raw = os.environ.get(var_name)
    if raw is None or raw.strip() == "":
        return None
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{var_name}: expected a positive integer, got {raw!r}")
    if threads < 1:
        raise ConfigError(f"{var_name}: expected a positive integer, got {raw!r}")
    return threads


def resolve_threads(cli_threads: Optional[int] = None) -> int:
    """Thread count: command line first, then the environment, then 1."""
    if cli_threads is not None:
        if cli_threads < 1:
            raise ConfigError(f"--threads: expected a positive integer, got {cli_threads}")
        return cli_threads
    return get_threads_from_env() or 1


def ensure_path_exists(path: str) -> Path:
    """
    Ensure a directory path exists.

    Args:
        path: Directory path to create

    Returns:
        Path object
    """
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def build_id() -> str:
    """`git describe` of the working tree, or the package version outside a checkout."""
    from . import __version__

    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    described = result.stdout.strip()
    return described if result.returncode == 0 and described else __version__
