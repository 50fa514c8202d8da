#!/usr/bin/env python3
"""Environment configuration for the protection-switching toolkit.

This module provides:
- Repo-relative paths (runs directory, overridable from the environment)
- Platform and container detection
- Runtime information stamped into run manifests and log headers

Usage:
    from env_config import DEFAULT_RUNS_DIR, runtime_info

    out_dir = DEFAULT_RUNS_DIR / "scenario1"
    info = runtime_info()
"""

import os
import platform
import sys
from pathlib import Path


# =============================================================================
# ENVIRONMENT CONFIGURATION
# =============================================================================

TOOL_NAME = "cyberswitch"
TOOL_VERSION = "0.3.0"

# Repo root directory (scripts/ lives directly under it)
REPO_ROOT = Path(__file__).resolve().parent.parent

# Default location for run artifacts; container setups override it
DEFAULT_RUNS_DIR = Path(os.environ.get(
    "CYBERSWITCH_RUNS_DIR",
    str(REPO_ROOT / "runs")
))


# =============================================================================
# PLATFORM DETECTION
# =============================================================================

def get_platform_name() -> str:
    """Get a short platform name.

    Returns:
        'windows', 'macos', 'linux', or 'unknown'.
    """
    if sys.platform == "win32":
        return "windows"
    elif sys.platform == "darwin":
        return "macos"
    elif sys.platform.startswith("linux"):
        return "linux"
    return "unknown"


def is_in_container() -> bool:
    """Detect if running inside a container (Docker, Kubernetes, etc.)."""
    if os.path.exists("/.dockerenv"):
        return True

    if os.environ.get("CONTAINER") == "true":
        return True

    if os.environ.get("KUBERNETES_SERVICE_HOST"):
        return True

    try:
        with open("/proc/1/cgroup", "rt") as f:
            content = f.read()
            return "docker" in content or "kubepods" in content
    except Exception:
        pass

    return False


# =============================================================================
# RUNTIME INFORMATION
# =============================================================================

def _package_version(name: str) -> str:
    try:
        from importlib.metadata import version
        return version(name)
    except Exception:
        return "unknown"


def runtime_info() -> dict:
    """Versions and platform facts recorded with every run.

    Returns:
        Ordered mapping of manifest keys to strings.
    """
    return {
        "tool": TOOL_NAME,
        "tool_version": TOOL_VERSION,
        "python_version": sys.version.split()[0],
        "numpy_version": _package_version("numpy"),
        "torch_version": _package_version("torch"),
        "platform": get_platform_name(),
        "platform_detail": platform.platform(),
        "environment": "container" if is_in_container() else "local",
    }
