import subprocess
from pathlib import Path

BASE_VERSION = "0.1.0"


def _git_describe():
    root = Path(__file__).resolve().parents[2]
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=root,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if out.returncode != 0 or not out.stdout.strip():
        return None
    return out.stdout.strip()


def version_string():
    """``<release>+g<describe>`` when run from a checkout, else the release."""
    desc = _git_describe()
    return f"{BASE_VERSION}+g{desc}" if desc else BASE_VERSION


__version__ = BASE_VERSION
