"""In-environment runner shim plus a sample pack of verification assets.

The shim is never imported by the orchestrator; it is handed to the
provisioned interpreter as a file. These helpers exist so tests and
registration scripts can find the files on disk.
"""

from pathlib import Path

__version__ = "0.1.0"

_PKG_DIR = Path(__file__).parent


def shim_path() -> Path:
    """Filesystem path of the runner shim."""
    return _PKG_DIR / "shim.py"


def asset_dir() -> Path:
    """Directory holding the sample functional and setup scripts."""
    return _PKG_DIR / "assets"


def asset_path(name: str) -> Path:
    path = asset_dir() / name
    if not path.is_file():
        raise FileNotFoundError(f"no sample asset named {name!r} in {asset_dir()}")
    return path
