"""Bundled scenario presets."""
from pathlib import Path

_DIR = Path(__file__).parent


def path(name: str) -> Path:
    """Filesystem path of a bundled scenario (name without extension)."""
    p = _DIR / f"{name}.yaml"
    if not p.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}; have {sorted(names())}")
    return p


def names() -> list[str]:
    return sorted(p.stem for p in _DIR.glob("*.yaml"))
