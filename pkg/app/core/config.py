from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
from app.core.exceptions import UsageError
from app.schemas.training import TrainConfig


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    FLOAT64: bool = False
    METRICS_PATH: Optional[str] = None
    PROGRESS_EVERY: int = 10

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


@lru_cache
def get_settings():
    return Settings()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse `key = value` lines into a flat dict of dotted keys."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        if key in values:
            raise UsageError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"Override must look like key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        overrides[key] = value
    return overrides


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value == "":
            continue
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise UsageError(f"Key '{key}' conflicts with scalar '{part}'")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise UsageError(f"Key '{key}' conflicts with section '{parts[-1]}'")
        node[parts[-1]] = value
    return nested


def build_run_config(flat: Dict[str, str]) -> TrainConfig:
    try:
        return TrainConfig.model_validate(_nest(flat))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise UsageError(f"Invalid configuration: {problems}")


def load_run_config(path: Optional[str], overrides: Optional[Dict[str, str]] = None,
                    defaults: Optional[Dict[str, str]] = None) -> TrainConfig:
    """Read a `.cfg` file (optional) and apply flag overrides on top of it.

    `defaults` sit underneath the file, e.g. the phase implied by a command.
    """
    flat: Dict[str, str] = dict(defaults or {})
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise UsageError(f"Config file not found: {path}")
        flat.update(parse_config_text(config_path.read_text(encoding="utf-8"), source=path))
    flat.update(overrides or {})
    return build_run_config(flat)


def _flatten(prefix: str, value: Any, out: List[str]) -> None:
    if isinstance(value, dict):
        for key, child in value.items():
            _flatten(f"{prefix}.{key}" if prefix else key, child, out)
        return
    if value is None:
        return
    if isinstance(value, bool):
        text = "true" if value else "false"
    elif isinstance(value, (list, tuple)):
        text = ",".join(str(v) for v in value)
    elif isinstance(value, float):
        text = repr(value)
    else:
        text = str(value)
    out.append(f"{prefix} = {text}")


def dump_run_config(config: TrainConfig) -> str:
    """Render the effective config in `.cfg` syntax; feeding it back reproduces the config."""
    lines: List[str] = []
    _flatten("", config.model_dump(mode="json"), lines)
    return "\n".join(lines) + "\n"
