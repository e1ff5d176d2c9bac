"""Tool configuration: defaults, key=value config files, and overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .canonical import CanonicalConfig

ENV_VAR = "DOZER_CONFIG"

OUTPUT_MODES = ("text", "structured")
BACKENDS = ("fixture", "container")

_BOOL_WORDS = {
    "true": True,
    "false": False,
    "yes": True,
    "no": False,
    "1": True,
    "0": False,
}


class ConfigError(ValueError):
    """A config file or override value is malformed."""


@dataclass(frozen=True)
class SandboxConfig:
    backend: str = "fixture"
    base_image: str = "debian:11"
    runtime: str = "docker"
    fixture_dir: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown sandbox backend {self.backend!r}")


@dataclass(frozen=True)
class ToolConfig:
    kb_path: Path = Path("dozer-kb.jsonl")
    canonical: CanonicalConfig = field(default_factory=CanonicalConfig)
    top_k: int = 5
    alpha: float = 0.25
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    output: str = "text"

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.output not in OUTPUT_MODES:
            raise ConfigError(f"output must be one of {OUTPUT_MODES}")


def _parse_bool(key: str, value: str) -> bool:
    try:
        return _BOOL_WORDS[value.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def apply_setting(config: ToolConfig, key: str, value: str) -> ToolConfig:
    """Apply one key=value setting; unknown keys are errors."""
    canonical = config.canonical
    sandbox = config.sandbox
    if key == "kb":
        return replace(config, kb_path=Path(value))
    if key == "top_k":
        return replace(config, top_k=_parse_int(key, value))
    if key == "alpha":
        return replace(config, alpha=_parse_float(key, value))
    if key == "output":
        return replace(config, output=value)
    if key == "sandbox.backend":
        return replace(config, sandbox=replace(sandbox, backend=value))
    if key == "sandbox.base_image":
        return replace(config, sandbox=replace(sandbox, base_image=value))
    if key == "sandbox.runtime":
        return replace(config, sandbox=replace(sandbox, runtime=value))
    if key == "sandbox.fixture_dir":
        return replace(config, sandbox=replace(sandbox, fixture_dir=value))
    if key == "canonical.denylist":
        names = frozenset(n.strip() for n in value.split(",") if n.strip())
        return replace(config, canonical=replace(canonical, denylist=names))
    if key == "canonical.min_groundable_len":
        return replace(
            config, canonical=replace(canonical, min_groundable_len=_parse_int(key, value))
        )
    if key in (
        "canonical.fold_at_variants",
        "canonical.mask_fds",
        "canonical.mask_addresses",
        "canonical.collapse_retval",
    ):
        flag = key.split(".", 1)[1]
        return replace(config, canonical=replace(canonical, **{flag: _parse_bool(key, value)}))
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str, base: ToolConfig | None = None, source: str = "<config>") -> ToolConfig:
    config = base or ToolConfig()
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{i}: expected key=value, got {stripped!r}")
        try:
            config = apply_setting(config, key.strip(), value.strip())
        except ConfigError as e:
            raise ConfigError(f"{source}:{i}: {e}") from None
    return config


def load_config(path: "str | os.PathLike | None" = None) -> ToolConfig:
    """Build config from the file named by `path` or $DOZER_CONFIG, else defaults."""
    chosen = Path(path) if path is not None else None
    if chosen is None:
        env = os.environ.get(ENV_VAR)
        if env:
            chosen = Path(env)
    if chosen is None:
        return ToolConfig()
    try:
        text = chosen.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {chosen}: {e.strerror}") from None
    return parse_config_text(text, source=str(chosen))
