"""Settings from the environment, and the RunConfig every command builds.

Known keys (all prefixed DECORRELATOR_, loaded from .env when present):
    ARTIFACT_DIR    where compile/run/bench/analyze read and write artifacts
    LOG_LEVEL       root log level for the CLI (default WARNING)
    SEED            master seed; pass seeds are spawned from it
    ID_BOUND        exclusive upper bound of obfuscated IDs
    PAGE_BITS       log2 of the shuffle page size in bytes
    COUNTER_BITS    width k of the per-page shuffle counter
    SHUFFLE_PERIOD  mean accesses between shuffles (0 = never, unset = number of programs)
    STATEMENT_SHUFFLE  re-permute the pages each statement touched (default on)
    ALPHA, BETA     sk is drawn from [ALPHA*t, BETA*t]
    JUNK_RATIO      junk statements allowed per real statement
    FUEL            evaluator step budget
SECRET_KEY (unprefixed) keys the signature on the trusted key file.
"""

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from decorrelator.errors import ConfigError

PREFIX = "DECORRELATOR_"

_loaded = False


def load_settings() -> None:
    """Load .env once per process; real environment variables win."""
    global _loaded
    if not _loaded:
        load_dotenv()
        _loaded = True


def get_setting(key: str, default: str = None) -> Optional[str]:
    """Return the value of DECORRELATOR_<key>, or default if unset or empty."""
    load_settings()
    value = os.environ.get(PREFIX + key)
    return value if value not in (None, "") else default


def parse_shuffle_period(text) -> Optional[int]:
    """'0', 'inf', 'never' and 'none' all disable shuffling; returns 0 for those."""
    if text is None:
        return None
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return 0 if (isinstance(text, float) and math.isinf(text)) else int(text)
    lowered = str(text).strip().lower()
    if lowered in ("0", "inf", "infinity", "never", "none", "off"):
        return 0
    try:
        return int(lowered)
    except ValueError:
        raise ConfigError(f"shuffle period must be an integer or 'inf', got {text!r}") from None


@dataclass
class RunConfig:
    """Everything one pipeline invocation needs.

    shuffle_period None means "one shuffle per n accesses on average" with n
    the number of real input programs; 0 means never shuffle.
    """
    inputs: list = field(default_factory=list)
    seed: int = 0
    junk_seed: Optional[int] = None
    perm_seed: Optional[int] = None
    alpha: int = 2
    beta: int = 4
    id_bound: int = 10 ** 6
    page_bits: int = 8
    counter_bits: int = 16
    shuffle_period: Optional[int] = None
    statement_shuffle: bool = True
    junk_ratio: float = 8.0
    junk_programs: int = 0
    uniformize: bool = True
    infer_resets: bool = True
    fuel: int = 10 ** 7
    max_data_size: int = 1 << 20
    artifact_dir: Optional[Path] = None
    trace_path: Optional[Path] = None
    outputs_path: Optional[Path] = None

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        """Defaults, then DECORRELATOR_* settings, then explicit overrides (None skipped)."""
        values = {}
        int_keys = ("seed", "alpha", "beta", "id_bound", "page_bits", "counter_bits", "fuel")
        for name in int_keys:
            raw = get_setting(name.upper())
            if raw is not None:
                values[name] = _as_int(name, raw)
        raw = get_setting("JUNK_RATIO")
        if raw is not None:
            try:
                values["junk_ratio"] = float(raw)
            except ValueError:
                raise ConfigError(f"JUNK_RATIO must be a number, got {raw!r}") from None
        raw = get_setting("SHUFFLE_PERIOD")
        if raw is not None:
            values["shuffle_period"] = parse_shuffle_period(raw)
        raw = get_setting("STATEMENT_SHUFFLE")
        if raw is not None:
            values["statement_shuffle"] = _as_bool("STATEMENT_SHUFFLE", raw)
        known = {f.name for f in fields(cls)}
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config field '{key}'")
            if value is not None:
                values[key] = value
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        for name in ("alpha", "beta", "id_bound", "page_bits", "counter_bits", "fuel", "max_data_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.alpha >= self.beta:
            raise ConfigError("alpha must be smaller than beta")
        if self.junk_ratio < 0:
            raise ConfigError("junk_ratio must not be negative")
        if self.junk_programs < 0:
            raise ConfigError("junk_programs must not be negative")
        if self.shuffle_period is not None and self.shuffle_period < 0:
            raise ConfigError("shuffle_period must not be negative")
        if self.page_bits > 16:
            raise ConfigError("page_bits above 16 is not supported")

    def with_overrides(self, **changes) -> "RunConfig":
        config = replace(self, **changes)
        config.validate()
        return config


def _as_int(name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name.upper()} must be an integer, got {raw!r}") from None


def _as_bool(name: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name} must be a boolean, got {raw!r}")
