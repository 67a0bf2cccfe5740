"""Raspberry Pi style ``config.txt`` documents.

The format is newline separated ``property=value`` pairs. Comments, blank
lines, section filters such as ``[pi4]`` and unknown keys are kept verbatim
so that a document survives a parse/serialize round trip byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError

VOLTAGE_KEYS = ("over_voltage",)
FREQUENCY_KEYS = ("arm_freq",)


@dataclass
class BootConfig:
    lines: list[str] = field(default_factory=list)
    trailing_newline: bool = True

    @classmethod
    def parse(cls, text: str) -> "BootConfig":
        trailing = text.endswith("\n")
        body = text[:-1] if trailing else text
        lines = body.split("\n") if (body or trailing) else []
        return cls(lines=lines, trailing_newline=trailing)

    def serialize(self) -> str:
        out = "\n".join(self.lines)
        if self.trailing_newline and self.lines:
            out += "\n"
        return out

    def _index(self, key: str) -> int | None:
        # last assignment wins, as in the firmware
        found = None
        for i, line in enumerate(self.lines):
            k, sep, _ = line.partition("=")
            if sep and not line.lstrip().startswith("#") and k.strip() == key:
                found = i
        return found

    def get(self, key: str, default: str | None = None) -> str | None:
        i = self._index(key)
        if i is None:
            return default
        return self.lines[i].partition("=")[2].strip()

    def set(self, key: str, value) -> None:
        i = self._index(key)
        if i is None:
            self.lines.append(f"{key}={value}")
        else:
            self.lines[i] = f"{key}={value}"

    def keys(self) -> list[str]:
        out = []
        for line in self.lines:
            k, sep, _ = line.partition("=")
            if sep and not line.lstrip().startswith("#"):
                out.append(k.strip())
        return out

    def copy(self) -> "BootConfig":
        return BootConfig(list(self.lines), self.trailing_newline)

    @property
    def over_voltage(self) -> int:
        raw = self.get("over_voltage", "0")
        try:
            return int(raw)
        except ValueError:
            raise ConfigurationError(f"over_voltage must be a signed integer, got {raw!r}") from None

    @property
    def arm_freq(self) -> int | None:
        raw = self.get("arm_freq")
        if raw is None:
            return None
        try:
            return int(raw)
        except ValueError:
            raise ConfigurationError(f"arm_freq must be an integer MHz value, got {raw!r}") from None


DEFAULT_CONFIG_TEXT = """\
# For more options and information see
# http://rpf.io/configtxt
dtparam=audio=on
gpu_mem=16
enable_uart=1
disable_splash=1
"""


def make_config(level: int, arm_freq: int, base: str = DEFAULT_CONFIG_TEXT) -> BootConfig:
    cfg = BootConfig.parse(base)
    cfg.set("arm_freq", arm_freq)
    cfg.set("over_voltage", level)
    return cfg


def differing_keys(a: BootConfig, b: BootConfig) -> set[str]:
    """Keys whose values differ between two documents (including presence)."""
    names = set(a.keys()) | set(b.keys())
    return {k for k in names if a.get(k) != b.get(k)}
