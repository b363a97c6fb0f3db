"""Flat key=value config files ('#' comments); CLI flags override them."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def read_kv(path) -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, _, v = stripped.partition("=")
        kv[k.strip()] = v.strip()
    return kv


def write_kv(path, kv: dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in kv.items()))


def merge(base: dict[str, str], overrides: dict[str, str]) -> dict[str, str]:
    out = dict(base)
    out.update(overrides)
    return out
