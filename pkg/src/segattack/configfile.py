"""Plain-text ``key=value`` config files.

One key per line, ``#`` starts a comment, blank lines are ignored,
duplicate keys are an error.  Values stay strings here; each consumer
(dataset spec, trainer, attack config) does its own casting so that
error messages can say which key was bad.
"""

from __future__ import annotations

from typing import Dict, Iterable, Optional


class ConfigFileError(ValueError):
    pass


def parse_config(text: str, source: str = "<string>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(
                f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigFileError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path: str) -> Dict[str, str]:
    with open(path) as fh:
        return parse_config(fh.read(), source=path)


def write_config(path: str, values: Dict[str, str],
                 header: Optional[str] = None) -> None:
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [f"{k}={v}" for k, v in values.items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def take_keys(cfg: Dict[str, str], allowed: Iterable[str],
              source: str = "config") -> Dict[str, str]:
    """Reject keys outside ``allowed``; returns cfg unchanged on success."""
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigFileError(
            f"{source}: unknown keys {sorted(unknown)}; expected a subset "
            f"of {sorted(allowed)}")
    return cfg
