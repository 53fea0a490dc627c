"""Experiment manifests: one header comment line, then canonical JSON.

::

    # created: 2026-01-01T00:00:00Z
    {"command":"cv","config":{...},"format":"coilfail-manifest","result":{...},"version":1}

The header is the only place a wall-clock timestamp appears, so two runs of
the same configuration produce manifests that differ in that line alone.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field

from .checkpoint import atomic_write_bytes, canonical_json

__all__ = ["FORMAT", "VERSION", "ManifestError", "ExperimentConfig", "write_manifest", "read_manifest"]

FORMAT = "coilfail-manifest"
VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs to rerun: its name and its parameters."""

    command: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"command": self.command, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d, allowed=None):
        unknown = set(d) - {"command", "params"}
        if unknown:
            raise ManifestError(f"unknown config keys: {sorted(unknown)}")
        params = dict(d.get("params", {}))
        if allowed is not None:
            extra = set(params) - set(allowed)
            if extra:
                raise ManifestError(f"unknown parameters for {d['command']!r}: {sorted(extra)}")
        return cls(d["command"], params)


def write_manifest(path, config, result, created=None):
    created = created or _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    body = {"format": FORMAT, "version": VERSION, "config": config.to_dict(), "result": result}
    atomic_write_bytes(path, f"# created: {created}\n{canonical_json(body)}\n".encode("utf-8"))


def read_manifest(path):
    """Return ``(ExperimentConfig, result)``; header comment lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not a manifest ({exc})") from None
    if not isinstance(body, dict) or body.get("format") != FORMAT:
        raise ManifestError(f"{path}: not a {FORMAT} file")
    if body.get("version") != VERSION:
        raise ManifestError(f"{path}: manifest version {body.get('version')} unsupported (expected {VERSION})")
    unknown = set(body) - {"format", "version", "config", "result"}
    if unknown:
        raise ManifestError(f"{path}: unknown manifest keys {sorted(unknown)}")
    return ExperimentConfig.from_dict(body["config"]), body.get("result")
