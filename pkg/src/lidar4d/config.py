"""Flat key/value run configuration with flag-over-file precedence."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        values[key] = value
    return values


def _coerce(text: str, target_type: type):
    if target_type is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ValueError(f"cannot parse {text!r} as a boolean")
    return target_type(text)


@dataclass
class RunConfig:
    """Resolved parameter values plus where each one came from."""

    values: dict
    provenance: dict

    @classmethod
    def from_sources(cls, config_path=None, flag_values: dict | None = None) -> "RunConfig":
        values: dict = {}
        provenance: dict = {}
        if config_path is not None:
            for key, value in parse_config_file(config_path).items():
                values[key] = value
                provenance[key] = "file"
        for key, value in (flag_values or {}).items():
            if value is None:
                continue
            values[key] = value
            provenance[key] = "flag"
        return cls(values, provenance)

    def resolve(self, params, consumed: set):
        """Overlay matching keys onto a parameter dataclass instance.

        String values (from files) are coerced to the field's current type;
        flag values arrive already typed. Consumed keys are recorded so the
        caller can reject leftovers.
        """
        updates = {}
        for f in fields(params):
            if f.name not in self.values:
                continue
            raw = self.values[f.name]
            current = getattr(params, f.name)
            updates[f.name] = _coerce(raw, type(current)) if isinstance(raw, str) else raw
            consumed.add(f.name)
        return replace(params, **updates) if updates else params

    def reject_unknown(self, consumed: set) -> None:
        unknown = sorted(set(self.values) - consumed)
        if unknown:
            raise ValueError(f"unknown config key: {unknown[0]}")

    def dump(self, params_list) -> str:
        """Render the effective configuration for persisting with a run."""
        lines = []
        for params in params_list:
            for f in fields(params):
                source = self.provenance.get(f.name, "default")
                lines.append(f"{f.name} = {getattr(params, f.name)}  # {source}")
        return "\n".join(lines) + "\n"
