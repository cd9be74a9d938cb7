"""Prompt templates with ``{slot}`` placeholders and a brace-tolerant renderer."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

SLOTS: dict[str, tuple[str, ...]] = {
    "policy_system": (),
    "injection": ("delta",),
    "history_summary": ("query", "steps"),
    "success_abstraction": ("session", "history_summary"),
    "failure_abstraction": ("session", "history_summary"),
    "critic": ("session", "history_digest", "success_experiences", "failure_experiences"),
}

_SLOT_RE = re.compile(r"\{([a-z_]+)\}")


def render(template: str, **values: str) -> str:
    """Fill ``{name}`` slots; braces that do not name a provided slot are left alone."""
    return _SLOT_RE.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0),
                        template)


def missing_slots(name: str, template: str) -> list[str]:
    present = set(_SLOT_RE.findall(template))
    return [s for s in SLOTS[name] if s not in present]


def _default(name: str) -> str:
    return resources.files("metamonitor").joinpath("templates", f"{name}.txt").read_text("utf-8").strip()


@dataclass(frozen=True)
class Templates:
    policy_system: str
    injection: str
    history_summary: str
    success_abstraction: str
    failure_abstraction: str
    critic: str

    @classmethod
    def defaults(cls) -> "Templates":
        return cls(**{f.name: _default(f.name) for f in fields(cls)})

    @classmethod
    def load(cls, overrides: dict[str, str] | None = None, base_dir: Path | None = None) -> "Templates":
        """Defaults, with any entry replaced by the file named in ``overrides``."""
        values = {f.name: _default(f.name) for f in fields(cls)}
        for name, path in (overrides or {}).items():
            p = Path(path)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            values[name] = p.read_text(encoding="utf-8").strip()
        return cls(**values)

    def problems(self) -> list[str]:
        out = []
        for f in fields(self):
            for slot in missing_slots(f.name, getattr(self, f.name)):
                out.append(f"templates.{f.name}: missing slot {{{slot}}}")
        return out


_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> dict | None:
    """First JSON object in ``text``: a fenced block if present, else the first balanced ``{...}``."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    depth, start = 0, None
    in_str = esc = False
    for i, ch in enumerate(text):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"' and depth > 0:
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                candidates.append(text[start:i + 1])
                start = None
    for c in candidates:
        try:
            obj = json.loads(c.strip())
        except (json.JSONDecodeError, RecursionError):
            continue
        if isinstance(obj, dict):
            return obj
    return None
