"""YAML run configuration: validation, ``${ENV}`` interpolation and backend construction."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backends.base import ChatBackend, EmbeddingBackend, RetryPolicy, SearchBackend
from .backends.http import OpenAIChat, OpenAIEmbedder
from .backends.mock import FunctionChat, HashingEmbedder, InMemorySearch, ScriptedChat, TopicEmbedder
from .backends.search import FixtureSearch, LiveSearch
from .errors import ConfigError
from .memory import DEFAULT_TAU_DUP, LLMAbstractor, TemplateAbstractor
from .orchestrator import RunConfig
from .prompts import SLOTS, Templates

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

MONITOR_DEFAULTS: dict[str, Any] = {
    "max_steps": 20,
    "anomaly_k": 2.0,
    "d_merge": 0.35,
    "cluster_mass": "count",
    "top_logprobs": 20,
    "doc_top_k": 5,
    "k_per_pool": 2,
    "tau_dup": DEFAULT_TAU_DUP,
    "fast_monitor_enabled": True,
    "slow_monitor_enabled": True,
    "online_memory_enabled": False,
    "grace_step_on_final_anomaly": False,
    "temperature": 0.0,
    "max_tokens": 2048,
}

PATH_KEYS = ("calibration", "memory", "log_dir", "fixture_corpus")


def interpolate(value: Any, env: dict[str, str] | None = None) -> Any:
    """Replace ``${VAR}`` / ``${VAR:-default}`` in every string of a nested structure.

    A string that consists of a single placeholder becomes a number or boolean
    when the substituted text reads as one, so ``max_steps: ${STEPS}`` works.
    """
    env = os.environ if env is None else env
    if isinstance(value, str):
        out = _ENV_RE.sub(lambda m: env.get(m.group(1), m.group(2) or ""), value)
        if out and _ENV_RE.fullmatch(value):
            # A value that is exactly one placeholder takes the YAML type of its text.
            typed = yaml.safe_load(out)
            if isinstance(typed, (bool, int, float)):
                return typed
        return out
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


@dataclass
class Config:
    backends: dict[str, Any]
    monitor: dict[str, Any]
    paths: dict[str, Path | None]
    templates: Templates
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    def run_config(self) -> RunConfig:
        keys = set(RunConfig.__dataclass_fields__) - {"injection_template"}
        values = {k: v for k, v in self.monitor.items() if k in keys}
        return RunConfig(injection_template=self.templates.injection, **values)

    @property
    def retry(self) -> RetryPolicy:
        b = self.backends
        return RetryPolicy(attempts=int(b.get("retries", 3)), base_delay=float(b.get("backoff", 1.0)),
                           timeout=float(b.get("timeout", 60.0)))

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _check_number(problems: list[str], name: str, value: Any, *, lo: float | None = None,
                  hi: float | None = None, lo_open: bool = False, hi_open: bool = False,
                  integer: bool = False) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{name}: expected a number, got {value!r}")
        return
    if integer and not float(value).is_integer():
        problems.append(f"{name}: expected an integer, got {value!r}")
        return
    if lo is not None and (value <= lo if lo_open else value < lo):
        problems.append(f"{name}: {value} is below the allowed range")
    if hi is not None and (value >= hi if hi_open else value > hi):
        problems.append(f"{name}: {value} is above the allowed range")


def validate_monitor(m: dict[str, Any]) -> list[str]:
    p: list[str] = []
    unknown = sorted(set(m) - set(MONITOR_DEFAULTS))
    p += [f"monitor.{k}: unknown setting" for k in unknown]
    _check_number(p, "monitor.anomaly_k", m["anomaly_k"], lo=0, lo_open=True)
    _check_number(p, "monitor.tau_dup", m["tau_dup"], lo=0, lo_open=True, hi=1)
    _check_number(p, "monitor.d_merge", m["d_merge"], lo=0, lo_open=True, hi=2, hi_open=True)
    for key in ("max_steps", "top_logprobs", "doc_top_k", "k_per_pool", "max_tokens"):
        _check_number(p, f"monitor.{key}", m[key], lo=1, integer=True)
    _check_number(p, "monitor.temperature", m["temperature"], lo=0)
    if m["cluster_mass"] not in ("count", "rank"):
        p.append(f"monitor.cluster_mass: must be 'count' or 'rank', got {m['cluster_mass']!r}")
    for key in ("fast_monitor_enabled", "slow_monitor_enabled", "online_memory_enabled",
                "grace_step_on_final_anomaly"):
        if not isinstance(m[key], bool):
            p.append(f"monitor.{key}: expected true/false, got {m[key]!r}")
    return p


_CHAT_KINDS = {"openai", "scripted", "static"}
_EMBED_KINDS = {"hashing", "topic", "openai"}
_SEARCH_KINDS = {"fixture", "live", "static"}


def validate_backends(b: dict[str, Any]) -> list[str]:
    p: list[str] = []
    for role in ("policy", "critic"):
        spec = b.get(role)
        if spec is None:
            if role == "policy":
                p.append("backends.policy: missing")
            continue
        if not isinstance(spec, dict) or spec.get("kind") not in _CHAT_KINDS:
            p.append(f"backends.{role}.kind: must be one of {sorted(_CHAT_KINDS)}")
            continue
        if spec["kind"] == "openai":
            for key in ("base_url", "model"):
                if not spec.get(key):
                    p.append(f"backends.{role}.{key}: required for kind 'openai'")
        if spec["kind"] == "scripted" and not spec.get("script"):
            p.append(f"backends.{role}.script: required for kind 'scripted'")
    abstractor = b.get("abstractor", {"kind": "template"})
    if not isinstance(abstractor, dict) or abstractor.get("kind") not in ({"template"} | _CHAT_KINDS):
        p.append("backends.abstractor.kind: must be 'template', 'openai', 'scripted' or 'static'")
    emb = b.get("embedder", {"kind": "hashing"})
    if not isinstance(emb, dict) or emb.get("kind") not in _EMBED_KINDS:
        p.append(f"backends.embedder.kind: must be one of {sorted(_EMBED_KINDS)}")
    elif emb["kind"] == "topic" and not emb.get("topics"):
        p.append("backends.embedder.topics: required for kind 'topic'")
    elif emb["kind"] == "openai" and not (emb.get("base_url") and emb.get("model")):
        p.append("backends.embedder: base_url and model required for kind 'openai'")
    search = b.get("search", {"kind": "fixture"})
    if not isinstance(search, dict) or search.get("kind") not in _SEARCH_KINDS:
        p.append(f"backends.search.kind: must be one of {sorted(_SEARCH_KINDS)}")
    elif search["kind"] == "live" and not search.get("search_url"):
        p.append("backends.search.search_url: required for kind 'live'")
    _check_number(p, "backends.retries", b.get("retries", 3), lo=1, integer=True)
    _check_number(p, "backends.backoff", b.get("backoff", 1.0), lo=0)
    _check_number(p, "backends.timeout", b.get("timeout", 60.0), lo=0, lo_open=True)
    return p


def parse_config(raw: dict[str, Any] | None, base_dir: Path | None = None,
                 env: dict[str, str] | None = None) -> Config:
    raw = interpolate(raw or {}, env)
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    base_dir = base_dir or Path.cwd()
    problems: list[str] = []
    unknown = sorted(set(raw) - {"backends", "monitor", "paths", "templates", "seed"})
    problems += [f"{k}: unknown section" for k in unknown]

    monitor = dict(MONITOR_DEFAULTS)
    monitor.update(raw.get("monitor") or {})
    problems += validate_monitor(monitor)

    backends = dict(raw.get("backends") or {})
    problems += validate_backends(backends)

    paths_raw = raw.get("paths") or {}
    problems += [f"paths.{k}: unknown path" for k in sorted(set(paths_raw) - set(PATH_KEYS))]
    paths: dict[str, Path | None] = {}
    for key in PATH_KEYS:
        v = paths_raw.get(key)
        paths[key] = None if not v else (Path(v) if Path(v).is_absolute() else base_dir / v)

    tmpl_raw = raw.get("templates") or {}
    problems += [f"templates.{k}: unknown template" for k in sorted(set(tmpl_raw) - set(SLOTS))]
    templates = Templates.defaults()
    try:
        templates = Templates.load({k: v for k, v in tmpl_raw.items() if k in SLOTS}, base_dir)
    except OSError as exc:
        problems.append(f"templates: cannot read template file: {exc}")
    problems += templates.problems()

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        problems.append(f"seed: expected an integer, got {seed!r}")
        seed = 0
    if problems:
        raise ConfigError(problems)
    return Config(backends, monitor, paths, templates, seed, base_dir)


def load_config(path: str | Path, env: dict[str, str] | None = None) -> Config:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: invalid YAML in {path}: {exc}"]) from None
    return parse_config(raw, path.parent.resolve(), env)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_chat(spec: dict[str, Any], cfg: Config, role: str) -> ChatBackend:
    kind = spec["kind"]
    if kind == "openai":
        return OpenAIChat(spec["base_url"], spec["model"], key_env=spec.get("key_env", "CHAT_API_KEY"),
                          retry=cfg.retry, max_concurrency=int(spec.get("max_concurrency", 8)))
    if kind == "scripted":
        return ScriptedChat.from_file(cfg.resolve(spec["script"]), key=spec.get("key", "step"))
    if kind == "static":
        reply = str(spec.get("reply", ""))
        return FunctionChat(lambda _req: reply)
    raise ConfigError([f"backends.{role}.kind: unsupported {kind!r}"])


def build_embedder(spec: dict[str, Any] | None, seed: int = 0, retry: RetryPolicy = RetryPolicy()) -> EmbeddingBackend:
    spec = spec or {"kind": "hashing"}
    kind = spec.get("kind")
    if kind == "hashing":
        return HashingEmbedder(dim=int(spec.get("dim", 256)), n=int(spec.get("n", 3)),
                               seed=int(spec.get("seed", seed)), max_chars=spec.get("max_chars"))
    if kind == "topic":
        return TopicEmbedder(spec["topics"], dim=int(spec.get("dim", 64)), seed=int(spec.get("seed", seed)))
    if kind == "openai":
        return OpenAIEmbedder(spec["base_url"], spec["model"], key_env=spec.get("key_env", "EMBED_API_KEY"),
                              retry=retry, max_chars=int(spec.get("max_chars", 32000)))
    raise ConfigError([f"embedder kind {kind!r} cannot be constructed"])


def build_search(cfg: Config) -> SearchBackend:
    spec = cfg.backends.get("search", {"kind": "fixture"})
    if spec["kind"] == "fixture":
        corpus = cfg.paths.get("fixture_corpus") or (cfg.resolve(spec["corpus"]) if spec.get("corpus") else None)
        if corpus is None:
            raise ConfigError(["paths.fixture_corpus: required for fixture search"])
        return FixtureSearch(corpus)
    if spec["kind"] == "static":
        return InMemorySearch({})
    return LiveSearch(spec["search_url"], spec.get("extract_url"),
                      search_key_env=spec.get("search_key_env", "SEARCH_API_KEY"),
                      extract_key_env=spec.get("extract_key_env", "EXTRACT_API_KEY"),
                      retry=cfg.retry, max_chars=int(spec.get("max_chars", 20000)))


def build_abstractor(cfg: Config):
    spec = cfg.backends.get("abstractor", {"kind": "template"})
    if spec["kind"] == "template":
        return TemplateAbstractor()
    return LLMAbstractor(build_chat(spec, cfg, "abstractor"), cfg.templates)
