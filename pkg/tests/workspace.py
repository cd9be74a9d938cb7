"""On-disk workspace for CLI runs of the scripted scenario."""

import json
from pathlib import Path

import yaml

import scenario as sc
from metamonitor.backends import response_to_dict, write_fixture
from metamonitor.calibration import save_calibration


def make_workspace(root: Path, n_queries: int = 1, *, with_calibration: bool = True,
                   monitor: dict | None = None) -> Path:
    """Write script, fixtures, calibration, queries and config; return the config path."""
    root.mkdir(parents=True, exist_ok=True)
    responses = {}
    for n in range(n_queries):
        responses.update({k: response_to_dict(v) for k, v in sc.policy_table(n).items()})
        for q, docs in sc.corpus(n).items():
            write_fixture(root / "corpus", q, docs)
    (root / "policy.json").write_text(json.dumps({"responses": responses}))
    if with_calibration:
        save_calibration(sc.calibration(), root / "calibration.json", fitted_at="2026-01-01T00:00:00+00:00")
    lines = [json.dumps({"id": q.id, "text": q.text, "answer": sc.ANSWER}) for q in sc.queries(n_queries)]
    (root / "queries.jsonl").write_text("\n".join(lines) + "\n")
    config = {
        "seed": 0,
        "backends": {
            "policy": {"kind": "scripted", "script": "policy.json"},
            "critic": {"kind": "static", "reply": sc.critic_reply(None)},
            "embedder": {"kind": "topic", "topics": sc.TOPICS, "dim": 64},
            "search": {"kind": "fixture"},
        },
        "monitor": dict(monitor or {}),
        "paths": {"calibration": "calibration.json", "memory": "memory.jsonl",
                  "fixture_corpus": "corpus"},
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path
