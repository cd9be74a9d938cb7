import json

import pytest

import scenario as sc
from metamonitor.calibration import load_calibration
from metamonitor.cli import main
from metamonitor.memory import load_store
from metamonitor.trajectory import Outcome, Trajectory, deserialize_trajectory, serialize_trajectory

from workspace import make_workspace


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_run_single_query(tmp_path, log_dir, capsys):
    cfg = make_workspace(tmp_path / "ws")
    code = run_cli("run", "--config", cfg, "--query", sc.query_text(0), "--query-id", "one", "--log-dir", log_dir)
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out == {"query_id": "one", "answer": sc.ANSWER, "termination": "answered", "steps": 3}
    t = deserialize_trajectory((log_dir / "one.jsonl").read_text())
    assert t.sessions[2].injected_delta == sc.GUIDANCE


def test_run_batch_with_judge(tmp_path, log_dir, capsys):
    cfg = make_workspace(tmp_path / "ws", 3)
    code = run_cli("run", "--config", cfg, "--queries", tmp_path / "ws" / "queries.jsonl",
                   "--parallelism", 2, "--log-dir", log_dir, "--judge", "exact")
    assert code == 0
    for n in range(3):
        t = deserialize_trajectory((log_dir / f"scenario-{n}.jsonl").read_text())
        assert t.outcome is Outcome.SUCCESS
    assert json.loads((log_dir / "batch_summary.json").read_text())["critic_calls"] == 3


def test_missing_calibration_exits_2(tmp_path, capsys):
    cfg = make_workspace(tmp_path / "ws", with_calibration=False)
    assert run_cli("run", "--config", cfg, "--query", "q") == 2
    assert "calibration.json" in capsys.readouterr().err


def test_invalid_config_lists_every_problem(tmp_path, capsys):
    cfg = make_workspace(tmp_path / "ws", monitor={"anomaly_k": -1, "d_merge": 3, "bogus": 1})
    assert run_cli("run", "--config", cfg, "--query", "q") == 2
    err = capsys.readouterr().err
    for name in ("monitor.anomaly_k", "monitor.d_merge", "monitor.bogus"):
        assert name in err


def test_disabled_fast_monitor_needs_no_calibration(tmp_path, log_dir):
    cfg = make_workspace(tmp_path / "ws", with_calibration=False)
    assert run_cli("run", "--config", cfg, "--query", sc.query_text(0), "--query-id", "nofast",
                   "--no-fast-monitor", "--log-dir", log_dir) == 0
    t = deserialize_trajectory((log_dir / "nofast.jsonl").read_text())
    assert all(s.signals is None for s in t.sessions)
    # Nothing to verify: replay reports every session as unverifiable and succeeds.
    assert run_cli("replay", log_dir / "nofast.jsonl") == 0


def test_build_memory_pools_and_second_pass_dedup(tmp_path, log_dir, capsys):
    cfg = make_workspace(tmp_path / "ws", 2)
    logs = log_dir
    assert run_cli("run", "--config", cfg, "--queries", tmp_path / "ws" / "queries.jsonl", "--log-dir", logs) == 0
    # Label trajectory 0 a success and trajectory 1 a failure.
    for n, outcome in enumerate((Outcome.SUCCESS, Outcome.FAILURE)):
        path = logs / f"scenario-{n}.jsonl"
        t = deserialize_trajectory(path.read_text())
        path.write_text(serialize_trajectory(Trajectory(t.query, t.sessions, outcome, t.termination, t.run_info)))
    capsys.readouterr()
    store_path = tmp_path / "mem.jsonl"
    assert run_cli("build-memory", "--logs", logs, "--out", store_path, "--config", cfg) == 0
    first = json.loads(capsys.readouterr().out)
    store = load_store(store_path)
    assert (first["entries_built"], first["inserted"]) == (6, 6)
    assert (len(store.success_pool), len(store.failure_pool)) == (3, 3)
    assert run_cli("build-memory", "--logs", logs, "--out", store_path, "--config", cfg) == 0
    second = json.loads(capsys.readouterr().out)
    assert second["inserted"] == 0 and second["discarded_duplicates"] == 6


def test_build_memory_needs_labels(tmp_path, log_dir):
    cfg = make_workspace(tmp_path / "ws")
    logs = log_dir
    assert run_cli("run", "--config", cfg, "--query", sc.query_text(0), "--log-dir", logs) == 0
    assert run_cli("build-memory", "--logs", logs, "--out", tmp_path / "m.jsonl", "--config", cfg) == 2


def _signal_log(path, query_id, outcome, pairs):
    from metamonitor.trajectory import Action, Query, RetrievedDocument, Session, UncertaintySignals

    doc = (RetrievedDocument("d", "t", "c", 1),)
    sessions = tuple(Session(i, "r", Action.tool_call("search", {"query": "q"}), documents=doc,
                             signals=UncertaintySignals(se, re, 0.0, 0.0, False))
                     for i, (se, re) in enumerate(pairs, start=1))
    path.write_text(serialize_trajectory(Trajectory(Query(query_id, "text"), sessions, outcome)))


def test_fit_calibration_uses_success_logs_only(tmp_path, capsys):
    logs = tmp_path / "logs"
    logs.mkdir()
    _signal_log(logs / "a.jsonl", "a", Outcome.SUCCESS, [(0.0, 1.0), (1.0, 2.0)])
    _signal_log(logs / "b.jsonl", "b", Outcome.SUCCESS, [(2.0, 3.0)])
    _signal_log(logs / "c.jsonl", "c", Outcome.FAILURE, [(0.0, 9.0)])
    out = tmp_path / "cal.json"
    assert run_cli("fit-calibration", "--logs", logs, "--out", out) == 0
    m = load_calibration(out)
    assert (m.a, m.b, m.sigma, m.k) == (pytest.approx(1.0), pytest.approx(1.0), 0.0, 2.0)
    assert json.loads(capsys.readouterr().out)["rejected_trajectories"] == 1


def test_fit_calibration_on_failures_only_exits_2(tmp_path):
    logs = tmp_path / "logs"
    logs.mkdir()
    _signal_log(logs / "c.jsonl", "c", Outcome.FAILURE, [(0.0, 1.0), (1.0, 2.0)])
    assert run_cli("fit-calibration", "--logs", logs, "--out", tmp_path / "cal.json") == 2


def test_fit_calibration_recompute_from_raw_logs(tmp_path, log_dir, capsys):
    cfg = make_workspace(tmp_path / "ws", 2, with_calibration=False)
    logs = log_dir
    assert run_cli("run", "--config", cfg, "--queries", tmp_path / "ws" / "queries.jsonl",
                   "--log-dir", logs, "--no-fast-monitor", "--judge", "exact") == 0
    out = tmp_path / "cal.json"
    assert run_cli("fit-calibration", "--logs", logs, "--out", out, "--config", cfg, "--recompute") == 0
    assert load_calibration(out).n_fit == 4


def test_inspect_memory(tmp_path, capsys):
    cfg = make_workspace(tmp_path / "ws")
    from metamonitor.memory import save_store

    save_store(sc.seed_memory(sc.embedder()), tmp_path / "m.jsonl")
    assert run_cli("inspect-memory", "--store", tmp_path / "m.jsonl", "--query", "alpha", "--config", cfg) == 0
    out = capsys.readouterr().out
    assert "== success pool (2 entries)" in out and "== failure pool (2 entries)" in out


def test_replay_detects_tampering(tmp_path, log_dir, capsys):
    cfg = make_workspace(tmp_path / "ws")
    assert run_cli("run", "--config", cfg, "--query", sc.query_text(0), "--query-id", "orig",
                   "--log-dir", log_dir) == 0
    assert run_cli("replay", log_dir / "orig.jsonl") == 0
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text((log_dir / "orig.jsonl").read_text().replace('"re": 0.0', '"re": 0.25', 1))
    capsys.readouterr()
    assert run_cli("replay", tampered) == 1
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["mismatches"] >= 1
