"""Command-line entry points: run, build-memory, fit-calibration, inspect-memory, replay.

Exit codes: 0 success, 1 verification mismatch, 2 configuration or input
error, 3 systemic backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .backends.search import query_fingerprint
from .calibration import (
    DEFAULT_K,
    CalibrationModel,
    CalibrationPoint,
    fit,
    load_calibration,
    save_calibration,
)
from .config import build_abstractor, build_chat, build_embedder, build_search, load_config
from .errors import AbstractionFailed, BackendUnavailable, ConfigError, InsufficientData, MonitorError
from .memory import InsertResult, MemoryStore, build_entry, load_store, save_store
from .orchestrator import Deps, run_batch, run_trajectory
from .replay import replay_file
from .signals import ClusterParams, compute_signals
from .trajectory import (
    Outcome,
    OutcomeLabel,
    Query,
    Termination,
    Trajectory,
    deserialize_trajectory,
    propagate_label,
)

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2, 3

logger = logging.getLogger("metamonitor")


def _fail(message: str, code: int = EXIT_INPUT) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _iter_logs(paths: Sequence[str]) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.glob("*.jsonl")))
        else:
            out.append(p)
    return out


def _load_trajectories(logs_dir: str) -> list[tuple[Path, Trajectory]]:
    out = []
    for path in _iter_logs([logs_dir]):
        out.append((path, deserialize_trajectory(path.read_text(encoding="utf-8"))))
    return out


def _read_queries(path: Path) -> list[Query]:
    queries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            rec = json.loads(line)
            meta = {k: str(v) for k, v in rec.items() if k not in ("id", "text")}
            queries.append(Query(str(rec.get("id", f"q{n:04d}")), rec["text"], meta))
        else:
            queries.append(Query(f"q{n:04d}", line))
    return queries


def _exact_judge(query: Query, answer: str | None) -> Outcome:
    gold = query.metadata.get("answer")
    if gold is None or answer is None:
        return Outcome.UNKNOWN
    return Outcome.SUCCESS if answer.strip().lower() == gold.strip().lower() else Outcome.FAILURE


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.no_fast_monitor:
        overrides["fast_monitor_enabled"] = False
    if args.no_slow_monitor:
        overrides["slow_monitor_enabled"] = False
    if args.online_memory:
        overrides["online_memory_enabled"] = True
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    cfg.monitor.update(overrides)
    run_cfg = cfg.run_config()

    calibration = None
    if run_cfg.fast_monitor_enabled:
        cal_path = cfg.paths.get("calibration")
        if cal_path is None:
            return _fail("fast monitor enabled but paths.calibration is not set")
        if not cal_path.exists():
            return _fail(f"calibration file not found: {cal_path}")
        calibration = load_calibration(cal_path)

    embedder = build_embedder(cfg.backends.get("embedder"), cfg.seed, cfg.retry)
    memory = None
    mem_path = cfg.paths.get("memory")
    if mem_path is not None and mem_path.exists():
        memory = load_store(mem_path)
    elif run_cfg.online_memory_enabled:
        dim = len(embedder.embed(["probe"])[0])
        memory = MemoryStore(dim, float(cfg.monitor["tau_dup"]), getattr(embedder, "model_id", ""))

    deps = Deps(
        policy=build_chat(cfg.backends["policy"], cfg, "policy"),
        embedder=embedder,
        search=build_search(cfg),
        calibration=calibration,
        memory=memory,
        critic=build_chat(cfg.backends["critic"], cfg, "critic") if cfg.backends.get("critic") else None,
        abstractor=build_abstractor(cfg),
        templates=cfg.templates,
        judge=_exact_judge if args.judge == "exact" else None,
    )
    log_dir = Path(args.log_dir) if args.log_dir else cfg.paths.get("log_dir")

    if args.query:
        query = Query(args.query_id or f"q-{query_fingerprint(args.query)}", args.query)
        t = run_trajectory(query, deps, run_cfg, log_dir)
        print(json.dumps({"query_id": query.id, "answer": t.final_answer,
                          "termination": t.termination.value, "steps": len(t.sessions)},
                         ensure_ascii=False))
        code = EXIT_BACKEND if t.termination is Termination.BACKEND_ERROR else EXIT_OK
    else:
        queries = _read_queries(Path(args.queries))
        trajectories, report = run_batch(queries, deps, run_cfg, args.parallelism, log_dir)
        for t in trajectories:
            print(json.dumps({"query_id": t.query.id, "answer": t.final_answer,
                              "termination": t.termination.value}, ensure_ascii=False))
        print(json.dumps(report.to_dict(), indent=2))
        systemic = trajectories and all(t.termination is Termination.BACKEND_ERROR for t in trajectories)
        code = EXIT_BACKEND if systemic else EXIT_OK

    if memory is not None and run_cfg.online_memory_enabled and mem_path is not None:
        save_store(memory, mem_path)
    return code


# ---------------------------------------------------------------------------
# build-memory
# ---------------------------------------------------------------------------

def cmd_build_memory(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    embedder = build_embedder(cfg.backends.get("embedder"), cfg.seed, cfg.retry)
    abstractor = build_abstractor(cfg)
    loaded = _load_trajectories(args.logs)
    labeled = [(p, t) for p, t in loaded if t.outcome is not Outcome.UNKNOWN]
    report = {"trajectories": len(loaded), "skipped_unlabeled": len(loaded) - len(labeled),
              "entries_built": 0, "inserted": 0, "discarded_duplicates": 0, "abstraction_failures": 0}
    if not labeled:
        print(json.dumps(report, indent=2))
        return _fail(f"no Success/Failure-labeled trajectories under {args.logs}")

    out = Path(args.out)
    if out.exists():
        store = load_store(out)
    else:
        dim = len(embedder.embed(["probe"])[0])
        store = MemoryStore(dim, float(cfg.monitor["tau_dup"]), getattr(embedder, "model_id", ""))

    for _, t in labeled:
        label = OutcomeLabel.from_outcome(t.outcome)
        pairs = propagate_label(t, label) if t.sessions else []
        for i, (session, y) in enumerate(pairs):
            try:
                entry = build_entry(session, t.sessions[:i], y, abstractor, embedder,
                                    query_text=t.query.text, trajectory_id=t.query.id)
            except AbstractionFailed as exc:
                logger.warning("abstraction failed for %s step %d: %s", t.query.id, session.index, exc)
                report["abstraction_failures"] += 1
                continue
            report["entries_built"] += 1
            if store.insert(entry) is InsertResult.INSERTED:
                report["inserted"] += 1
            else:
                report["discarded_duplicates"] += 1

    out.parent.mkdir(parents=True, exist_ok=True)
    save_store(store, out)
    report["success_pool"] = len(store.success_pool)
    report["failure_pool"] = len(store.failure_pool)
    print(json.dumps(report, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-calibration
# ---------------------------------------------------------------------------

def cmd_fit_calibration(args: argparse.Namespace) -> int:
    embedder = None
    params = ClusterParams()
    if args.recompute:
        if not args.config:
            return _fail("--recompute needs --config for the embedder")
        cfg = load_config(args.config)
        embedder = build_embedder(cfg.backends.get("embedder"), cfg.seed, cfg.retry)
        params = ClusterParams(float(cfg.monitor["d_merge"]), str(cfg.monitor["cluster_mass"]))

    points: list[CalibrationPoint] = []
    sources: list[str] = []
    rejected = 0
    for path, t in _load_trajectories(args.logs):
        if t.outcome is not Outcome.SUCCESS:
            rejected += 1
            continue
        sources.append(str(path))
        for s in t.sessions:
            if s.signals is not None:
                points.append(CalibrationPoint(s.signals.se, s.signals.re, (t.query.id, s.index),
                                               OutcomeLabel.SUCCESS))
            elif embedder is not None and s.documents and s.reasoning_token_logprobs:
                sig = compute_signals(s, embedder, CalibrationModel(0.0, 0.0, 0.0), params)
                points.append(CalibrationPoint(sig.se, sig.re, (t.query.id, s.index), OutcomeLabel.SUCCESS))
    try:
        model = fit(points, k=args.k)
    except InsufficientData:
        return _fail(f"need >= 2 calibration points from Success trajectories, found {len(points)} "
                     f"({rejected} non-success trajectories rejected)")
    save_calibration(model, args.out, sources)
    print(json.dumps({"a": model.a, "b": model.b, "sigma": model.sigma, "k": model.k,
                      "n_fit": model.n_fit, "degenerate": model.degenerate,
                      "rejected_trajectories": rejected}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-memory
# ---------------------------------------------------------------------------

def cmd_inspect_memory(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    embedder = build_embedder(cfg.backends.get("embedder"), cfg.seed, cfg.retry)
    store = load_store(args.store)
    (vec,) = embedder.embed([args.query])
    result = store.top_k(vec, args.k)
    for pool, hits in (("success", result.success_hits), ("failure", result.failure_hits)):
        print(f"== {pool} pool ({len(store.success_pool if pool == 'success' else store.failure_pool)} entries)")
        for rank, (entry, sim) in enumerate(hits, start=1):
            print(f"{rank}. {sim:+.4f} {entry.entry_id} [{entry.provenance.trajectory_id}"
                  f"#{entry.provenance.session_index}] {entry.abstraction.insight}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def cmd_replay(args: argparse.Namespace) -> int:
    embedder = None
    if args.config:
        cfg = load_config(args.config)
        embedder = build_embedder(cfg.backends.get("embedder"), cfg.seed, cfg.retry)
    reports = [replay_file(p, embedder) for p in _iter_logs(args.log)]
    for r in reports:
        print(json.dumps(r.to_dict(), ensure_ascii=False))
    mismatches = sum(len(r.mismatches) for r in reports)
    print(json.dumps({"logs": len(reports), "verified_sessions": sum(r.verified for r in reports),
                      "mismatches": mismatches,
                      "unverifiable_sessions": sum(len(r.unverifiable) for r in reports)}))
    return EXIT_MISMATCH if mismatches else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamonitor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the monitored agent on one query or a query file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--query")
    src.add_argument("--queries", help="text file (one query per line) or JSONL {id, text, answer}")
    p.add_argument("--query-id")
    p.add_argument("--config", required=True)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--log-dir")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-fast-monitor", action="store_true")
    p.add_argument("--no-slow-monitor", action="store_true")
    p.add_argument("--online-memory", action="store_true")
    p.add_argument("--judge", choices=["none", "exact"], default="none")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("build-memory", help="build the experience memory from labeled logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser("fit-calibration", help="fit the SE->RE calibration on successful logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=float, default=DEFAULT_K)
    p.add_argument("--config")
    p.add_argument("--recompute", action="store_true",
                   help="derive (se, re) from raw documents/logprobs where signals were not recorded")
    p.set_defaults(func=cmd_fit_calibration)

    p = sub.add_parser("inspect-memory", help="show the nearest memory entries for a text")
    p.add_argument("--store", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_inspect_memory)

    p = sub.add_parser("replay", help="recompute stored signals and report mismatches")
    p.add_argument("log", nargs="+", help="log files or directories of logs")
    p.add_argument("--config")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INPUT
    except BackendUnavailable as exc:
        return _fail(str(exc), EXIT_BACKEND)
    except MonitorError as exc:
        return _fail(str(exc))
    except (OSError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
