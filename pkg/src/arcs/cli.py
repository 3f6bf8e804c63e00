"""Command-line entry point: index, query, exec, run, replay, sweep.

Exit codes: 0 success, 1 task failure (the loop ran but the returned
candidate does not pass, or replay diverged), 2 configuration or usage
error. Diagnostics go to stderr, results to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .config import DEFAULTS, load_config_file, resolve_config
from .controller import (
    RunDeps,
    TierConfig,
    compare_run_logs,
    load_run_log,
    replay,
    run,
    save_run_log,
)
from .corpus import LANGUAGE_BY_EXTENSION, ingest, load_snapshot, save_snapshot
from .embedding import HashingEmbedder, RemoteEmbedder
from .errors import ArcsError, ConfigError, NoCandidateError
from .evalkit import ablation_matrix, load_tasks, render_table, sweep
from .executor import ProcessExecutor, ResourceCaps, encode_feedback, load_suite
from .model import DecodingParams, RemoteModel, ScriptedModel
from .retrieval import RetrievalQuery, load_denylist, top_k

log = logging.getLogger(__name__)

_HASH_EMBEDDER_RE = re.compile(r"^hash(\d+)$")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcs",
        description="Budgeted synthesize-execute-repair loop over a frozen proposal model.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="ingest a source tree into a frozen snapshot")
    p_index.add_argument("--input", required=True, help="directory of source files")
    p_index.add_argument("--out", required=True, help="snapshot output path")
    p_index.add_argument("--embedder", default="hash384", help="hash<dim> or remote")
    p_index.add_argument("--embed-endpoint", default="", help="remote embedding endpoint URL")
    p_index.set_defaults(handler=_cmd_index)

    p_query = sub.add_parser("query", help="top-k retrieval against a snapshot")
    p_query.add_argument("--snapshot", required=True)
    p_query.add_argument("--q", required=True, help="query text")
    p_query.add_argument("-k", type=int, default=10)
    p_query.add_argument("--denylist", default="", help="file with one blocked identifier per line")
    p_query.add_argument("--embed-endpoint", default="")
    p_query.set_defaults(handler=_cmd_query)

    p_exec = sub.add_parser("exec", help="run a program against a suite in the sandbox")
    p_exec.add_argument("--program", required=True)
    p_exec.add_argument("--suite", required=True)
    p_exec.add_argument("--wall-seconds", type=float, default=None)
    p_exec.add_argument("--memory-bytes", type=int, default=None)
    p_exec.set_defaults(handler=_cmd_exec)

    p_run = sub.add_parser("run", help="run the synthesize-execute-repair loop on one task")
    _add_run_options(p_run)
    p_run.add_argument("--spec", required=True, help="task specification file")
    p_run.add_argument("--suite", required=True, help="test suite file")
    p_run.add_argument("--log-dir", default="arcs_runlog", help="run log output directory")
    p_run.set_defaults(handler=_cmd_run)

    p_replay = sub.add_parser("replay", help="re-execute a logged run and diff the logs")
    p_replay.add_argument("--log", required=True, help="run log directory")
    p_replay.add_argument("--script", default=None, help="scripted model file (overrides logged path)")
    p_replay.add_argument("--snapshot", default=None, help="snapshot path (overrides logged path)")
    p_replay.set_defaults(handler=_cmd_replay)

    p_sweep = sub.add_parser("sweep", help="run a task set, optionally as an ablation matrix")
    _add_run_options(p_sweep)
    p_sweep.add_argument("--tasks", required=True, help="task-set file")
    p_sweep.add_argument(
        "--ablate",
        default="",
        help="comma-separated toggles from retrieval,planning,feedback",
    )
    p_sweep.add_argument("--report", default="", help="write a JSON summary to this path")
    p_sweep.set_defaults(handler=_cmd_sweep)
    return parser


def _add_run_options(sub_parser: argparse.ArgumentParser) -> None:
    sub_parser.add_argument("--config", default="", help="key = value config file")
    sub_parser.add_argument("--tier", default=None, choices=("small", "medium", "large"))
    sub_parser.add_argument("--budget-b", type=int, default=None, help="iteration budget")
    sub_parser.add_argument("--budget-k", type=int, default=None, help="retrieval budget")
    sub_parser.add_argument("--max-subgoals", type=int, default=None)
    sub_parser.add_argument("--snapshot", default=None)
    sub_parser.add_argument("--denylist", default=None)
    sub_parser.add_argument("--model", default=None, choices=("scripted", "remote"))
    sub_parser.add_argument("--script", default=None, help="scripted model file")
    sub_parser.add_argument("--endpoint", default=None, help="remote model endpoint URL")
    sub_parser.add_argument("--embed-endpoint", default=None)
    sub_parser.add_argument("--seed", type=int, default=None)
    sub_parser.add_argument("--temperature", type=float, default=None)
    sub_parser.add_argument("--top-p", type=float, default=None)
    sub_parser.add_argument("--max-output-tokens", type=int, default=None)
    sub_parser.add_argument("--input-cap", type=int, default=None)
    sub_parser.add_argument("--wall-seconds", type=float, default=None)
    sub_parser.add_argument("--memory-bytes", type=int, default=None)
    sub_parser.add_argument("--delta", type=float, default=None)


def _resolved_config(args) -> dict:
    file_values = load_config_file(args.config) if args.config else {}
    flag_values = {
        "tier": args.tier,
        "budget_b": args.budget_b,
        "budget_k": args.budget_k,
        "max_subgoals": args.max_subgoals,
        "snapshot": args.snapshot,
        "denylist": args.denylist,
        "model": args.model,
        "script": args.script,
        "endpoint": args.endpoint,
        "embed_endpoint": args.embed_endpoint,
        "seed": args.seed,
        "temperature": args.temperature,
        "top_p": args.top_p,
        "max_output_tokens": args.max_output_tokens,
        "input_cap": args.input_cap,
        "wall_seconds": args.wall_seconds,
        "memory_bytes": args.memory_bytes,
        "delta": args.delta,
    }
    return resolve_config(flag_values, file_values)


def _tier_from_config(cfg: dict) -> TierConfig:
    named = {
        "small": TierConfig.small(),
        "medium": TierConfig.medium(),
        "large": TierConfig.large(),
    }
    base = named.get(cfg["tier"])
    if base is None:
        raise ConfigError(f"unknown tier {cfg['tier']!r}; expected small, medium, or large")
    return TierConfig(
        k=cfg["budget_k"] if cfg["budget_k"] is not None else base.k,
        iterations=cfg["budget_b"] if cfg["budget_b"] is not None else base.iterations,
        max_subgoals=cfg["max_subgoals"],
        planning=base.planning,
    )


def _embedder_for_snapshot(snapshot, embed_endpoint: str):
    match = _HASH_EMBEDDER_RE.match(snapshot.embedder_id)
    if match:
        return HashingEmbedder(int(match.group(1)))
    if embed_endpoint:
        return RemoteEmbedder(
            embed_endpoint,
            dimension=snapshot.dimension,
            embedder_id=snapshot.embedder_id,
        )
    raise ConfigError(
        f"snapshot uses embedder {snapshot.embedder_id!r}; provide --embed-endpoint for it"
    )


def _model_from_config(cfg: dict):
    if cfg["model"] == "scripted":
        if not cfg["script"]:
            raise ConfigError("scripted model selected but no --script file given")
        return ScriptedModel.from_file(cfg["script"])
    if cfg["model"] == "remote":
        if not cfg["endpoint"]:
            raise ConfigError("remote model selected but no --endpoint given")
        return RemoteModel(cfg["endpoint"])
    raise ConfigError(f"unknown model adapter {cfg['model']!r}")


def _deps_from_config(cfg: dict, tier: TierConfig) -> RunDeps:
    caps = ResourceCaps(wall_seconds=cfg["wall_seconds"], memory_bytes=cfg["memory_bytes"])
    snapshot = None
    embedder = None
    if tier.k > 0:
        if not cfg["snapshot"]:
            raise ConfigError("retrieval is enabled (k>0) but no --snapshot was given")
        snapshot = load_snapshot(cfg["snapshot"])
        embedder = _embedder_for_snapshot(snapshot, cfg["embed_endpoint"])
    denylist = load_denylist(cfg["denylist"]) if cfg["denylist"] else None
    return RunDeps(
        model=_model_from_config(cfg),
        executor=ProcessExecutor(caps=caps),
        snapshot=snapshot,
        embedder=embedder,
        decoding=DecodingParams(
            temperature=cfg["temperature"],
            top_p=cfg["top_p"],
            max_output_tokens=cfg["max_output_tokens"],
            seed=cfg["seed"],
        ),
        input_token_cap=cfg["input_cap"],
        redundancy_delta=cfg["delta"],
        plan_gate_tokens=cfg["plan_gate_tokens"],
        max_stack_lines=cfg["max_stack_lines"],
        denylist=denylist,
        config_echo=dict(cfg),
    )


def _cmd_index(args) -> int:
    if args.embedder == "remote":
        if not args.embed_endpoint:
            raise ConfigError("remote embedder selected but no --embed-endpoint given")
        embedder = RemoteEmbedder(args.embed_endpoint)
    else:
        match = _HASH_EMBEDDER_RE.match(args.embedder)
        if not match:
            raise ConfigError(f"unknown embedder {args.embedder!r}; expected hash<dim> or remote")
        embedder = HashingEmbedder(int(match.group(1)))
    root = Path(args.input)
    if not root.is_dir():
        raise ConfigError(f"input {root} is not a directory")
    paths = sorted(
        str(p)
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in LANGUAGE_BY_EXTENSION
    )
    snapshot = ingest(paths, embedder)
    save_snapshot(snapshot, args.out)
    print(f"{args.out} items={len(snapshot.items)} digest={snapshot.content_digest}")
    return 0


def _cmd_query(args) -> int:
    snapshot = load_snapshot(args.snapshot)
    embedder = _embedder_for_snapshot(snapshot, args.embed_endpoint)
    denylist = load_denylist(args.denylist) if args.denylist else None
    result = top_k(RetrievalQuery(args.q, args.k), snapshot, embedder, denylist)
    for item, score in result.items:
        print(f"{item.index}\t{score:.6f}\t{item.signature}\t{item.source_path}")
    return 0


def _cmd_exec(args) -> int:
    program = Path(args.program).read_text(encoding="utf-8")
    suite = load_suite(args.suite)
    caps = ResourceCaps(
        wall_seconds=args.wall_seconds if args.wall_seconds is not None else DEFAULTS["wall_seconds"],
        memory_bytes=args.memory_bytes if args.memory_bytes is not None else DEFAULTS["memory_bytes"],
    )
    feedback = ProcessExecutor(caps=caps).execute(program, suite)
    print(encode_feedback(feedback).text)
    return 0 if feedback.all_passed else 1


def _cmd_run(args) -> int:
    cfg = _resolved_config(args)
    spec = Path(args.spec).read_text(encoding="utf-8")
    suite = load_suite(args.suite)
    tier = _tier_from_config(cfg)
    deps = _deps_from_config(cfg, tier)
    log_dir = Path(args.log_dir)
    try:
        result = run(spec, suite, tier, deps)
    except NoCandidateError as exc:
        if exc.run_log is not None:
            save_run_log(exc.run_log, log_dir)
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    save_run_log(result.log, log_dir)
    program_path = log_dir / "program.py"
    program_path.write_text(result.program, encoding="utf-8")
    print(str(program_path))
    if result.log.outcome["passed"]:
        return 0
    print(
        f"budget exhausted: best candidate passes "
        f"{result.log.outcome['best_pass_count']}/{suite.m} tests",
        file=sys.stderr,
    )
    return 1


def _cmd_replay(args) -> int:
    run_log = load_run_log(args.log)
    cfg = dict(DEFAULTS)
    cfg.update(run_log.config)
    caps = ResourceCaps(wall_seconds=cfg["wall_seconds"], memory_bytes=cfg["memory_bytes"])
    script = args.script or cfg.get("script") or ""
    if run_log.model_asset_digest is not None and not script:
        raise ConfigError("replay of a scripted run requires --script")
    model = ScriptedModel.from_file(script) if script else _model_from_config(cfg)
    snapshot = None
    embedder = None
    if run_log.snapshot_digest is not None:
        snapshot_path = args.snapshot or cfg.get("snapshot") or ""
        if not snapshot_path:
            raise ConfigError("replay of a retrieval run requires --snapshot")
        snapshot = load_snapshot(snapshot_path)
        embedder = _embedder_for_snapshot(snapshot, cfg.get("embed_endpoint", ""))
    deps = RunDeps(
        model=model,
        executor=ProcessExecutor(caps=caps),
        snapshot=snapshot,
        embedder=embedder,
        denylist=load_denylist(cfg["denylist"]) if cfg.get("denylist") else None,
    )
    fresh = replay(run_log, deps)
    differences = compare_run_logs(run_log, fresh)
    if differences:
        print("replay diverged on:", file=sys.stderr)
        for path in differences:
            print(f"  {path}", file=sys.stderr)
        return 1
    print("replay identical on all comparable fields")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolved_config(args)
    tasks = load_tasks(args.tasks)
    tier = _tier_from_config(cfg)
    deps = _deps_from_config(cfg, tier)
    if args.ablate:
        toggles = tuple(part.strip() for part in args.ablate.split(",") if part.strip())
        rows = ablation_matrix(
            tasks,
            deps,
            toggles,
            base_k=tier.k or TierConfig.large().k,
            base_iterations=max(tier.iterations, 2) if tier.iterations > 1 else 5,
            max_subgoals=tier.max_subgoals,
        )
    else:
        rows = [(tier.name, sweep(tasks, tier, deps))]
    print(render_table(rows))
    if args.report:
        summary = {label: report.to_jsonable() for label, report in rows}
        Path(args.report).write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def main(argv=None) -> int:
    args_list = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(args_list)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except NoCandidateError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except ArcsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
