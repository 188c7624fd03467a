"""Command line entry point: ``avua ask | bench run | replay | memory | prompts``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from avua.config import RunConfig, build_backend, build_toolbox
from avua.errors import AvuaError, ConfigError, TraceCorrupt
from avua.gateway import Gateway
from avua.harness import load_manifest, run_benchmark, run_matrix
from avua.memory import MemoryStore
from avua.planner import Agent
from avua.prompts import CATALOG_NAMES
from avua.toolbox import SyntheticVideoSpec
from avua.trace import verify_trace
from avua.types import DatasetKind, Question, VideoMeta

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def bundled_suite() -> Path:
    return Path(str(resources.files("avua") / "fixtures" / "suite.json"))


# ---------------------------------------------------------------------------
# Config assembly


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (default: $AVUA_CONFIG)")
    p.add_argument("--ablation", help="ours, w/o-memory, w/o-evaluator, w/o-sampler, w/o-refiner or react")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--max-trials", type=int)
    p.add_argument("--sampler-cap", type=int)
    p.add_argument("--prompts-dir")
    p.add_argument("--script", help="scripted backend: JSON script file")
    p.add_argument("--simulated", action="store_true", help="use the rule-based simulated backend")
    p.add_argument("--gateway-url", help="remote completion endpoint")
    p.add_argument("--replay", metavar="SESSION", help="serve completions from a recorded session")
    p.add_argument("--record", metavar="SESSION", help="record remote completions to a session file")
    p.add_argument("--tools-url", help="remote tool service (default: synthetic adapter)")


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config)
    gateway = None
    if args.script:
        gateway = {"kind": "scripted", "script": args.script, "strict": True}
    elif args.simulated:
        gateway = {"kind": "simulated"}
    elif args.replay:
        gateway = {"kind": "replay", "session": args.replay}
    elif args.record:
        if not (args.gateway_url or cfg.gateway.get("url")):
            raise ConfigError("--record needs --gateway-url or a remote gateway in the config")
        gateway = {"kind": "record", "session": args.record, "url": args.gateway_url or cfg.gateway.get("url")}
    elif args.gateway_url:
        gateway = {"kind": "remote", "url": args.gateway_url}
    toolbox = {"kind": "remote", "url": args.tools_url} if args.tools_url else None
    return cfg.with_overrides(
        ablation=args.ablation, prompts_dir=args.prompts_dir, gateway=gateway, toolbox=toolbox,
        max_steps=args.max_steps, max_trials=args.max_trials, sampler_cap=args.sampler_cap,
        memory_path=getattr(args, "memory", None),
    )


def _explicit_gateway(args: argparse.Namespace) -> bool:
    return any((args.script, args.simulated, args.replay, args.record, args.gateway_url))


# ---------------------------------------------------------------------------
# Commands


def cmd_ask(args: argparse.Namespace) -> int:
    cfg = _config(args)
    base: Path | None = None
    backend_spec = cfg.gateway
    if args.item:
        manifest = Path(args.manifest) if args.manifest else bundled_suite()
        items = {it.id: it for it in load_manifest(manifest)}
        if args.item not in items:
            raise ConfigError(f"item {args.item!r} not in {manifest}")
        item = items[args.item]
        q, meta, video_ref, base = item.question, item.meta, item.video_ref, item.base_dir
        if item.backend and not _explicit_gateway(args) and not args.config:
            backend_spec = item.backend
    else:
        if not args.question:
            raise ConfigError("ask needs --question (or --item)")
        kind = DatasetKind(args.kind)
        try:
            q = Question(args.question, kind, tuple(args.option) if kind is DatasetKind.MCQ else None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        video_ref = args.video
        if args.meta:
            try:
                meta = VideoMeta.from_dict(json.loads(args.meta))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"bad --meta: {exc}") from None
        elif video_ref and cfg.toolbox.get("kind") == "synthetic":
            try:
                meta = SyntheticVideoSpec.load(video_ref).meta
            except FileNotFoundError:
                raise ConfigError(f"video spec not found: {video_ref}") from None
        else:
            raise ConfigError("ask needs --video (synthetic spec) or --meta")

    gateway = Gateway(build_backend(backend_spec, base))
    toolbox = build_toolbox(cfg.toolbox, video_ref, base, cfg.window_stride)
    memory = MemoryStore(cfg.memory_path) if cfg.memory_path else None
    agent = Agent(gateway, toolbox, memory, cfg.catalog(), cfg.agent_config())
    header = {"config_digest": cfg.digest(), "item_id": args.item}
    trace_path = Path(args.trace)
    try:
        result = agent.run_episode(q, meta, cfg.ablation_config, header=header)
    except AvuaError as exc:
        partial = getattr(exc, "result", None)
        if partial is not None:
            partial.trace.write(trace_path)
        raise
    result.trace.write(trace_path)
    if args.transcript:
        result.transcript.write(args.transcript)
    print(f"Answer: {result.answer}")
    print(f"Frames accessed: {result.distinct_frames_accessed} (ratio {result.ratio:.5f})")
    print(f"Frames charged: {result.frames_accessed}")
    print(f"Trials: {len(result.trials)}")
    print(f"Trace: {trace_path}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = Path(args.manifest) if args.manifest else bundled_suite()
    items = load_manifest(manifest)
    out = Path(args.out)
    if args.matrix:
        reports = run_matrix(items, cfg, out, jobs=args.jobs)
        print((out / "matrix.txt").read_text(encoding="utf-8"), end="")
        failed = sum(r["n_failed"] for r in reports.values())
    else:
        report = run_benchmark(items, cfg, out, jobs=args.jobs)
        print((out / "report.txt").read_text(encoding="utf-8"), end="")
        failed = report["n_failed"]
    print(f"Report: {out}")
    if failed:
        print(f"{failed} item run(s) failed; see the per-item errors in the report", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    summary = verify_trace(args.trace)
    print(f"Answer: {summary['answer']}")
    print(f"Frames accessed: {summary['distinct_frames_accessed']} (ratio {summary['ratio']:.5f})")
    print(f"Frames charged: {summary['frames_accessed']}")
    print(f"Trials: {summary['trials']}")
    print("Per tool: " + ", ".join(f"{k}={v}" for k, v in sorted(summary["per_tool"].items())))
    print("Ledger check: ok")
    if args.config:
        current = RunConfig.load(args.config).digest()
        if summary["config_digest"] != current:
            print(f"Config drift: trace was produced with {summary['config_digest']}, current config is {current}",
                  file=sys.stderr)
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_memory(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.exists():
        raise ConfigError(f"memory store not found: {path}")
    store = MemoryStore(path)
    if args.memory_cmd == "inspect":
        recs = store.records()
        print(f"{len(recs)} record(s) in {path}")
        for rec in recs[: args.limit]:
            verdict = "pass" if rec.verdict else "fail"
            print(f"{rec.id}  [{rec.question_type}]  {verdict} ({rec.confidence})  {rec.question_text}")
        return EXIT_OK
    hits = store.retrieve(args.type, args.question, k=args.k, only_successful=args.only_successful)
    if not hits:
        print("no records above the similarity threshold")
    for rec, sim in hits:
        print(f"{sim:.4f}  {rec.id}  [{rec.question_type}]  {rec.question_text}")
    return EXIT_OK


def cmd_prompts(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config).with_overrides(prompts_dir=args.prompts_dir)
    catalog = cfg.catalog()
    if args.prompts_cmd == "list":
        for name in catalog.names():
            slots = ", ".join(catalog.placeholders(name)) or "-"
            print(f"{name}: {slots}")
        return EXIT_OK
    if args.name not in CATALOG_NAMES:
        raise ConfigError(f"unknown prompt {args.name!r}; choose from {', '.join(CATALOG_NAMES)}")
    print(catalog.get(args.name), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avua", description="Adaptive video-understanding agent")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", help="run one episode")
    _add_run_flags(ask)
    ask.add_argument("--item", help="take question, video and backend from a manifest item")
    ask.add_argument("--manifest", help="manifest for --item (default: bundled suite)")
    ask.add_argument("--question")
    ask.add_argument("--kind", default="mcq", choices=[k.value for k in DatasetKind])
    ask.add_argument("--option", action="append", default=[], help="MCQ option (repeat, in order)")
    ask.add_argument("--video", help="synthetic video spec JSON")
    ask.add_argument("--meta", help="video metadata as JSON (with a remote toolbox)")
    ask.add_argument("--memory", help="long-term memory JSONL store")
    ask.add_argument("--trace", default="avua-trace.jsonl")
    ask.add_argument("--transcript")
    ask.set_defaults(func=cmd_ask)

    bench = sub.add_parser("bench", help="benchmarks and ablations")
    bench_sub = bench.add_subparsers(dest="bench_cmd", required=True)
    run = bench_sub.add_parser("run")
    _add_run_flags(run)
    run.add_argument("--manifest", help="benchmark manifest (default: bundled suite)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--matrix", action="store_true", help="run every ablation row")
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=cmd_bench)

    replay = sub.add_parser("replay", help="verify a trace and print its summary")
    replay.add_argument("trace")
    replay.add_argument("--config", help="compare against this config's digest")
    replay.set_defaults(func=cmd_replay)

    mem = sub.add_parser("memory", help="inspect a long-term memory store")
    mem_sub = mem.add_subparsers(dest="memory_cmd", required=True)
    inspect = mem_sub.add_parser("inspect")
    inspect.add_argument("path")
    inspect.add_argument("--limit", type=int, default=50)
    query = mem_sub.add_parser("query")
    query.add_argument("path")
    query.add_argument("--type", required=True, help="question type")
    query.add_argument("--question", required=True)
    query.add_argument("-k", type=int, default=3)
    query.add_argument("--only-successful", action="store_true")
    mem.set_defaults(func=cmd_memory)

    prompts = sub.add_parser("prompts", help="list or show prompt templates")
    prompts.add_argument("--config")
    prompts.add_argument("--prompts-dir")
    p_sub = prompts.add_subparsers(dest="prompts_cmd", required=True)
    p_sub.add_parser("list")
    show = p_sub.add_parser("show")
    show.add_argument("name")
    prompts.set_defaults(func=cmd_prompts)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceCorrupt as exc:
        print(f"trace corrupt: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AvuaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
