"""Command-line entry point tying the pipeline together.

stdout carries only machine-consumable results (tab-separated lines or task
blocks); everything diagnostic goes to stderr.  Exit codes are fixed for
scripting: 0 success, 2 parse failure, 3 config mismatch, 4 unsupported
shell construct, 5 missing or empty knowledge base, 6 sandbox unavailable.
"""

from __future__ import annotations

import argparse
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

from .canonical import canonicalize
from .comparator import CommandSource, ComparisonResult, EmptyKnowledgeBase, rank
from .config import ConfigError, ToolConfig, apply_setting, load_config
from .kb import (
    ConfigMismatch,
    CorruptRecord,
    FormatVersionMismatch,
    KnowledgeBase,
    load as load_kb,
    save as save_kb,
)
from .shell import ParseError, ShellExecution, UnsupportedConstruct, extract_parameters, parse_command
from .strace import Trace, TraceFormatError, parse_trace_file
from .synth import CandidateTask, emit_yaml, generate
from .validator import ContainerBackend, FixtureBackend, SandboxUnavailable, validate

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONFIG_MISMATCH = 3
EXIT_UNSUPPORTED = 4
EXIT_NO_KB = 5
EXIT_NO_BACKEND = 6


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _note(message: str) -> None:
    print(f"dozer: {message}", file=sys.stderr)


# --- argument plumbing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value config file")
    common.add_argument("--kb", metavar="FILE", help="knowledge base path")
    common.add_argument("--output", choices=("text", "structured"), help="output mode")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    common.add_argument("--figures", metavar="DIR", help="render charts into DIR")

    query = argparse.ArgumentParser(add_help=False)
    query.add_argument("command_text", metavar="COMMAND", help="shell command to analyze")
    query.add_argument("--trace", metavar="FILE", help="strace log of the command")
    query.add_argument(
        "--capture",
        action="store_true",
        help="capture the trace live by running the command under strace",
    )
    query.add_argument("--top-k", type=int, metavar="N", help="how many candidates")
    query.add_argument("--alpha", type=float, metavar="A", help="name-tier discount")

    parser = argparse.ArgumentParser(
        prog="dozer",
        description="Find config-module executions that behave like a shell command.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", parents=[common], help="add a module execution record")
    ingest.add_argument("module", help="module name, e.g. lineinfile")
    ingest.add_argument("--params", required=True, metavar="FILE", help="JSON object of parameters")
    ingest.add_argument("--trace", required=True, metavar="FILE", help="strace log of the execution")

    sub.add_parser("compare", parents=[common, query], help="rank records against a command")

    migrate = sub.add_parser("migrate", parents=[common, query], help="synthesize candidate tasks")
    migrate.add_argument("--validate", action="store_true", help="run candidates in sandboxes")
    migrate.add_argument("--backend", choices=("fixture", "container"), help="sandbox backend")
    migrate.add_argument("--base-image", metavar="IMAGE", help="sandbox base image")
    migrate.add_argument("--runtime", metavar="BIN", help="container runtime binary")
    migrate.add_argument("--fixture-dir", metavar="DIR", help="directory of .delta files")

    kb = sub.add_parser("kb", help="knowledge base inspection")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    kb_sub.add_parser("stats", parents=[common], help="corpus statistics")

    return parser


_FLAG_KEYS = (
    ("kb", "kb"),
    ("output", "output"),
    ("top_k", "top_k"),
    ("alpha", "alpha"),
    ("backend", "sandbox.backend"),
    ("base_image", "sandbox.base_image"),
    ("runtime", "sandbox.runtime"),
    ("fixture_dir", "sandbox.fixture_dir"),
)


def _resolve_config(args: argparse.Namespace) -> ToolConfig:
    try:
        config = load_config(args.config)
        for pair in args.set or ():
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
            config = apply_setting(config, key.strip(), value.strip())
        for attr, key in _FLAG_KEYS:
            value = getattr(args, attr, None)
            if value is not None:
                config = apply_setting(config, key, str(value))
    except ConfigError as e:
        raise _Exit(EXIT_PARSE, str(e)) from None
    return config


def _load_kb_required(path: Path) -> KnowledgeBase:
    if not path.exists():
        raise _Exit(EXIT_NO_KB, f"knowledge base {path} not found")
    try:
        return load_kb(path)
    except (CorruptRecord, FormatVersionMismatch, ConfigMismatch) as e:
        raise _Exit(EXIT_NO_KB, f"cannot load {path}: {e}") from None


def _capture_trace(command_text: str) -> Path:
    strace = shutil.which("strace")
    if strace is None:
        raise _Exit(EXIT_PARSE, "strace binary not found; pass --trace FILE instead")
    out = Path(tempfile.mkstemp(suffix=".strace", prefix="dozer-")[1])
    proc = subprocess.run(
        [strace, "-f", "-v", "-s", "65536", "-o", str(out), "--", "sh", "-c", command_text],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        _note(f"traced command exited with status {proc.returncode}")
    return out


def _read_trace(args: argparse.Namespace) -> Trace:
    if args.capture and args.trace:
        raise _Exit(EXIT_PARSE, "--capture and --trace are mutually exclusive")
    if args.capture:
        path = _capture_trace(args.command_text)
    elif args.trace:
        path = Path(args.trace)
    else:
        raise _Exit(EXIT_PARSE, "a trace is required: pass --trace FILE or --capture")
    try:
        trace, diagnostics = parse_trace_file(path)
    except FileNotFoundError:
        raise _Exit(EXIT_PARSE, f"trace file {path} not found") from None
    except TraceFormatError as e:
        raise _Exit(EXIT_PARSE, f"cannot parse trace {path}: {e}") from None
    if diagnostics:
        _note(f"{len(diagnostics)} diagnostic line(s) in trace {path}")
    return trace


def _parse_command_text(text: str) -> ShellExecution:
    try:
        return parse_command(text)
    except UnsupportedConstruct as e:
        raise _Exit(EXIT_UNSUPPORTED, str(e)) from None
    except ParseError as e:
        raise _Exit(EXIT_PARSE, f"cannot parse command: {e}") from None


def _command_source(args: argparse.Namespace, kb: KnowledgeBase) -> CommandSource:
    execution = _parse_command_text(args.command_text)
    trace = _read_trace(args)
    canonical = canonicalize(trace, kb.config)
    params = extract_parameters(execution, kb.config.min_groundable_len)
    return CommandSource(execution, params, canonical)


def _ranked(args: argparse.Namespace, config: ToolConfig) -> tuple[KnowledgeBase, CommandSource, list[ComparisonResult]]:
    kb = _load_kb_required(config.kb_path)
    src = _command_source(args, kb)
    try:
        results = rank(src, kb, k=config.top_k, alpha=config.alpha)
    except EmptyKnowledgeBase:
        raise _Exit(EXIT_NO_KB, f"knowledge base {config.kb_path} is empty") from None
    return kb, src, results


def _mapping_text(result: ComparisonResult) -> str:
    if not result.mapping.pairs:
        return "-"
    return ",".join(f"{s}->{t}" for s, t in result.mapping.pairs)


def _figures_dir(args: argparse.Namespace) -> Path | None:
    return Path(args.figures) if getattr(args, "figures", None) else None


# --- subcommands -----------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    params_path = Path(args.params)
    try:
        params = json.loads(params_path.read_text(encoding="utf-8"))
    except OSError as e:
        raise _Exit(EXIT_PARSE, f"cannot read params file {params_path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise _Exit(EXIT_PARSE, f"params file {params_path} is not valid JSON: {e}") from None
    if not isinstance(params, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in params.items()
    ):
        raise _Exit(EXIT_PARSE, f"params file {params_path} must hold a string-to-string object")
    try:
        trace, diagnostics = parse_trace_file(Path(args.trace))
    except FileNotFoundError:
        raise _Exit(EXIT_PARSE, f"trace file {args.trace} not found") from None
    except TraceFormatError as e:
        raise _Exit(EXIT_PARSE, f"cannot parse trace {args.trace}: {e}") from None
    if diagnostics:
        _note(f"{len(diagnostics)} diagnostic line(s) in trace {args.trace}")
    if config.kb_path.exists():
        kb = _load_kb_required(config.kb_path)
    else:
        kb = KnowledgeBase(config.canonical)
    try:
        rec_id = kb.ingest(args.module, params, trace, config.canonical)
    except ConfigMismatch as e:
        raise _Exit(EXIT_CONFIG_MISMATCH, str(e)) from None
    save_kb(kb, config.kb_path)
    print(rec_id)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    _, _, results = _ranked(args, config)
    for r in results:
        print(f"{r.record_id}\t{r.score:.4f}\t{_mapping_text(r)}")
    figures = _figures_dir(args)
    if figures is not None:
        from .report import write_score_figure

        out = write_score_figure(figures, [(r.record_id, r.score) for r in results])
        _note(f"wrote {out}")
    return EXIT_OK


def _make_backend(config: ToolConfig):
    if config.sandbox.backend == "fixture":
        if not config.sandbox.fixture_dir:
            raise _Exit(
                EXIT_NO_BACKEND,
                "fixture backend needs sandbox.fixture_dir (--fixture-dir DIR)",
            )
        try:
            return FixtureBackend.from_dir(Path(config.sandbox.fixture_dir), config.sandbox.base_image)
        except SandboxUnavailable as e:
            raise _Exit(EXIT_NO_BACKEND, str(e)) from None
    return ContainerBackend(runtime=config.sandbox.runtime)


def cmd_migrate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    kb, src, results = _ranked(args, config)
    tasks: list[tuple[ComparisonResult, CandidateTask]] = []
    for r in results:
        rec = kb.get(r.record_id)
        assert rec is not None
        tasks.append((r, generate(src, r, rec)))

    figures = _figures_dir(args)
    if figures is not None:
        from .report import write_score_figure

        out = write_score_figure(figures, [(r.record_id, r.score) for r, _ in tasks])
        _note(f"wrote {out}")

    if not args.validate:
        for i, (r, task) in enumerate(tasks):
            if config.output == "structured":
                print(
                    f"{r.record_id}\t{r.score:.4f}\t{task.module}\t"
                    + json.dumps(dict(task.params))
                )
            else:
                if i:
                    print()
                print(f"# record={r.record_id} score={r.score:.4f}")
                print(emit_yaml(task), end="")
        return EXIT_OK

    backend = _make_backend(config)
    by_record = {task.source_record: r for r, task in tasks}
    try:
        ranked = validate(
            src.execution, [task for _, task in tasks], backend, config.sandbox.base_image
        )
    except SandboxUnavailable as e:
        raise _Exit(EXIT_NO_BACKEND, str(e)) from None
    if figures is not None:
        from .report import write_similarity_figure

        out = write_similarity_figure(
            figures, [(task.source_record, sim) for task, sim in ranked]
        )
        _note(f"wrote {out}")
    task, similarity = ranked[0]
    result = by_record[task.source_record]
    if config.output == "structured":
        print(
            f"{task.source_record}\t{result.score:.4f}\t{similarity:.4f}\t{task.module}\t"
            + json.dumps(dict(task.params))
        )
    else:
        print(
            f"# record={task.source_record} score={result.score:.4f} "
            f"similarity={similarity:.4f}"
        )
        print(emit_yaml(task), end="")
    return EXIT_OK


def cmd_kb_stats(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    kb = _load_kb_required(config.kb_path)
    table = kb.freq_table
    print(f"records\t{len(kb)}")
    print(f"distinct_syscalls\t{table.distinct}")
    weighted = sorted(((kb.weight(name), name) for name in table.counts))
    lowest = [(name, w) for w, name in weighted[:10]]
    highest = [(name, w) for w, name in sorted(weighted, key=lambda e: (-e[0], e[1]))[:10]]
    for name, w in lowest:
        print(f"lowest\t{name}\t{w:.4f}")
    for name, w in highest:
        print(f"highest\t{name}\t{w:.4f}")
    figures = _figures_dir(args)
    if figures is not None and table.counts:
        from .report import write_weight_figure

        out = write_weight_figure(figures, lowest, highest)
        _note(f"wrote {out}")
    return EXIT_OK


def main(argv: "list[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            return cmd_ingest(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "migrate":
            return cmd_migrate(args)
        if args.command == "kb":
            return cmd_kb_stats(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except _Exit as e:
        _note(e.message)
        return e.code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
