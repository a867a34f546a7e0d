"""Command-line interface: ``check``, ``annotate``, and ``explain``.

Exit codes, shared by all subcommands:

* 0: success (for ``check``: every dependency satisfied)
* 1: ``check`` found at least one violation (or a corpus mismatch)
* 2: usage, I/O, or parse error
* 3: ``check`` found no violation but could not resolve everything

``THADC_COLOR`` (``auto``/``never``/``always``) controls ANSI colors in
text output; ``auto`` colors only when writing to a terminal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

from . import __version__
from .annotate import (
    MODES,
    AnnotationError,
    emit_annotated_source,
    emit_wrapper,
    plan_annotations,
)
from .cfg import PathExplosion, build_model
from .checker import Status, ThadVerdict, brute_force_paths, check
from .diagnostics import DiagnosticError
from .minic import parse_source, unroll_loops
from .model import BindingSource, Thad, ThadSet
from .passes import DepthLimitExceeded, RecursionDetected, preprocess
from .report import (
    OracleAgreement,
    OracleDisagreement,
    Report,
    build_report,
    exit_code,
    render_json,
    render_text,
)
from .specio import bundled_data_path, load_spec

__all__ = ["main"]

_USAGE = 2


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _want_color(stream) -> bool:
    mode = os.environ.get("THADC_COLOR", "auto")
    if mode == "always":
        return True
    if mode == "never":
        return False
    return hasattr(stream, "isatty") and stream.isatty()


def _load_set(args) -> tuple[ThadSet, str]:
    """The dependency set to check against, plus a display path for it."""
    if args.spec is None:
        spec_src = bundled_data_path("spidev.thad")
        consts_src = bundled_data_path("spidev-linux.consts")
        spec_name, consts_name = "spidev.thad", "spidev-linux.consts"
    else:
        spec_src = Path(args.spec)
        consts_src = Path(args.consts) if args.consts else None
        spec_name = str(spec_src)
        consts_name = str(consts_src) if consts_src is not None else "<consts>"
    spec_text = spec_src.read_text(encoding="utf-8")
    consts_text = (consts_src.read_text(encoding="utf-8")
                   if consts_src is not None else None)
    thad_set = load_spec(spec_text, consts_text, spec_name, consts_name)
    return thad_set, spec_name


def _write_output(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def _unroll_oracle(program, thad_set: ThadSet, verdicts: list[ThadVerdict],
                   k: int, depth: int) -> OracleAgreement:
    """Cross-check conclusive verdicts against the path oracle on a
    k-unrolled copy of the program.  Informational only: on programs
    with loops the oracle covers executions of up to k iterations."""
    unrolled = preprocess(build_model(unroll_loops(program, k)), thad_set,
                          depth)
    oracle = brute_force_paths(unrolled, thad_set)
    checked = 0
    disagreements = []
    for verdict in verdicts:
        if verdict.status is Status.INCONCLUSIVE:
            continue
        checked += 1
        expected = verdict.status is Status.SATISFIED
        if oracle[verdict.thad_id] is not expected:
            disagreements.append(OracleDisagreement(
                thad_id=verdict.thad_id,
                status=verdict.status.name.lower(),
                oracle_satisfied=oracle[verdict.thad_id],
            ))
    return OracleAgreement(k=k, checked=checked,
                           disagreements=tuple(disagreements))


def _check_program(source: str, path: str, thad_set: ThadSet, spec_path: str,
                   args) -> Report:
    started = time.perf_counter()
    program = parse_source(source, path)
    model = preprocess(build_model(program), thad_set, args.inline_depth)
    verdicts = check(model, thad_set)
    oracle = None
    if args.unroll is not None:
        try:
            oracle = _unroll_oracle(program, thad_set, verdicts,
                                    args.unroll, args.inline_depth)
        except PathExplosion as exc:
            print(f"thadc: unroll oracle skipped: {exc}", file=sys.stderr)
    wall_ms = None
    if not args.no_timing:
        wall_ms = int((time.perf_counter() - started) * 1000)
    return build_report(verdicts, thad_set, spec_path=spec_path,
                        program_path=path, wall_time_ms=wall_ms,
                        oracle=oracle)


def _cmd_check(args) -> int:
    thad_set, spec_path = _load_set(args)
    if args.corpus:
        return _run_corpus(thad_set, spec_path, args)
    source = Path(args.program).read_text(encoding="utf-8")
    report = _check_program(source, args.program, thad_set, spec_path, args)
    if args.format == "json":
        text = render_json(report)
    else:
        color = args.output is None and _want_color(sys.stdout)
        text = render_text(report, color=color)
    _write_output(text, args.output)
    return exit_code(report)


# ---------------------------------------------------------------------------
# check --corpus
# ---------------------------------------------------------------------------

def _corpus_entries() -> list[tuple[str, str, dict]]:
    """(name, program text, expectations) for each bundled corpus file."""
    root = bundled_data_path("corpus")
    names = sorted(p.name for p in root.iterdir() if p.name.endswith(".c"))
    entries = []
    for name in names:
        source = root.joinpath(name).read_text(encoding="utf-8")
        expected_name = name[:-2] + ".expected.json"
        expected = json.loads(
            root.joinpath(expected_name).read_text(encoding="utf-8"))
        entries.append((name, source, expected))
    return entries


def _corpus_facts(report: Report) -> dict:
    non_trivial = {e.thad_id: e.status for e in report.entries
                   if not e.trivial}
    via_alias = sorted(e.thad_id for e in report.entries if e.via_alias)
    witness_ends = {e.thad_id: e.witness[-1].routine for e in report.entries
                    if e.witness}
    return {"non_trivial": non_trivial, "via_alias": via_alias,
            "witness_ends": witness_ends, "exit_code": exit_code(report)}


def _run_corpus(thad_set: ThadSet, spec_path: str, args) -> int:
    entries = _corpus_entries()
    color = args.output is None and _want_color(sys.stdout)
    lines = [f"corpus: {len(entries)} programs (spec: {spec_path})"]
    width = max(len(name) for name, _, _ in entries)
    mismatches = 0
    for name, source, expected in entries:
        report = _check_program(source, name, thad_set, spec_path, args)
        facts = _corpus_facts(report)
        problems = []
        for key in ("non_trivial", "via_alias", "witness_ends", "exit_code"):
            want = expected[key] if key != "via_alias" else sorted(expected[key])
            if facts[key] != want:
                problems.append((key, want, facts[key]))
        if not problems:
            detail = (f"{len(facts['non_trivial'])} non-trivial, "
                      f"exit {facts['exit_code']}")
            if report.wall_time_ms is not None:
                detail += f", {report.wall_time_ms} ms"
            mark = "ok" if not color else "\x1b[32mok\x1b[0m"
            lines.append(f"  {name:<{width}}  {mark} ({detail})")
        else:
            mismatches += 1
            mark = "MISMATCH" if not color else "\x1b[31mMISMATCH\x1b[0m"
            lines.append(f"  {name:<{width}}  {mark}")
            for key, want, got in problems:
                lines.append(f"    {key}: expected {want!r}, got {got!r}")
    if mismatches:
        lines.append(f"corpus: {mismatches} of {len(entries)} programs "
                     "do not match expectations")
    else:
        lines.append(f"corpus: all {len(entries)} programs match expectations")
    _write_output("\n".join(lines) + "\n", args.output)
    return 1 if mismatches else 0


# ---------------------------------------------------------------------------
# annotate
# ---------------------------------------------------------------------------

def _cmd_annotate(args) -> int:
    thad_set, _ = _load_set(args)
    if args.wrapper:
        text = emit_wrapper(thad_set, mode=args.mode)
        _write_output(text, args.output)
        return 0
    source = Path(args.skeleton).read_text(encoding="utf-8")
    plan = plan_annotations(thad_set)
    text = emit_annotated_source(plan, source, mode=args.mode)
    output = args.output
    if output is None:
        stem = args.skeleton[:-2] if args.skeleton.endswith(".c") \
            else args.skeleton
        output = stem + ".annotated.c"
    _write_output(text, output)
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def _binding_text(thad: Thad, thad_set: ThadSet) -> str:
    if thad.binding is None:
        return ""
    if thad.binding.source is BindingSource.RETURN_VALUE:
        origin = f"{thad.dependency.name}.return"
    else:
        routine = thad_set.routine(thad.dependency.name)
        origin = f"{thad.dependency.name}.{routine.descriptor_param}"
    return f" (descriptor: {origin} -> {thad.binding.target_param})"


def _explain_text(thad_set: ThadSet) -> str:
    lines = [f"routines: {', '.join(r.name for r in thad_set.routines)}"]
    for source, target in sorted(thad_set.aliases.items()):
        lines.append(f"alias: {source} satisfies {target}")
    lines.append("")
    for thad in thad_set.thads:
        lines.append(f"{thad.id}: {thad.dependent.describe()} requires "
                     f"{thad.dependency.describe()}"
                     f"{_binding_text(thad, thad_set)}")
    return "\n".join(lines) + "\n"


def _dot_node(label: str) -> str:
    if label.isidentifier():
        return label
    return '"' + label.replace('"', '\\"') + '"'


def _explain_dot(thad_set: ThadSet) -> str:
    lines = ["digraph dependencies {", "  rankdir=LR;"]
    for thad in thad_set.thads:
        dep = _dot_node(thad.dependency.describe())
        dnt = _dot_node(thad.dependent.describe())
        lines.append(f'  {dep} -> {dnt} [label="{thad.id}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _cmd_explain(args) -> int:
    thad_set, _ = _load_set(args)
    if args.format == "dot":
        text = _explain_dot(thad_set)
    else:
        text = _explain_text(thad_set)
    _write_output(text, args.output)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_spec_options(sub) -> None:
    sub.add_argument("--spec", metavar="PATH",
                     help="dependency spec file (default: bundled SPI "
                          "userspace device spec)")
    sub.add_argument("--consts", metavar="PATH",
                     help="platform constants table for the spec")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thadc",
        description="Check C programs against temporal HAL-API dependencies.")
    parser.add_argument("--version", action="version",
                        version=f"thadc {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_check = subs.add_parser(
        "check", help="statically check a program against a dependency set")
    p_check.add_argument("program", nargs="?", metavar="PROGRAM.c",
                         help="program to check (omit with --corpus)")
    _add_spec_options(p_check)
    p_check.add_argument("--corpus", action="store_true",
                         help="check the bundled example programs against "
                              "their recorded expectations")
    p_check.add_argument("--format", choices=["text", "json"],
                         default="text")
    p_check.add_argument("--inline-depth", type=int, default=16, metavar="N",
                         help="maximum call-inlining depth (default 16)")
    p_check.add_argument("--unroll", type=int, metavar="K",
                         help="also run the exhaustive path oracle on a "
                              "K-unrolled copy and report agreement "
                              "(verdicts and exit code are unchanged)")
    p_check.add_argument("--no-timing", action="store_true",
                         help="omit wall-clock timing from the report")
    p_check.add_argument("-o", "--output", metavar="PATH",
                         help="write the report to a file instead of stdout")
    p_check.set_defaults(func=_cmd_check)

    p_ann = subs.add_parser(
        "annotate",
        help="inject ghost-variable annotations for runtime checking")
    p_ann.add_argument("skeleton", nargs="?", metavar="SKELETON.c",
                       help="HAL implementation skeleton to annotate "
                            "(omit with --wrapper)")
    _add_spec_options(p_ann)
    p_ann.add_argument("--mode", choices=list(MODES), default="acsl",
                       help="annotation style (default acsl)")
    p_ann.add_argument("--wrapper", action="store_true",
                       help="emit a self-contained instrumentation wrapper "
                            "instead of annotating a skeleton")
    p_ann.add_argument("-o", "--output", metavar="PATH",
                       help="output file (default: SKELETON.annotated.c, "
                            "or stdout with --wrapper)")
    p_ann.set_defaults(func=_cmd_annotate)

    p_exp = subs.add_parser(
        "explain", help="print the dependencies in a spec")
    _add_spec_options(p_exp)
    p_exp.add_argument("--format", choices=["text", "dot"], default="text")
    p_exp.add_argument("-o", "--output", metavar="PATH",
                       help="write to a file instead of stdout")
    p_exp.set_defaults(func=_cmd_explain)
    return parser


def _validate(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "check":
        if args.corpus and args.program is not None:
            parser.error("--corpus does not take a program argument")
        if not args.corpus and args.program is None:
            parser.error("a program to check is required (or use --corpus)")
        if args.corpus and args.format == "json":
            parser.error("--corpus reports in text form only")
        if args.unroll is not None and args.unroll < 1:
            parser.error("--unroll must be at least 1")
        if args.inline_depth < 1:
            parser.error("--inline-depth must be at least 1")
    if args.command == "annotate":
        if args.wrapper and args.skeleton is not None:
            parser.error("--wrapper does not take a skeleton argument")
        if not args.wrapper and args.skeleton is None:
            parser.error("a skeleton to annotate is required "
                         "(or use --wrapper)")
    if getattr(args, "consts", None) is not None and args.spec is None:
        parser.error("--consts requires --spec")


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        return args.func(args)
    except DiagnosticError as exc:
        print(str(exc), file=sys.stderr)
        return _USAGE
    except AnnotationError as exc:
        print(f"thadc: {exc}", file=sys.stderr)
        return _USAGE
    except (RecursionDetected, DepthLimitExceeded) as exc:
        print(f"thadc: {exc}", file=sys.stderr)
        return _USAGE
    except OSError as exc:
        print(f"thadc: {exc}", file=sys.stderr)
        return _USAGE


if __name__ == "__main__":
    sys.exit(main())
