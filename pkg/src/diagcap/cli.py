"""``diagcap`` command line: build, query, score, validate.

Exit codes: 0 success, 1 operational failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .client import DEFAULT_API_KEY_ENV, EndpointConfigError, load_endpoint_config
from .export import BuildConfig, ExportError, build_all, load_build_config
from .harness import HarnessError, Task, load_texts, query, report_table, score, validate_corpus
from .metrics import IdMismatchError
from .synth import ConfigError, GenerationError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diagcap", description="Diagram captioning corpora, model querying and scoring.",
                epilog=f"The endpoint API key is read from ${DEFAULT_API_KEY_ENV} (or the variable named "
                       f"by api_key_env in an endpoint file).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="generate a corpus with all three SFT stages and an eval split")
    b.add_argument("--config", help="INI file with [corpus] and [generator] sections (default: desk scale)")
    b.add_argument("--out", required=True, help="output root; the corpus goes to OUT/<corpus_id>")
    b.add_argument("--seed", type=int, help="override the base seed")

    q = sub.add_parser("query", help="ask a chat-completion endpoint about every eval item")
    q.add_argument("--corpus", required=True, help="built corpus directory")
    q.add_argument("--endpoint", required=True, help="base URL or INI file with an [endpoint] section")
    q.add_argument("--task", required=True, choices=[t.value for t in Task])
    q.add_argument("--out", help="run directory (default: CORPUS/runs/<task>)")
    q.add_argument("--resume", action="store_true", help="continue a run, skipping answered items")

    s = sub.add_parser("score", help="score a run directory, run.json or responses file")
    s.add_argument("responses", help="run directory, run.json or responses .jsonl")
    s.add_argument("--corpus", required=True)
    s.add_argument("--task", choices=[t.value for t in Task], help="needed only when it cannot be inferred")
    s.add_argument("--out", help="report directory (default: next to the responses)")

    v = sub.add_parser("validate", help="re-parse and validate every diagram of a corpus")
    v.add_argument("--corpus", required=True)
    return p


def _cmd_build(args) -> int:
    cfg = load_build_config(args.config) if args.config else BuildConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, base_seed=args.seed)
        cfg.check()
    manifest = build_all(cfg, args.out)
    s1, s2, s3 = manifest.stage_totals()
    print(f"built {Path(args.out) / manifest.corpus_id}: stage1={s1} stage2={s2} stage3={s3} "
          f"eval={manifest.eval['single']}+{manifest.eval['multi']} questions")
    return EXIT_OK


def _cmd_query(args) -> int:
    endpoint = load_endpoint_config(args.endpoint)
    task = Task(args.task)
    run_dir = Path(args.out) if args.out else Path(args.corpus) / "runs" / task.value
    record = query(args.corpus, endpoint, task, run_dir, resume=args.resume)
    n, failed = len(record.responses), len(record.failed)
    print(f"run {record.run_id}: {n - failed}/{n} items answered, saved to {run_dir}")
    if record.report:
        print(report_table(record.report))
    if n and failed == n:
        print(f"error: every request failed; last error: {record.responses[record.failed[-1]]['error']}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _cmd_score(args) -> int:
    task, texts = load_texts(args.responses, Task(args.task) if args.task else None)
    report = score(args.corpus, task, texts)
    src = Path(args.responses)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{task.value}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
    table = report_table(report)
    (out / f"report_{task.value}.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _cmd_validate(args) -> int:
    problems = validate_corpus(args.corpus)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return EXIT_FAIL
    print(f"{args.corpus}: ok")
    return EXIT_OK


_COMMANDS = {"build": _cmd_build, "query": _cmd_query, "score": _cmd_score, "validate": _cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, EndpointConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExportError, HarnessError, IdMismatchError, GenerationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

