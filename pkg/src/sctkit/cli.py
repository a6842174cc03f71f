"""Command-line entry point: ``sct <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .comment_tree import attach_comments
from .comments import DEFAULT_MODEL, CommentClient, CommentProviderConfig, comment_source, strip_comments
from .corpus import collect_outputs, ingest, process_corpus, split, summarize, write_jsonl, write_split
from .errors import SctError
from .fusion import DEFAULT_HEADS, FusionParams, grad_check, make_instance, predict
from .metrics import evaluate
from .sct import build_sct, builtin_rules, select_rules, to_record


def _provider_args(p: argparse.ArgumentParser, kind_flag: str, choices: dict[str, str]) -> None:
    p.add_argument(kind_flag, choices=sorted(choices), default=sorted(choices)[0],
                   help="where comments come from")
    p.add_argument("--cache", type=Path, default=Path(".sct-cache"), help="comment cache directory")
    p.add_argument("--endpoint", help="chat-completion URL (remote provider)")
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--rules", default="all",
                   help="all, or comma-separated categories: selection,iteration,jump,labeled")
    p.add_argument("--language", choices=("auto", "c", "cpp"), default="auto")


def _provider_config(args: argparse.Namespace, kind: str) -> CommentProviderConfig:
    return CommentProviderConfig(
        kind=kind,
        endpoint=args.endpoint,
        model_id=args.model,
        max_retries=args.max_retries,
        cache_dir=args.cache,
        max_in_flight=getattr(args, "jobs", 4),
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    records = ingest(args.input)
    summary = summarize(records)
    print(json.dumps(summary.as_dict()))
    if args.out:
        write_jsonl(args.out, (r.to_json() for r in records))
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    parts = split(ingest(args.input), args.seed)
    manifest = write_split(parts, args.out, args.seed)
    print(json.dumps(manifest))
    return 0


def cmd_process(args: argparse.Namespace) -> int:
    kind = {"remote": "remote_chat", "fixture": "fixture"}[args.provider]
    records = ingest(args.input)
    report = process_corpus(
        records,
        _provider_config(args, kind),
        args.out,
        rules=select_rules(args.rules),
        jobs=args.jobs,
        language=args.language,
        retry_failed=args.retry_failed,
    )
    write_jsonl(Path(args.out) / "sct.jsonl", collect_outputs(records, args.out))
    print(json.dumps({
        "written": len(report.written),
        "failed": len(report.failures),
        "skipped": report.skipped,
    }))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    print(json.dumps(evaluate(args.pred, args.gold).as_dict()))
    return 0


def cmd_rules(args: argparse.Namespace) -> int:
    for r in builtin_rules().rules:
        print(f"{r.category:<10} {r.name:<10} {r.target_type:<19} {r.template}")
    return 0


def cmd_fuse_demo(args: argparse.Namespace) -> int:
    inst = make_instance(args.seed, args.l, args.n)
    params = FusionParams.random(args.n, args.heads, args.seed)
    pred = predict(inst, params)
    print(json.dumps({
        "prob": pred.prob,
        "label": pred.label,
        "loss": pred.loss,
        "grad_check_max_rel_error": grad_check(inst, params),
    }))
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    kind = {"cache": "fixture", "endpoint": "remote_chat"}[args.comments]
    rules = select_rules(args.rules)
    source = Path(args.input).read_text(encoding="utf-8")
    client = CommentClient(_provider_config(args, kind))
    code = strip_comments(source)
    commented = comment_source(code, client)
    doc = build_sct(attach_comments(commented, language=args.language), rules)
    if args.json:
        print(json.dumps(to_record(args.id or Path(args.input).stem, source, doc)))
    else:
        print(doc.rendered)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sct", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a JSONL corpus and print its statistics")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="write normalised records here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="seeded 8:1:1 train/valid/test split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("process", help="build SCT records for a corpus (resumable)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _provider_args(p, "--provider", {"fixture": "fixture", "remote": "remote_chat"})
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--retry-failed", action="store_true")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("build", help="build the SCT of a single C file")
    p.add_argument("--in", dest="input", required=True)
    _provider_args(p, "--comments", {"cache": "fixture", "endpoint": "remote_chat"})
    p.add_argument("--json", action="store_true", help="print the wire-format record")
    p.add_argument("--id", help="record id for --json output")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="Acc/Pre/Rec/F1 of a prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rules", help="inspect the rule catalogue")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    rsub.add_parser("list").set_defaults(func=cmd_rules)

    p = sub.add_parser("fuse-demo", help="run the cross-attention reference on a random instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l", type=int, default=4)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--heads", type=int, default=DEFAULT_HEADS)
    p.set_defaults(func=cmd_fuse_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SctError, ValueError, OSError) as e:
        print(f"sct: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
