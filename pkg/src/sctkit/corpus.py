"""Corpus ingestion, 8:1:1 splitting and resumable batch SCT processing."""

from __future__ import annotations

import json
import logging
import os
import random
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional
from urllib.parse import quote

from . import __version__
from .comment_tree import attach_comments
from .comments import CommentClient, CommentProviderConfig, comment_source, strip_comments
from .errors import MalformedLine, MissingField, TooFewRecords
from .sct import SctRuleSet, build_sct, builtin_rules, to_record
from .syntax import parse_function

logger = logging.getLogger(__name__)

ID_FIELDS = ("id", "idx")
CODE_FIELDS = ("func", "code")
LABEL_FIELDS = ("target", "label")
SPLIT_RATIO = "8:1:1"

# Failures that would recur on every retry; reruns skip these records.
PERMANENT_FAILURES = frozenset(
    {"ParseFailed", "EmptySource", "UnterminatedCommentBlock", "MalformedResponse"}
)


@dataclass(frozen=True)
class FunctionRecord:
    id: str
    code: str
    label: int
    project: Optional[str] = None

    def to_json(self) -> dict:
        d = {"id": self.id, "code": self.code, "label": self.label}
        if self.project is not None:
            d["project"] = self.project
        return d


@dataclass(frozen=True)
class CorpusSummary:
    total: int
    vulnerable: int

    @property
    def ratio(self) -> float:
        """Vulnerable share in percent."""
        return 100.0 * self.vulnerable / self.total if self.total else 0.0

    def as_dict(self) -> dict:
        return {"total": self.total, "vulnerable": self.vulnerable, "ratio": round(self.ratio, 2)}

    def __str__(self) -> str:
        return f"total {self.total:,}, vulnerable {self.vulnerable:,}, ratio {self.ratio:.2f}%"


def _first(obj: dict, names: tuple[str, ...]):
    for name in names:
        if name in obj and obj[name] is not None:
            return obj[name]
    return None


def _label(value, line_no: int) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value)
    raise MalformedLine(line_no, f"label {value!r} is not 0/1")


def _objects(path: Path | str) -> Iterator[tuple[int, object]]:
    """Yield (position, decoded object) from a JSONL file or a single JSON array.

    Positions are 1-based line numbers for JSONL and 1-based element indices
    for an array file such as the Devign ``function.json`` release.
    """
    with open(path, encoding="utf-8") as f:
        head = f.read(4096).lstrip()
        f.seek(0)
        if head.startswith("["):
            try:
                items = json.load(f)
            except json.JSONDecodeError as e:
                raise MalformedLine(e.lineno, f"invalid JSON: {e}") from None
            yield from enumerate(items, 1)
            return
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLine(line_no, f"invalid JSON: {e}") from None


def ingest(path: Path | str) -> list[FunctionRecord]:
    """Read a corpus accepting both ``{func, target}`` and ``{code, label}`` fields.

    The file is JSONL, or one JSON array of records. Records without an id get
    their 0-based position; repeated ids get a ``#2``, ``#3``... suffix in file
    order.
    """
    records: list[FunctionRecord] = []
    seen: set[str] = set()
    counts: dict[str, int] = {}
    for line_no, obj in _objects(path):
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "not a JSON object")
        code = _first(obj, CODE_FIELDS)
        if code is None:
            raise MissingField(line_no, "func|code")
        if not isinstance(code, str) or not code.strip():
            raise MalformedLine(line_no, "code is empty")
        label = _first(obj, LABEL_FIELDS)
        if label is None:
            raise MissingField(line_no, "target|label")
        raw_id = _first(obj, ID_FIELDS)
        base = str(raw_id) if raw_id is not None else str(len(records))
        rid = base
        while rid in seen:
            counts[base] = counts.get(base, 1) + 1
            rid = f"{base}#{counts[base]}"
        seen.add(rid)
        project = obj.get("project")
        records.append(
            FunctionRecord(rid, code, _label(label, line_no), None if project is None else str(project))
        )
    return records


def summarize(records: Iterable[FunctionRecord]) -> CorpusSummary:
    records = list(records)
    return CorpusSummary(len(records), sum(r.label for r in records))


def split(records: list[FunctionRecord], seed: int) -> dict[str, list[FunctionRecord]]:
    """Seeded, unstratified 8:1:1 split; valid and test get floor(n/10) each."""
    n = len(records)
    if n < 10:
        raise TooFewRecords(f"need at least 10 records to split, got {n}")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    k = n // 10
    return {
        "train": [records[i] for i in order[2 * k:]],
        "valid": [records[i] for i in order[:k]],
        "test": [records[i] for i in order[k:2 * k]],
    }


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_jsonl(path: Path | str, rows: Iterable[dict]) -> None:
    _atomic_write(Path(path), "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))


def write_split(splits: dict[str, list[FunctionRecord]], out_dir: Path | str, seed: int) -> dict:
    """Write ``train/valid/test.jsonl`` plus ``manifest.json`` and return the manifest."""
    out = Path(out_dir)
    for name, rows in splits.items():
        write_jsonl(out / f"{name}.jsonl", (r.to_json() for r in rows))
    manifest = {
        "seed": seed,
        "ratio": SPLIT_RATIO,
        "counts": {name: len(rows) for name, rows in splits.items()},
        "tool_version": __version__,
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


# -- batch processing ------------------------------------------------------

@dataclass
class ProcessReport:
    written: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    skipped: int = 0

    @property
    def work_items(self) -> int:
        return len(self.written) + len(self.failures)


def output_path(out_dir: Path, record_id: str) -> Path:
    return out_dir / "sct" / f"{quote(record_id, safe='')}.json"


def read_failures(out_dir: Path | str) -> dict[str, dict]:
    """Latest failure entry per id from the append-only failure log."""
    path = Path(out_dir) / "failures.jsonl"
    latest: dict[str, dict] = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                latest[entry["id"]] = entry
    return latest


def sct_record(record: FunctionRecord, client: CommentClient, rules: SctRuleSet,
               language: str = "auto") -> dict:
    """Run one record through comments, normalisation, attachment and rule rewriting."""
    code = strip_comments(record.code)
    parse_function(code, language=language)  # fail before paying for comments
    commented = comment_source(code, client)
    doc = build_sct(attach_comments(commented, language=language), rules)
    return to_record(record.id, record.code, doc)


def process_corpus(
    records: list[FunctionRecord],
    cfg: CommentProviderConfig,
    out_dir: Path | str,
    *,
    rules: Optional[SctRuleSet] = None,
    jobs: int = 4,
    language: str = "auto",
    retry_failed: bool = False,
    client: Optional[CommentClient] = None,
) -> ProcessReport:
    """Build SCT records for a corpus, one JSON file per record under ``out_dir/sct``.

    Failures never abort the batch; they are appended to ``failures.jsonl``.
    Records that already have output, or failed for a reason that would
    recur, are skipped on reruns.
    """
    out = Path(out_dir)
    (out / "sct").mkdir(parents=True, exist_ok=True)
    rules = rules or builtin_rules()
    client = client or CommentClient(cfg)
    previous = read_failures(out)
    report = ProcessReport()

    todo = []
    for r in records:
        if output_path(out, r.id).exists():
            report.skipped += 1
        elif (
            r.id in previous
            and not retry_failed
            and previous[r.id]["reason"] in PERMANENT_FAILURES
        ):
            report.skipped += 1
        else:
            todo.append(r)
    logger.info("%d records to process, %d skipped", len(todo), report.skipped)

    lock = threading.Lock()
    fail_log = out / "failures.jsonl"

    def work(record: FunctionRecord) -> None:
        try:
            row = sct_record(record, client, rules, language)
        except Exception as e:  # noqa: BLE001 - one bad record must not stop the batch
            entry = {"id": record.id, "reason": type(e).__name__, "detail": str(e)[:500]}
            with lock:
                with open(fail_log, "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry) + "\n")
                report.failures.append(entry)
            logger.debug("record %s failed: %s", record.id, entry["reason"])
            return
        _atomic_write(output_path(out, record.id), json.dumps(row, ensure_ascii=False) + "\n")
        with lock:
            report.written.append(record.id)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [pool.submit(work, r) for r in todo]
        for i, fut in enumerate(as_completed(futures), 1):
            fut.result()
            if i % 500 == 0:
                logger.info("processed %d/%d", i, len(todo))

    logger.info(
        "done: %d written, %d failed, %d skipped",
        len(report.written), len(report.failures), report.skipped,
    )
    return report


def collect_outputs(records: Iterable[FunctionRecord], out_dir: Path | str) -> list[dict]:
    """Load the per-record outputs that exist, in corpus order."""
    out = Path(out_dir)
    rows = []
    for r in records:
        p = output_path(out, r.id)
        if p.exists():
            rows.append(json.loads(p.read_text(encoding="utf-8")))
    return rows
