"""Binary classification metrics over id-aligned prediction and gold files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import IdMismatch, MalformedLine, MissingField, NonBinaryPrediction


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    acc: float
    pre: float
    rec: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(tp: int, fp: int, fn: int, tn: int) -> EvalMetrics:
    """Acc/Pre/Rec/F1 from confusion counts; any ratio with a zero denominator is 0."""
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("confusion counts must be non-negative")
    acc = _ratio(tp + tn, tp + tn + fn + fp)
    pre = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    f1 = _ratio(2 * pre * rec, pre + rec)
    return EvalMetrics(tp, fp, fn, tn, acc, pre, rec, f1)


def confusion(preds: Mapping[str, int], gold: Mapping[str, int]) -> tuple[int, int, int, int]:
    if set(preds) != set(gold):
        missing = sorted(set(gold) - set(preds))[:5]
        extra = sorted(set(preds) - set(gold))[:5]
        raise IdMismatch(f"ids differ: missing predictions {missing}, unknown ids {extra}")
    tp = fp = fn = tn = 0
    for key, y in gold.items():
        p = preds[key]
        if p not in (0, 1):
            raise NonBinaryPrediction(f"prediction for {key!r} is {p!r}")
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def _binary(value, key: str):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value)
    raise NonBinaryPrediction(f"value for {key!r} is {value!r}")


def read_predictions(path: Path | str) -> dict[str, int]:
    preds: dict[str, int] = {}
    for line_no, obj in _jsonl(path):
        if "id" not in obj:
            raise MissingField(line_no, "id")
        if "pred" not in obj:
            raise MissingField(line_no, "pred")
        key = str(obj["id"])
        preds[key] = _binary(obj["pred"], key)
    return preds


def _jsonl(path: Path | str) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLine(line_no, str(e)) from None
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "not a JSON object")
            yield line_no, obj


def evaluate(pred_file: Path | str, gold_file: Path | str) -> EvalMetrics:
    """Score a ``{id, pred}`` JSONL file against a labelled corpus JSONL file."""
    from .corpus import ingest

    gold = {r.id: r.label for r in ingest(gold_file)}
    return compute_metrics(*confusion(read_predictions(pred_file), gold))
