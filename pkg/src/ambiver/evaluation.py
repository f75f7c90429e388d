"""Benchmark loading, annotation consensus and metrics.

Ambiguous is the positive class throughout. Precision, recall and F1 are
``0.0`` when their denominator vanishes, and the report lists every such
metric under ``undefined``.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn import metrics

from .exceptions import (
    DuplicatePredictionError,
    IoFailureError,
    MalformedTripleError,
    MissingFileError,
    SchemaViolationError,
    UnknownIdError,
)
from .reasoning import AMBIGUITY_TYPES, Label, Verdict

logger = logging.getLogger(__name__)

INSTRUCTIONS_FILE = "instructions.jsonl"
SPLITS = ("train", "test")
UNAMBIGUOUS_BUCKET = "Unambiguous"
TYPE_BUCKETS = AMBIGUITY_TYPES + (UNAMBIGUOUS_BUCKET,)
LENGTH_BUCKETS = ("<=5", "6-10", ">10")

TABLE_COLUMNS = (
    "Acc.",
    "Prec.",
    "Rec.",
    "F1",
    "Instance",
    "Attribute",
    "Spatial",
    "Action",
    "Unamb.",
)

# Published (Acc., Prec., Rec., F1) rows, in percent, used to check the F1 arithmetic.
REFERENCE_ROWS: Dict[str, Tuple[float, float, float, float]] = {
    "3D-LLM": (49.16, 56.93, 13.28, 21.54),
    "Chat-Scene": (47.73, 50.75, 17.58, 26.11),
    "Video-3D LLM": (50.10, 60.65, 14.31, 23.16),
    "LSceneLLM": (48.78, 58.04, 9.07, 15.70),
    "LLaVA-3D": (64.21, 63.93, 73.17, 68.24),
    "AmbiVer": (81.29, 84.23, 79.23, 81.65),
}

PredictionKey = Union[str, Tuple[str, str]]


def _subtype(value: Any) -> Optional[str]:
    if value in (None, ""):
        return None
    for name in AMBIGUITY_TYPES:
        if isinstance(value, str) and value.strip().lower() == name.lower():
            return name
    raise ValueError(f"Unknown ambiguity subtype: {value!r}")


@dataclass(frozen=True)
class LabeledInstruction:
    """One benchmark instruction with its gold label."""

    scene_id: str
    instruction_id: str
    text: str
    label: Label
    subtype: Optional[str] = None
    split: str = "test"

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", Label.from_value(self.label))
        object.__setattr__(self, "subtype", _subtype(self.subtype))
        if self.split not in SPLITS:
            raise ValueError(
                f"split must be one of {', '.join(SPLITS)}, got {self.split!r}"
            )
        if not self.text.strip():
            raise ValueError("instruction text is empty")
        if (self.label is Label.AMBIGUOUS) != (self.subtype is not None):
            raise ValueError(
                "a subtype is required for ambiguous items and forbidden otherwise"
            )

    @property
    def key(self) -> Tuple[str, str]:
        return (self.scene_id, self.instruction_id)

    @property
    def bucket(self) -> str:
        return self.subtype if self.subtype is not None else UNAMBIGUOUS_BUCKET

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "scene_id": self.scene_id,
            "instruction_id": self.instruction_id,
            "text": self.text,
            "label": self.label.value,
        }
        if self.subtype is not None:
            data["subtype"] = self.subtype
        data["split"] = self.split
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LabeledInstruction":
        required = ("scene_id", "instruction_id", "text", "label")
        missing = [k for k in required if k not in data]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        return cls(
            scene_id=str(data["scene_id"]),
            instruction_id=str(data["instruction_id"]),
            text=str(data["text"]),
            label=data["label"],
            subtype=data.get("subtype"),
            split=data.get("split", "test"),
        )


@dataclass(frozen=True)
class AnnotationTriple:
    """Three independent annotations of one instruction."""

    instruction_id: str
    labels: Tuple[Label, ...]
    subtypes: Tuple[str, ...] = ()
    scene_id: str = ""
    text: str = ""
    split: str = "test"

    def __post_init__(self) -> None:
        if len(self.labels) != 3:
            raise MalformedTripleError(
                f"{self.instruction_id}: expected 3 labels, got {len(self.labels)}"
            )
        try:
            labels = tuple(Label.from_value(v) for v in self.labels)
            subtypes = tuple(_subtype(v) for v in self.subtypes)
        except ValueError as e:
            raise MalformedTripleError(f"{self.instruction_id}: {e}")
        if any(s is None for s in subtypes):
            raise MalformedTripleError(f"{self.instruction_id}: empty subtype vote")
        votes = sum(label is Label.AMBIGUOUS for label in labels)
        if len(subtypes) > votes:
            raise MalformedTripleError(
                f"{self.instruction_id}: {len(subtypes)} subtype votes "
                f"from {votes} ambiguous labels"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subtypes", subtypes)


def consensus_filter(
    triples: Iterable[AnnotationTriple],
) -> Tuple[List[LabeledInstruction], List[str]]:
    """Keep unanimously labeled instructions with a majority subtype.

    Ambiguous items need a subtype chosen by at least two annotators; without
    one they are discarded along with every split-vote item.

    Returns:
        tuple: ``(kept, discarded_instruction_ids)`` in input order.
    """

    kept: List[LabeledInstruction] = []
    discarded: List[str] = []
    for triple in triples:
        if len(set(triple.labels)) != 1:
            discarded.append(triple.instruction_id)
            continue

        label = triple.labels[0]
        subtype = None
        if label is Label.AMBIGUOUS:
            votes = Counter(triple.subtypes)
            majority = [t for t, count in votes.items() if count >= 2]
            if not majority:
                discarded.append(triple.instruction_id)
                continue
            subtype = majority[0]

        kept.append(
            LabeledInstruction(
                scene_id=triple.scene_id,
                instruction_id=triple.instruction_id,
                text=triple.text or triple.instruction_id,
                label=label,
                subtype=subtype,
                split=triple.split,
            )
        )

    logger.debug("consensus kept %d, discarded %d", len(kept), len(discarded))
    return kept, discarded


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of ``precision`` and ``recall``; 0 when both are 0."""
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def length_bucket(text: str) -> str:
    words = len(text.split())
    if words <= 5:
        return LENGTH_BUCKETS[0]
    if words <= 10:
        return LENGTH_BUCKETS[1]
    return LENGTH_BUCKETS[2]


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts, overall metrics and per-bucket accuracies."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1_positive: float = 0.0
    f1_macro: float = 0.0
    per_type_accuracy: Dict[str, float] = field(default_factory=dict)
    per_type_counts: Dict[str, int] = field(default_factory=dict)
    subtype_accuracy: Dict[str, float] = field(default_factory=dict)
    length_accuracy: Dict[str, float] = field(default_factory=dict)
    undefined: Tuple[str, ...] = ()
    degraded: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def table_row(self) -> Dict[str, Optional[float]]:
        """Percentages rounded to 2 decimals in column order, ``None`` if undefined."""

        values = {
            "Acc.": ("accuracy", self.accuracy),
            "Prec.": ("precision", self.precision),
            "Rec.": ("recall", self.recall),
            "F1": ("f1_positive", self.f1_positive),
        }
        for bucket in TYPE_BUCKETS:
            column = "Unamb." if bucket == UNAMBIGUOUS_BUCKET else bucket
            value = self.per_type_accuracy.get(bucket, 0.0)
            values[column] = (f"per_type_accuracy.{bucket}", value)

        return {
            column: None if name in self.undefined else round(100.0 * value, 2)
            for column, (name, value) in values.items()
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1_positive": self.f1_positive,
            "f1_macro": self.f1_macro,
            "per_type_accuracy": dict(self.per_type_accuracy),
            "per_type_counts": dict(self.per_type_counts),
            "subtype_accuracy": dict(self.subtype_accuracy),
            "length_accuracy": dict(self.length_accuracy),
            "undefined": list(self.undefined),
            "degraded": self.degraded,
            "table": self.table_row(),
        }


def _masked_accuracy(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    mask: np.ndarray,
    name: str,
    undefined: List[str],
) -> float:
    if not mask.any():
        undefined.append(name)
        return 0.0
    return float(metrics.accuracy_score(y_true[mask], y_pred[mask]))


class _TruthIndex:
    def __init__(self, truth: Sequence[LabeledInstruction]) -> None:
        self.by_key: Dict[Tuple[str, str], LabeledInstruction] = {}
        self.by_id: Dict[str, LabeledInstruction] = {}
        self.shared_ids = set()
        for item in truth:
            self.by_key[item.key] = item
            previous = self.by_id.get(item.instruction_id)
            if previous is not None and previous.key != item.key:
                self.shared_ids.add(item.instruction_id)
            self.by_id[item.instruction_id] = item

    def lookup(self, key: PredictionKey) -> LabeledInstruction:
        if isinstance(key, tuple):
            item = self.by_key.get((str(key[0]), str(key[1])))
        elif key in self.shared_ids:
            raise UnknownIdError(
                f"Instruction id {key!r} occurs in several scenes; "
                "qualify it with the scene id"
            )
        else:
            item = self.by_id.get(key)
        if item is None:
            raise UnknownIdError(f"Prediction for unknown instruction {key!r}")
        return item


def compute_metrics(
    predictions: Sequence[Tuple[PredictionKey, Verdict]],
    truth: Sequence[LabeledInstruction],
) -> MetricsReport:
    """Score predictions against gold labels.

    The evaluation set is the set of predicted instructions. A prediction key
    is an ``instruction_id`` or a ``(scene_id, instruction_id)`` pair.

    Raises:
        UnknownIdError: If a key is not in ``truth``.
        DuplicatePredictionError: If an instruction is predicted twice.
    """

    index = _TruthIndex(truth)
    seen = set()
    pairs: List[Tuple[LabeledInstruction, Verdict]] = []
    for key, verdict in predictions:
        item = index.lookup(key)
        if item.key in seen:
            raise DuplicatePredictionError(
                f"Instruction {key!r} predicted more than once"
            )
        seen.add(item.key)
        pairs.append((item, verdict))

    y_true = np.array([item.label is Label.AMBIGUOUS for item, _ in pairs], dtype=int)
    y_pred = np.array([verdict.is_ambiguous for _, verdict in pairs], dtype=int)
    buckets = np.array([item.bucket for item, _ in pairs], dtype=object)
    lengths = np.array([length_bucket(item.text) for item, _ in pairs], dtype=object)
    subtype_hit = np.array(
        [item.subtype is not None and item.subtype in v.types for item, v in pairs],
        dtype=int,
    )

    undefined: List[str] = []
    if pairs:
        cm = metrics.confusion_matrix(y_true, y_pred, labels=[0, 1])
        tn, fp, fn, tp = (int(c) for c in cm.ravel())
    else:
        tn = fp = fn = tp = 0

    def score(fn_name: str, name: str, defined: bool, **kwargs: Any) -> float:
        if not defined:
            undefined.append(name)
        if not pairs:
            return 0.0
        scorer = getattr(metrics, fn_name)
        return float(scorer(y_true, y_pred, labels=[0, 1], zero_division=0, **kwargs))

    if pairs:
        accuracy = float(metrics.accuracy_score(y_true, y_pred))
    else:
        undefined.append("accuracy")
        accuracy = 0.0
    precision = score("precision_score", "precision", tp + fp > 0)
    recall = score("recall_score", "recall", tp + fn > 0)
    score("precision_score", "negative_precision", tn + fn > 0, pos_label=0)
    score("recall_score", "negative_recall", tn + fp > 0, pos_label=0)
    f1_positive = score("f1_score", "f1_positive", tp > 0)
    score("f1_score", "f1_negative", tn > 0, pos_label=0)
    if tp == 0 and tn == 0:
        undefined.append("f1_macro")
    f1_macro = 0.0
    if pairs:
        f1_macro = float(
            metrics.f1_score(
                y_true, y_pred, labels=[0, 1], average="macro", zero_division=0
            )
        )

    per_type = {
        b: _masked_accuracy(
            y_true, y_pred, buckets == b, f"per_type_accuracy.{b}", undefined
        )
        for b in TYPE_BUCKETS
    }
    ones = np.ones_like(subtype_hit)
    subtype_accuracy = {
        t: _masked_accuracy(
            ones, subtype_hit, buckets == t, f"subtype_accuracy.{t}", undefined
        )
        for t in AMBIGUITY_TYPES
    }
    length_accuracy = {
        b: _masked_accuracy(
            y_true, y_pred, lengths == b, f"length_accuracy.{b}", undefined
        )
        for b in LENGTH_BUCKETS
    }

    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1_positive=f1_positive,
        f1_macro=f1_macro,
        per_type_accuracy=per_type,
        per_type_counts={b: int(np.sum(buckets == b)) for b in TYPE_BUCKETS},
        subtype_accuracy=subtype_accuracy,
        length_accuracy=length_accuracy,
        undefined=tuple(undefined),
        degraded=sum(v.degraded for _, v in pairs),
    )


def report_from_dict(data: Mapping[str, Any]) -> MetricsReport:
    """Rebuild a report from :meth:`MetricsReport.to_dict` output."""

    return MetricsReport(
        tp=int(data["tp"]),
        fp=int(data["fp"]),
        tn=int(data["tn"]),
        fn=int(data["fn"]),
        accuracy=float(data["accuracy"]),
        precision=float(data["precision"]),
        recall=float(data["recall"]),
        f1_positive=float(data["f1_positive"]),
        f1_macro=float(data["f1_macro"]),
        per_type_accuracy=dict(data.get("per_type_accuracy", {})),
        per_type_counts=dict(data.get("per_type_counts", {})),
        subtype_accuracy=dict(data.get("subtype_accuracy", {})),
        length_accuracy=dict(data.get("length_accuracy", {})),
        undefined=tuple(data.get("undefined", ())),
        degraded=int(data.get("degraded", 0)),
    )


def format_table(report: MetricsReport, model: str = "AmbiVer") -> str:
    """Aligned plain-text table in the published column order."""

    row = report.table_row()
    cells = [("n/a" if row[c] is None else f"{row[c]:.2f}") for c in TABLE_COLUMNS]
    name_width = max(len("Model"), len(model))
    widths = [max(len(c), len(v)) for c, v in zip(TABLE_COLUMNS, cells)]

    columns = [c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths)]
    header = "  ".join(["Model".ljust(name_width)] + columns)
    row = [v.rjust(w) for v, w in zip(cells, widths)]
    values = "  ".join([model.ljust(name_width)] + row)
    lines = [f"n={report.n}", header, values]
    if report.undefined:
        lines.append(f"undefined: {', '.join(report.undefined)}")
    return "\n".join(lines) + "\n"


def emit_report(
    report: MetricsReport,
    format: str,
    path: Union[str, Path],
    model: str = "AmbiVer",
) -> Path:
    """Write ``report`` as ``json`` or ``table`` to ``path``.

    Raises:
        IoFailureError: If the file cannot be written.
    """

    if format == "json":
        content = json.dumps(report.to_dict(), indent=2) + "\n"
    elif format == "table":
        content = format_table(report, model)
    else:
        raise ValueError(f"format must be 'json' or 'table', got {format!r}")

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    except OSError as e:
        raise IoFailureError(f"Failed to write report {path}: {e}")
    return path


def load_benchmark(
    path: Union[str, Path], split: Optional[str] = None
) -> List[LabeledInstruction]:
    """Load ``instructions.jsonl`` from a benchmark directory.

    An optional first line ``{"header": {"counts": {"train": n, "test": m}}}``
    declares split sizes, which are checked against the records.

    Args:
        path: Benchmark directory (or the JSONL file itself).
        split: Keep only this split.

    Raises:
        MissingFileError: If the instruction file does not exist.
        SchemaViolationError: On a malformed record, with its line number.
    """

    path = Path(path)
    file = path / INSTRUCTIONS_FILE if path.is_dir() else path
    if not file.exists():
        raise MissingFileError(f"Benchmark instructions not found: {file}")
    if split is not None and split not in SPLITS:
        raise ValueError(f"split must be one of {', '.join(SPLITS)}, got {split!r}")

    items: List[LabeledInstruction] = []
    declared: Optional[Dict[str, int]] = None
    keys = set()
    with file.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise ValueError("record is not a JSON object")
                if "header" in data and not items and declared is None:
                    header = data["header"].get("counts", {})
                    declared = {str(k): int(v) for k, v in header.items()}
                    continue
                item = LabeledInstruction.from_dict(data)
            except (ValueError, TypeError, AttributeError) as e:
                raise SchemaViolationError(f"{file}:{lineno}: {e}")
            if item.key in keys:
                raise SchemaViolationError(
                    f"{file}:{lineno}: duplicate instruction {item.key}"
                )
            keys.add(item.key)
            items.append(item)

    if declared is not None:
        counts = Counter(item.split for item in items)
        for name, expected in declared.items():
            if counts.get(name, 0) != expected:
                raise SchemaViolationError(
                    f"{file}: header declares {expected} {name} records, "
                    f"found {counts.get(name, 0)}"
                )

    if split is not None:
        items = [item for item in items if item.split == split]
    logger.info("loaded %d instructions from %s", len(items), file)
    return items


def save_benchmark(items: Sequence[LabeledInstruction], path: Union[str, Path]) -> Path:
    """Write ``instructions.jsonl`` (with a split-count header) into ``path``."""

    path = Path(path)
    file = path / INSTRUCTIONS_FILE
    counts = Counter(item.split for item in items)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with file.open("w", encoding="utf-8") as fh:
            header = {"counts": {s: counts.get(s, 0) for s in SPLITS}}
            fh.write(json.dumps({"header": header}) + "\n")
            for item in items:
                fh.write(json.dumps(item.to_dict()) + "\n")
    except OSError as e:
        raise IoFailureError(f"Failed to write benchmark {file}: {e}")
    return file


__all__ = [
    "AnnotationTriple",
    "INSTRUCTIONS_FILE",
    "LabeledInstruction",
    "MetricsReport",
    "REFERENCE_ROWS",
    "TABLE_COLUMNS",
    "compute_metrics",
    "consensus_filter",
    "emit_report",
    "f1_score",
    "format_table",
    "length_bucket",
    "load_benchmark",
    "report_from_dict",
    "save_benchmark",
]
