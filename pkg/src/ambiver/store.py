"""Append-only result store.

Layout under the output directory::

    results.jsonl                  one line per written record, in write order
    responses.jsonl                raw backend responses keyed by prompt hash
    records/<scene>/<id>.json      latest record per instruction

Per-record files are written to a temporary name and renamed into place, so a
reader never sees a partial record. ``responses.jsonl`` doubles as the input
of :class:`ambiver.backends.ReplayBackend`.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .backends import RESPONSES_FILE
from .exceptions import IoFailureError, MissingFileError
from .reasoning import Verdict

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
RECORDS_DIR = "records"

_UNSAFE_RE = re.compile(r"[^A-Za-z0-9._-]")


def _safe_name(value: str) -> str:
    return _UNSAFE_RE.sub("_", value) or "_"


@dataclass(frozen=True)
class ResultRecord:
    """Outcome of one instruction."""

    scene_id: str
    instruction_id: str
    verdict: Verdict
    prompt_hash: str = ""
    template_digest: str = ""
    raw_response_ref: Optional[str] = None
    query: str = ""
    candidates: Tuple[Dict[str, Any], ...] = ()
    error: Optional[str] = None

    @property
    def degraded(self) -> bool:
        return self.verdict.degraded

    @property
    def key(self) -> Tuple[str, str]:
        return (self.scene_id, self.instruction_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "instruction_id": self.instruction_id,
            "verdict": self.verdict.to_dict(),
            "raw_response_ref": self.raw_response_ref,
            "prompt_hash": self.prompt_hash,
            "template_digest": self.template_digest,
            "degraded": self.degraded,
            "query": self.query,
            "candidates": list(self.candidates),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ResultRecord":
        return cls(
            scene_id=data["scene_id"],
            instruction_id=data["instruction_id"],
            verdict=Verdict.from_dict(data["verdict"]),
            prompt_hash=data.get("prompt_hash", ""),
            template_digest=data.get("template_digest", ""),
            raw_response_ref=data.get("raw_response_ref"),
            query=data.get("query", ""),
            candidates=tuple(data.get("candidates", ())),
            error=data.get("error"),
        )


class ResultStore:
    """Thread-safe writer and reader for one output directory."""

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()

    @property
    def results_path(self) -> Path:
        return self.root / RESULTS_FILE

    @property
    def responses_path(self) -> Path:
        return self.root / RESPONSES_FILE

    def record_path(self, scene_id: str, instruction_id: str) -> Path:
        scene_dir = self.root / RECORDS_DIR / _safe_name(scene_id)
        return scene_dir / f"{_safe_name(instruction_id)}.json"

    def has(self, scene_id: str, instruction_id: str) -> bool:
        return self.record_path(scene_id, instruction_id).exists()

    def load(self, scene_id: str, instruction_id: str) -> ResultRecord:
        path = self.record_path(scene_id, instruction_id)
        if not path.exists():
            raise MissingFileError(f"No result for {scene_id}/{instruction_id}")
        with path.open("r", encoding="utf-8") as fh:
            return ResultRecord.from_dict(json.load(fh))

    def _append(self, path: Path, payload: Dict[str, Any]) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(payload) + "\n")

    def write(
        self, record: ResultRecord, raw_response: Optional[str] = None
    ) -> ResultRecord:
        """Persist ``record`` and, when given, the raw response it came from.

        Returns the record with ``raw_response_ref`` filled in.

        Raises:
            IoFailureError: If anything cannot be written.
        """

        if raw_response is not None and record.prompt_hash:
            ref = f"{RESPONSES_FILE}#{record.prompt_hash}"
            record = replace(record, raw_response_ref=ref)

        path = self.record_path(record.scene_id, record.instruction_id)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            text = json.dumps(record.to_dict(), indent=2) + "\n"
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
            with self._lock:
                if raw_response is not None and record.prompt_hash:
                    self._append(
                        self.responses_path,
                        {"prompt_hash": record.prompt_hash, "response": raw_response},
                    )
                self._append(self.results_path, record.to_dict())
        except OSError as e:
            raise IoFailureError(f"Failed to write result {path}: {e}")
        return record

    def records(self) -> List[ResultRecord]:
        """Latest record of every instruction, ordered by scene and id."""

        directory = self.root / RECORDS_DIR
        if not directory.is_dir():
            return []
        results = []
        for path in sorted(directory.glob("*/*.json")):
            with path.open("r", encoding="utf-8") as fh:
                results.append(ResultRecord.from_dict(json.load(fh)))
        return results


__all__ = ["RECORDS_DIR", "RESULTS_FILE", "ResultRecord", "ResultStore"]
