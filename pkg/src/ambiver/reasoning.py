"""Ambiguity adjudication: verdicts, response parsing and backend driving."""

from __future__ import annotations

import asyncio
import functools
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .backends import VlmBackend
from .dossier import Dossier, PromptTemplate, prompt_hash, render_prompt
from .exceptions import BackendUnavailableError, UnparseableVerdictError

logger = logging.getLogger(__name__)

AMBIGUITY_TYPES = ("Instance", "Attribute", "Spatial", "Action")

# Default type when a response only says "ambiguous".
FALLBACK_TYPE = "Instance"

_FENCE_RE = re.compile(r"```[a-zA-Z]*")
_BINARY_RE = re.compile(r"^\W*([01])\W*$")


class Label(str, Enum):
    AMBIGUOUS = "Ambiguous"
    UNAMBIGUOUS = "Unambiguous"

    @classmethod
    def from_value(cls, value: Any) -> "Label":
        """Accept either casing of the label names and 0/1."""

        if isinstance(value, Label):
            return value
        if isinstance(value, bool):
            return cls.AMBIGUOUS if value else cls.UNAMBIGUOUS
        if isinstance(value, int) and value in (0, 1):
            return cls.AMBIGUOUS if value == 1 else cls.UNAMBIGUOUS
        if isinstance(value, str):
            normalized = value.strip().lower()
            for label in cls:
                if label.value.lower() == normalized:
                    return label
            if normalized in ("0", "1"):
                return cls.AMBIGUOUS if normalized == "1" else cls.UNAMBIGUOUS
        raise ValueError(f"Unknown label: {value!r}")


def _canonical_type(value: Any) -> Optional[str]:
    if not isinstance(value, str):
        return None
    normalized = value.strip().lower()
    for name in AMBIGUITY_TYPES:
        if name.lower() == normalized:
            return name
    return None


def _ordered_types(types: Sequence[str]) -> Tuple[str, ...]:
    return tuple(t for t in AMBIGUITY_TYPES if t in set(types))


@dataclass(frozen=True)
class Verdict:
    """The adjudicator's four-field answer plus parse bookkeeping."""

    label: Label
    types: Tuple[str, ...] = ()
    explanation: str = ""
    clarification: Optional[str] = None
    degraded: bool = False
    warnings: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", Label.from_value(self.label))
        unknown = [t for t in self.types if t not in AMBIGUITY_TYPES]
        if unknown:
            names = ", ".join(map(str, unknown))
            raise ValueError(f"Unknown ambiguity type(s): {names}")
        object.__setattr__(self, "types", _ordered_types(self.types))

        if self.label is Label.UNAMBIGUOUS:
            if self.types:
                raise ValueError("An unambiguous verdict cannot carry ambiguity types")
            if self.clarification is not None:
                raise ValueError("Only ambiguous verdicts carry a clarification")
        elif not self.types:
            raise ValueError("An ambiguous verdict needs at least one ambiguity type")

    @property
    def is_ambiguous(self) -> bool:
        return self.label is Label.AMBIGUOUS

    @classmethod
    def ambiguous(
        cls,
        types: Sequence[str] = (FALLBACK_TYPE,),
        explanation: str = "",
        **kwargs: Any,
    ) -> "Verdict":
        return cls(Label.AMBIGUOUS, tuple(types), explanation, **kwargs)

    @classmethod
    def unambiguous(cls, explanation: str = "", **kwargs: Any) -> "Verdict":
        return cls(Label.UNAMBIGUOUS, (), explanation, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label.value,
            "types": list(self.types),
            "explanation": self.explanation,
            "clarification": self.clarification,
            "degraded": self.degraded,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Verdict":
        return cls(
            label=Label.from_value(data["label"]),
            types=tuple(data.get("types", ())),
            explanation=data.get("explanation", ""),
            clarification=data.get("clarification"),
            degraded=bool(data.get("degraded", False)),
            warnings=tuple(data.get("warnings", ())),
        )


def _first_json_object(text: str) -> Optional[Dict[str, Any]]:
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(value, dict):
            return value
        start = text.find("{", start + 1)
    return None


def _from_object(obj: Dict[str, Any]) -> Optional[Verdict]:
    try:
        label = Label.from_value(obj.get("label"))
    except ValueError:
        return None

    warnings: List[str] = []
    raw_types = obj.get("types") or []
    if isinstance(raw_types, str):
        raw_types = [raw_types]
    types = []
    for value in raw_types:
        name = _canonical_type(value)
        if name is None:
            warnings.append(f"dropped unknown type {value!r}")
        else:
            types.append(name)

    explanation = obj.get("explanation")
    explanation = "" if explanation is None else str(explanation)
    clarification = obj.get("clarification")
    if clarification in (None, ""):
        clarification = None
    else:
        clarification = str(clarification).strip()

    degraded = False
    if label is Label.UNAMBIGUOUS:
        if types:
            warnings.append("cleared types on an unambiguous verdict")
            types = []
        if clarification is not None:
            warnings.append("dropped clarification on an unambiguous verdict")
            clarification = None
    elif not types:
        warnings.append(f"ambiguous verdict without types; assumed {FALLBACK_TYPE}")
        types = [FALLBACK_TYPE]
        degraded = True

    return Verdict(
        label, tuple(types), explanation, clarification, degraded, tuple(warnings)
    )


def parse_verdict(raw: str) -> Verdict:
    """Parse a backend response into a :class:`Verdict`.

    The first JSON object in the response wins, with code fences stripped
    first. Without usable JSON the response is searched for "unambiguous",
    then "ambiguous", and finally accepted as a bare ``0``/``1``; those paths
    set ``degraded``.

    Raises:
        UnparseableVerdictError: If none of the above applies.
    """

    if raw is None or not raw.strip():
        raise UnparseableVerdictError("Backend response is empty")

    text = _FENCE_RE.sub("", raw)
    obj = _first_json_object(text)
    if obj is not None:
        verdict = _from_object(obj)
        if verdict is not None:
            if verdict.warnings:
                warnings = "; ".join(verdict.warnings)
                logger.warning("verdict parse warnings: %s", warnings)
            return verdict

    lowered = text.lower()
    explanation = text.strip()
    if "unambiguous" in lowered:
        logger.warning("no JSON verdict; fell back to keyword 'unambiguous'")
        return Verdict.unambiguous(
            explanation, degraded=True, warnings=("keyword fallback",)
        )
    if "ambiguous" in lowered:
        logger.warning("no JSON verdict; fell back to keyword 'ambiguous'")
        return Verdict.ambiguous(
            (FALLBACK_TYPE,), explanation, degraded=True, warnings=("keyword fallback",)
        )

    binary = _BINARY_RE.match(text.strip())
    if binary:
        logger.warning("no JSON verdict; read a bare %s answer", binary.group(1))
        if binary.group(1) == "1":
            return Verdict.ambiguous(
                (FALLBACK_TYPE,), "", degraded=True, warnings=("binary answer",)
            )
        return Verdict.unambiguous("", degraded=True, warnings=("binary answer",))

    raise UnparseableVerdictError(f"Cannot read a verdict from response: {raw[:80]!r}")


@dataclass(frozen=True)
class Adjudication:
    """A verdict with the exchange that produced it."""

    verdict: Verdict
    raw_response: str
    prompt_hash: str
    template_digest: str
    attempts: int = 1


def run_adjudication(
    d: Dossier,
    backend: VlmBackend,
    template: Optional[PromptTemplate] = None,
    *,
    temperature: float = 0.0,
    max_retries: int = 2,
    include_bev: bool = True,
    include_crops: bool = True,
) -> Adjudication:
    """Render, query and parse, keeping the raw response and prompt hash.

    Transport failures are retried up to ``max_retries`` times.

    Raises:
        BackendUnavailableError: If every attempt fails.
        UnparseableVerdictError: If the response cannot be read.
    """

    template = template or PromptTemplate.load()
    text, images = render_prompt(
        d, template, include_bev=include_bev, include_crops=include_crops
    )
    key = prompt_hash(text)

    last_error: Optional[BackendUnavailableError] = None
    for attempt in range(1, max_retries + 2):
        try:
            raw = backend.complete(text, images, temperature)
        except BackendUnavailableError as e:
            last_error = e
            if attempt <= max_retries:
                logger.warning(
                    "backend %s failed (attempt %d/%d): %s",
                    backend.name,
                    attempt,
                    max_retries + 1,
                    e,
                )
            continue
        return Adjudication(parse_verdict(raw), raw, key, template.digest, attempt)

    raise BackendUnavailableError(
        f"Backend {backend.name} unavailable after {max_retries + 1} attempts: "
        f"{last_error}"
    )


def adjudicate(
    d: Dossier,
    backend: VlmBackend,
    template: Optional[PromptTemplate] = None,
    **kwargs: Any,
) -> Verdict:
    """Adjudicate one dossier and return only the verdict.

    Keyword arguments are those of :func:`run_adjudication`.
    """
    return run_adjudication(d, backend, template, **kwargs).verdict


class AsyncAdjudicator:
    """Runs adjudications from asyncio code, at most ``inflight_limit`` at a time.

    Example::

        async with AsyncAdjudicator(MockBackend(), inflight_limit=4) as adjudicator:
            results = await adjudicator.adjudicate_many(dossiers)
    """

    def __init__(
        self,
        backend: VlmBackend,
        template: Optional[PromptTemplate] = None,
        inflight_limit: int = 4,
        **kwargs: Any,
    ) -> None:
        if inflight_limit < 1:
            raise ValueError("inflight_limit must be at least 1")
        self.backend = backend
        self.template = template or PromptTemplate.load()
        self.inflight_limit = inflight_limit
        self._kwargs = kwargs
        self._semaphore: Optional[asyncio.Semaphore] = None

    async def __aenter__(self) -> "AsyncAdjudicator":
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        loop = asyncio.get_running_loop()
        await loop.run_in_executor(None, self.backend.close)

    async def adjudicate(self, d: Dossier) -> Adjudication:
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.inflight_limit)
        loop = asyncio.get_running_loop()
        call = functools.partial(
            run_adjudication, d, self.backend, self.template, **self._kwargs
        )
        async with self._semaphore:
            return await loop.run_in_executor(None, call)

    async def adjudicate_many(self, dossiers: Sequence[Dossier]) -> List[Adjudication]:
        """Adjudicate all dossiers concurrently; results keep input order."""
        return list(await asyncio.gather(*(self.adjudicate(d) for d in dossiers)))


__all__ = [
    "AMBIGUITY_TYPES",
    "Adjudication",
    "AsyncAdjudicator",
    "FALLBACK_TYPE",
    "Label",
    "Verdict",
    "adjudicate",
    "parse_verdict",
    "run_adjudication",
]
