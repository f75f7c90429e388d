"""Instruction decoupling into action, target, attributes and relations.

The default backend is a deterministic rule parser driven by plain-text
lexicons (see ``ambiver/lexicons``). It tokenizes the instruction, finds the
imperative verb, takes the head of the following noun phrase as the grounding
query and collects adjectives and spatial relations around it::

    from ambiver import parse_instruction

    parsed = parse_instruction("Please pick up the tallest object on the table")
    parsed.action      # "pick"
    parsed.target      # "object"
    parsed.attributes  # ("tallest",)
    parsed.relations   # (("on", "table"),)

Lexicon files hold one entry per line, ``#`` starts a comment and a line of
the form ``variant = canonical`` folds a variant into a canonical entry.
"""

from __future__ import annotations

import functools
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from .config import AmbiVerConfig
from .exceptions import EmptyInstructionError, MissingFileError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

# (suffix, replacement) pairs tried in order when a form is not in a lexicon
_SUFFIXES: Tuple[Tuple[str, str], ...] = (
    ("ies", "y"),
    ("es", ""),
    ("s", ""),
    ("ing", ""),
    ("ing", "e"),
    ("ed", ""),
    ("ed", "e"),
    ("d", ""),
)

LEXICON_FILES = (
    "verbs",
    "irregular",
    "adjectives",
    "subjective",
    "prepositions",
    "observer",
    "vague_verbs",
    "politeness",
    "stopwords",
    "conjunctions",
)


def _read_entries(path: Path) -> Dict[str, str]:
    """Parse a lexicon file into ``{entry: canonical}``."""

    entries: Dict[str, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for raw_line in fh:
            line = raw_line.split("#", 1)[0].strip().lower()
            if not line:
                continue
            if "=" in line:
                variant, canonical = [part.strip() for part in line.split("=", 1)]
            else:
                variant = canonical = line
            entries[" ".join(variant.split())] = " ".join(canonical.split())
    return entries


@dataclass(frozen=True)
class ParserLexicon:
    """Word lists the rule parser and the mock adjudicator work from."""

    verbs: FrozenSet[str] = frozenset()
    irregular: Tuple[Tuple[str, str], ...] = ()
    adjectives: FrozenSet[str] = frozenset()
    subjective: FrozenSet[str] = frozenset()
    prepositions: Tuple[Tuple[Tuple[str, ...], str], ...] = ()
    observer_dependent: FrozenSet[str] = frozenset()
    vague_verbs: FrozenSet[str] = frozenset()
    politeness: FrozenSet[str] = frozenset()
    stopwords: FrozenSet[str] = frozenset()
    conjunctions: FrozenSet[str] = frozenset()

    @classmethod
    def from_directory(cls, directory: Union[str, Path]) -> "ParserLexicon":
        """Load every known lexicon file from ``directory``.

        Missing files leave the matching list empty; a missing directory is an
        error.
        """

        directory = Path(directory)
        if not directory.is_dir():
            raise MissingFileError(f"Lexicon directory not found: {directory}")

        tables: Dict[str, Dict[str, str]] = {}
        for name in LEXICON_FILES:
            path = directory / f"{name}.txt"
            tables[name] = _read_entries(path) if path.exists() else {}

        prepositions = sorted(
            (
                (tuple(variant.split()), canonical)
                for variant, canonical in tables["prepositions"].items()
            ),
            key=lambda item: (-len(item[0]), item[0]),
        )

        return cls(
            verbs=frozenset(tables["verbs"].values()),
            irregular=tuple(sorted(tables["irregular"].items())),
            adjectives=frozenset(tables["adjectives"].values()),
            subjective=frozenset(tables["subjective"].values()),
            prepositions=tuple(prepositions),
            observer_dependent=frozenset(tables["observer"].values()),
            vague_verbs=frozenset(tables["vague_verbs"].values()),
            politeness=frozenset(tables["politeness"]),
            stopwords=frozenset(tables["stopwords"]),
            conjunctions=frozenset(tables["conjunctions"]),
        )

    @functools.cached_property
    def _irregular_map(self) -> Dict[str, str]:
        return dict(self.irregular)

    def lemmatize(self, token: str, vocabulary: FrozenSet[str]) -> str:
        """Reduce ``token`` to an entry of ``vocabulary`` by suffix stripping."""

        irregular = self._irregular_map.get(token)
        if irregular is not None:
            return irregular
        if token in vocabulary:
            return token

        for suffix, replacement in _SUFFIXES:
            if not token.endswith(suffix) or len(token) <= len(suffix) + 1:
                continue
            stem = token[: -len(suffix)]
            undoubled = stem[:-1] if stem[-1:] == stem[-2:-1] else None
            for candidate in (stem + replacement, undoubled):
                if candidate and candidate in vocabulary:
                    return candidate
        return token

    def match_preposition(
        self, tokens: Sequence[str], start: int
    ) -> Optional[Tuple[int, str]]:
        """Longest preposition starting at ``start`` as ``(length, canonical)``."""

        for words, canonical in self.prepositions:
            if tuple(tokens[start : start + len(words)]) == words:
                return len(words), canonical
        return None

    def is_attribute(self, token: str) -> bool:
        if token in self.adjectives:
            return True
        for suffix in ("est", "er"):
            if len(token) > len(suffix) + 2 and token.endswith(suffix):
                return self.lemmatize_graded(token, suffix) in self.adjectives
        return False

    def lemmatize_graded(self, token: str, suffix: str) -> str:
        """Base adjective of a comparative or superlative, else ``token``.

        "taller" -> "tall", "largest" -> "large", "bigger" -> "big",
        "dirtiest" -> "dirty". "chest" stays "chest".
        """

        stem = token[: -len(suffix)]
        candidates = (stem, stem + "e", stem[:-1], stem[:-1] + "y")
        for candidate in candidates:
            if candidate in self.adjectives:
                return candidate
        return token


@functools.lru_cache(maxsize=8)
def _cached_lexicon(directory: str) -> ParserLexicon:
    return ParserLexicon.from_directory(directory)


def load_lexicon(directory: Optional[Union[str, Path]] = None) -> ParserLexicon:
    """Load (and memoize) the lexicon in ``directory`` or the packaged one."""
    resolved = AmbiVerConfig.get_lexicon_dir(directory).resolve()
    return _cached_lexicon(str(resolved))


@dataclass(frozen=True)
class ParsedInstruction:
    """Structured key-value form of one instruction."""

    raw: str
    action: str = ""
    target: str = ""
    attributes: Tuple[str, ...] = ()
    relations: Tuple[Tuple[str, str], ...] = ()
    # Unparsed conjuncts of a compound target ("... and the plate").
    leftover: str = ""

    def __post_init__(self) -> None:
        if not self.raw.strip():
            raise EmptyInstructionError("Instruction text is empty")

    @property
    def is_degenerate(self) -> bool:
        """No grounding query could be extracted."""
        return not self.target

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "action": self.action,
            "target": self.target,
            "attributes": list(self.attributes),
            "relations": [list(r) for r in self.relations],
            "leftover": self.leftover,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParsedInstruction":
        return cls(
            raw=data["raw"],
            action=data.get("action", ""),
            target=data.get("target", ""),
            attributes=tuple(data.get("attributes", ())),
            relations=tuple((str(p), str(o)) for p, o in data.get("relations", ())),
            leftover=data.get("leftover", ""),
        )


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def _head(tokens: Sequence[str], lexicon: ParserLexicon) -> Optional[int]:
    """Index of the last token that can head a noun phrase."""
    for i in range(len(tokens) - 1, -1, -1):
        token = tokens[i]
        if token not in lexicon.stopwords and token not in lexicon.politeness:
            return i
    return None


class ParserBackend(ABC):
    """Turns raw instruction text into a :class:`ParsedInstruction`."""

    @abstractmethod
    def parse(self, text: str) -> ParsedInstruction:
        """Parse one instruction."""


class RuleParser(ParserBackend):
    """Deterministic lexicon-driven parser."""

    def __init__(self, lexicon: Optional[ParserLexicon] = None) -> None:
        self.lexicon = lexicon or load_lexicon()

    def parse(self, text: str) -> ParsedInstruction:
        raw = text.strip()
        if not raw:
            raise EmptyInstructionError("Instruction text is empty")

        lex = self.lexicon
        tokens = tokenize(raw)
        if not tokens:
            raise EmptyInstructionError(f"Instruction has no words: {text!r}")

        # Preposition positions: index -> (length, canonical)
        preps: Dict[int, Tuple[int, str]] = {}
        i = 0
        while i < len(tokens):
            match = lex.match_preposition(tokens, i)
            if match:
                preps[i] = match
                i += match[0]
            else:
                i += 1

        # Only the first word after politeness can be the verb: in "the stack
        # of plates" the noun phrase has begun and "stack" is not an action.
        action = ""
        start = 0
        for i, token in enumerate(tokens):
            if token in lex.politeness or i in preps:
                continue
            lemma = lex.lemmatize(token, lex.verbs)
            if lemma in lex.verbs:
                action = lemma
                start = i + 1
            break

        # "turn on the light": a one-word preposition right after the verb is a particle
        if action and start in preps and preps[start][0] == 1:
            del preps[start]
            start += 1

        end = min((p for p in preps if p >= start), default=len(tokens))
        span = tokens[start:end]

        leftover = ""
        for j, token in enumerate(span):
            if token in lex.conjunctions and j > 0:
                leftover = " ".join(tokens[start + j + 1 :])
                span = span[:j]
                break

        target = ""
        attributes: List[str] = []
        head = _head(span, lex)
        if head is not None:
            target = span[head]
            attributes = [t for t in span[:head] if lex.is_attribute(t)]

        relations: List[Tuple[str, str]] = []
        starts = sorted(preps)
        for n, p in enumerate(starts):
            length, canonical = preps[p]
            stop = starts[n + 1] if n + 1 < len(starts) else len(tokens)
            obj_span = tokens[p + length : stop]
            for j, token in enumerate(obj_span):
                if token in lex.conjunctions:
                    obj_span = obj_span[:j]
                    break
            obj = _head(obj_span, lex)
            if obj is not None:
                relations.append((canonical, obj_span[obj]))

        parsed = ParsedInstruction(
            raw=raw,
            action=action,
            target=target,
            attributes=tuple(attributes),
            relations=tuple(relations),
            leftover=leftover,
        )
        if parsed.is_degenerate:
            logger.debug("degenerate parse for %r", raw)
        return parsed


class PassthroughParser(ParserBackend):
    """Uses the whole instruction as the grounding query."""

    def parse(self, text: str) -> ParsedInstruction:
        return parser_backend_passthrough(text)


def parse_instruction(
    t: str, lexicon: Optional[ParserLexicon] = None
) -> ParsedInstruction:
    """Parse ``t`` with the rule parser.

    Args:
        t: Instruction text.
        lexicon: Lexicon to use; the packaged one when ``None``.

    Raises:
        EmptyInstructionError: If ``t`` is blank.
    """
    return RuleParser(lexicon).parse(t)


def parser_backend_passthrough(t: str) -> ParsedInstruction:
    """Parse that keeps the raw instruction as the target."""

    if not t or not t.strip():
        raise EmptyInstructionError("Instruction text is empty")
    return ParsedInstruction(raw=t, target=t)


__all__ = [
    "ParsedInstruction",
    "ParserBackend",
    "ParserLexicon",
    "PassthroughParser",
    "RuleParser",
    "load_lexicon",
    "parse_instruction",
    "parser_backend_passthrough",
    "tokenize",
]
