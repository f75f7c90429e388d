"""Vision-language backends the adjudicator talks to.

Three interchangeable implementations of :class:`VlmBackend` are provided:

* :class:`MockBackend` applies the ambiguity definitions mechanically to the
  parse and candidate lines embedded in the prompt. It is deterministic and
  serves as the test oracle.
* :class:`ReplayBackend` answers from recorded responses keyed by prompt hash.
* :class:`RemoteBackend` posts the prompt and base64 images to an HTTP endpoint.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import requests

from .config import AmbiVerConfig, PipelineConfig, RemoteBackendConfig
from .dossier import PromptImage, prompt_hash
from .exceptions import BackendUnavailableError, MissingFileError
from .parser import ParserLexicon, load_lexicon

logger = logging.getLogger(__name__)

RESPONSES_FILE = "responses.jsonl"

_PARSE_RE = re.compile(r"^Parsed instruction: (\{.*\})\s*$", re.MULTILINE)
_CANDIDATE_RE = re.compile(
    r"^\(candidate (\d+): reliability ([0-9.]+), seen in (\d+) views\)\s*$",
    re.MULTILINE,
)


class VlmBackend(ABC):
    """Text-plus-images in, text out."""

    name = "abstract"

    @abstractmethod
    def complete(
        self, prompt: str, images: Sequence[PromptImage], temperature: float = 0.0
    ) -> str:
        """Return the raw model response for one prompt.

        Raises:
            BackendUnavailableError: On transport failure.
        """

    def close(self) -> None:
        pass

    def __enter__(self) -> "VlmBackend":
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        self.close()


class MockBackend(VlmBackend):
    """Deterministic rule-table adjudicator.

    Only the prompt text is read. The rules, each of which may fire:

    * Instance: two or more candidates and neither attributes nor relations.
    * Attribute: a subjective attribute and no superlative.
    * Spatial: an observer-dependent relation.
    * Action: a vague verb.
    """

    name = "mock"

    def __init__(self, lexicon: Optional[ParserLexicon] = None) -> None:
        self.lexicon = lexicon or load_lexicon()

    @staticmethod
    def read_prompt(prompt: str) -> Tuple[Dict[str, Any], List[Tuple[int, float, int]]]:
        """Extract the embedded parse and the candidate lines."""

        parsed: Dict[str, Any] = {}
        match = _PARSE_RE.search(prompt)
        if match:
            try:
                parsed = json.loads(match.group(1))
            except json.JSONDecodeError:
                parsed = {}
        candidates = [
            (int(i), float(score), int(views))
            for i, score, views in _CANDIDATE_RE.findall(prompt)
        ]
        return parsed, candidates

    def complete(
        self, prompt: str, images: Sequence[PromptImage], temperature: float = 0.0
    ) -> str:
        parsed, candidates = self.read_prompt(prompt)
        lex = self.lexicon

        action = str(parsed.get("action") or "")
        target = str(parsed.get("target") or "") or "object"
        attributes = [str(a) for a in parsed.get("attributes") or ()]
        relations = [(str(p), str(o)) for p, o in parsed.get("relations") or ()]

        types: List[str] = []
        reasons: List[str] = []
        questions: List[str] = []

        if len(candidates) >= 2 and not attributes and not relations:
            types.append("Instance")
            reasons.append(
                f"{len(candidates)} instances of '{target}' match "
                "and nothing tells them apart"
            )
            questions.append(f"Which {target} do you mean?")

        superlative = any(a.endswith("est") for a in attributes)
        subjective = [a for a in attributes if a in lex.subjective]
        if subjective and not superlative:
            types.append("Attribute")
            reasons.append(
                f"'{subjective[0]}' is relative and does not single out one {target}"
            )
            questions.append(f"Which {target} counts as {subjective[0]}?")

        observer = [(p, o) for p, o in relations if p in lex.observer_dependent]
        if observer:
            prep, obj = observer[0]
            types.append("Spatial")
            reasons.append(f"'{prep}' depends on where the observer stands")
            questions.append(
                f"From whose point of view is the {target} {prep} the {obj}?"
            )

        if action in lex.vague_verbs:
            types.append("Action")
            reasons.append(f"'{action}' allows several different manipulations")
            questions.append(f"What exactly should I do with the {target}?")

        if types:
            verdict = {
                "label": "Ambiguous",
                "types": types,
                "explanation": "; ".join(reasons) + ".",
                "clarification": questions[0],
            }
        else:
            if candidates:
                explanation = (
                    f"the instruction identifies one {target} and a clear action."
                )
            else:
                explanation = f"no {target} is visible, so there is nothing to confuse."
            verdict = {
                "label": "Unambiguous",
                "types": [],
                "explanation": explanation,
                "clarification": None,
            }
        return json.dumps(verdict)


def _responses_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path / RESPONSES_FILE if path.is_dir() else path


def read_responses(path: Union[str, Path]) -> Dict[str, str]:
    """Load ``{prompt_hash: response}`` from a responses JSONL file or run directory.

    Later lines win over earlier ones with the same hash.
    """

    path = _responses_path(path)
    if not path.exists():
        raise MissingFileError(f"Recorded responses not found: {path}")

    responses: Dict[str, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            responses[record["prompt_hash"]] = record["response"]
    return responses


class ReplayBackend(VlmBackend):
    """Answers from responses recorded by an earlier run."""

    name = "replay"

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = _responses_path(path)
        self._responses = read_responses(self.path)
        logger.debug(
            "loaded %d recorded responses from %s", len(self._responses), self.path
        )

    def __len__(self) -> int:
        return len(self._responses)

    def complete(
        self, prompt: str, images: Sequence[PromptImage], temperature: float = 0.0
    ) -> str:
        key = prompt_hash(prompt)
        try:
            return self._responses[key]
        except KeyError:
            raise BackendUnavailableError(
                f"No recorded response for prompt {key[:12]} in {self.path}"
            )


class RemoteBackend(VlmBackend):
    """JSON-over-HTTP client.

    Request body: ``{"prompt", "images" (base64 PNG), "temperature"}`` plus
    ``"model"`` when configured. The response must be ``{"text": ...}``.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: Optional[str] = None,
        api_key: Optional[str] = None,
        model: Optional[str] = None,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ) -> None:
        self.endpoint = endpoint or AmbiVerConfig.remote_endpoint()
        if not self.endpoint:
            raise BackendUnavailableError(
                f"No remote endpoint configured; set {AmbiVerConfig.endpoint_env}"
            )
        if api_key is None:
            api_key = AmbiVerConfig.remote_api_key()
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self._session = session or requests.Session()

    @classmethod
    def from_config(
        cls, cfg: RemoteBackendConfig, session: Optional[requests.Session] = None
    ) -> "RemoteBackend":
        return cls(
            endpoint=cfg.resolved_endpoint(),
            model=cfg.model,
            timeout=cfg.timeout,
            session=session,
        )

    def complete(
        self, prompt: str, images: Sequence[PromptImage], temperature: float = 0.0
    ) -> str:
        payload: Dict[str, Any] = {
            "prompt": prompt,
            "images": [image.to_base64() for image in images],
            "temperature": temperature,
        }
        if self.model:
            payload["model"] = self.model
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

        try:
            response = self._session.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            response.raise_for_status()
            body = response.json()
        except requests.RequestException as e:
            raise BackendUnavailableError(f"Remote backend request failed: {e}")
        except ValueError as e:
            raise BackendUnavailableError(f"Remote backend returned invalid JSON: {e}")

        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise BackendUnavailableError("Remote backend response has no 'text' field")
        return text

    def close(self) -> None:
        self._session.close()


class ThrottledBackend(VlmBackend):
    """Caps the number of concurrent ``complete`` calls on another backend."""

    def __init__(self, inner: VlmBackend, limit: int) -> None:
        if limit < 1:
            raise ValueError("limit must be at least 1")
        self.inner = inner
        self.name = inner.name
        self._slots = threading.BoundedSemaphore(limit)

    def complete(
        self, prompt: str, images: Sequence[PromptImage], temperature: float = 0.0
    ) -> str:
        with self._slots:
            return self.inner.complete(prompt, images, temperature)

    def close(self) -> None:
        self.inner.close()


def create_backend(
    config: PipelineConfig, lexicon: Optional[ParserLexicon] = None
) -> VlmBackend:
    """Build the backend selected by ``config.backend``."""

    if config.backend == "mock":
        return MockBackend(lexicon or load_lexicon(config.lexicon_dir))
    if config.backend == "replay":
        assert config.replay_path is not None
        return ReplayBackend(config.replay_path)
    return RemoteBackend.from_config(config.remote)


__all__ = [
    "MockBackend",
    "RESPONSES_FILE",
    "RemoteBackend",
    "ReplayBackend",
    "ThrottledBackend",
    "VlmBackend",
    "create_backend",
    "read_responses",
]
