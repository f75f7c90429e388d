"""Evidence packaging for the reasoning stage.

A :class:`Dossier` bundles the three kinds of evidence the adjudicator sees:
the decoupled instruction, the bird's-eye view of the scene and one close-up
crop per fused candidate. :func:`render_prompt` turns it into prompt text plus
an ordered image list using a versioned :class:`PromptTemplate`.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from string import Template
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .bev import BEVImage
from .config import AmbiVerConfig
from .exceptions import (
    EmptyInstructionError,
    IoFailureError,
    MissingFileError,
    MissingKeyframeError,
)
from .fusion import Candidate
from .geometry import BBox2D
from .parser import ParsedInstruction

logger = logging.getLogger(__name__)

# view index -> H x W x 3 uint8 color frame
KeyframeStore = Mapping[int, np.ndarray]

CROP_MARGIN = 0.1

TEMPLATE_SECTIONS = (
    "meta",
    "body",
    "no_candidates",
    "candidate",
    "image_guide_bev",
    "image_guide_crops",
    "image_guide_none",
)


@dataclass(frozen=True, eq=False)
class PromptImage:
    """One image attached to a prompt."""

    label: str
    pixels: np.ndarray
    path: Optional[Path] = None

    def png_bytes(self) -> bytes:
        buffer = io.BytesIO()
        image = Image.fromarray(np.ascontiguousarray(self.pixels, dtype=np.uint8))
        image.save(buffer, format="PNG")
        return buffer.getvalue()

    def to_base64(self) -> str:
        return base64.b64encode(self.png_bytes()).decode("ascii")


@dataclass(frozen=True, eq=False)
class CandidateEvidence:
    """A candidate together with its close-up crop."""

    candidate: Candidate
    crop_bbox: BBox2D
    crop: np.ndarray
    crop_path: Optional[Path] = None


@dataclass(frozen=True, eq=False)
class Dossier:
    """Linguistic, global and local evidence for one instruction."""

    linguistic: ParsedInstruction
    global_context: Optional[BEVImage]
    local_evidence: Tuple[CandidateEvidence, ...] = ()
    bev_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.linguistic.raw.strip():
            raise EmptyInstructionError("Dossier instruction text is empty")
        for evidence in self.local_evidence:
            if evidence.crop_path is not None and not evidence.crop_path.exists():
                raise MissingFileError(f"Crop image not found: {evidence.crop_path}")

    @property
    def candidates(self) -> List[Candidate]:
        return [e.candidate for e in self.local_evidence]


def crop_window(
    bbox: BBox2D, width: int, height: int, margin: float = CROP_MARGIN
) -> Tuple[int, int, int, int]:
    """Integer pixel window ``(x0, y0, x1, y1)`` of ``bbox`` grown by ``margin``.

    The window is clipped to the image and never empty.
    """

    grown = bbox.expanded(margin, width, height)
    x0 = min(max(int(math.floor(grown.x_min)), 0), width - 1)
    y0 = min(max(int(math.floor(grown.y_min)), 0), height - 1)
    x1 = min(max(int(math.ceil(grown.x_max)), x0 + 1), width)
    y1 = min(max(int(math.ceil(grown.y_max)), y0 + 1), height)
    return x0, y0, x1, y1


def _save_png(pixels: np.ndarray, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8))
        image.save(path, format="PNG")
    except OSError as e:
        raise IoFailureError(f"Failed to write image {path}: {e}")
    return path


def build_dossier(
    parsed: ParsedInstruction,
    bev: Optional[BEVImage],
    candidates: Sequence[Candidate],
    keyframes: KeyframeStore,
    *,
    top_k: int = 6,
    margin: float = CROP_MARGIN,
    crop_dir: Optional[Union[str, Path]] = None,
    bev_path: Optional[Union[str, Path]] = None,
) -> Dossier:
    """Bundle the perception outputs for one instruction.

    Candidates are reordered by group score (best first, stable for ties) and
    each one gets a crop of its representative box from its representative
    keyframe.

    Args:
        parsed: The decoupled instruction.
        bev: Bird's-eye view of the scene, or ``None`` when it is not used.
        candidates: Fused candidates, at most ``top_k``.
        keyframes: Color frames by view index.
        top_k: Upper bound on the number of candidates.
        margin: Crop margin as a fraction of the box size.
        crop_dir: When given, crops are also written there as PNG files.
        bev_path: Where the BEV raster was saved, if it was.

    Raises:
        MissingKeyframeError: If a representative view is not in ``keyframes``.
        EmptyInstructionError: If the instruction text is blank.
    """

    if not parsed.raw.strip():
        raise EmptyInstructionError("Instruction text is empty")
    if len(candidates) > top_k:
        raise ValueError(f"{len(candidates)} candidates exceed the limit of {top_k}")

    ordered = sorted(candidates, key=lambda c: -c.group_score)
    evidence = []
    for rank, candidate in enumerate(ordered, start=1):
        frame = keyframes.get(candidate.representative_view)
        if frame is None:
            raise MissingKeyframeError(
                f"Keyframe {candidate.representative_view} is not in the keyframe store"
            )
        frame = np.asarray(frame)
        height, width = frame.shape[:2]
        bbox = candidate.representative_bbox
        x0, y0, x1, y1 = crop_window(bbox, width, height, margin)
        crop = frame[y0:y1, x0:x1, :3].copy()

        path = None
        if crop_dir is not None:
            name = f"candidate_{rank:02d}_view{candidate.representative_view}.png"
            path = _save_png(crop, Path(crop_dir) / name)

        window = BBox2D(x0, y0, x1, y1)
        evidence.append(CandidateEvidence(candidate, window, crop, path))

    logger.debug("dossier for %r with %d candidates", parsed.raw, len(evidence))
    return Dossier(
        linguistic=parsed,
        global_context=bev,
        local_evidence=tuple(evidence),
        bev_path=Path(bev_path) if bev_path is not None else None,
    )


def _split_sections(text: str) -> Dict[str, str]:
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[[") and stripped.endswith("]]"):
            current = stripped[2:-2].strip()
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    return {name: "\n".join(lines).strip("\n") for name, lines in sections.items()}


@dataclass(frozen=True)
class PromptTemplate:
    """A versioned prompt file split into named ``[[section]]`` blocks."""

    version: str
    sections: Tuple[Tuple[str, str], ...]
    digest: str
    source: Optional[Path] = None

    @classmethod
    def from_text(cls, text: str, source: Optional[Path] = None) -> "PromptTemplate":
        sections = _split_sections(text)
        missing = [name for name in TEMPLATE_SECTIONS if name not in sections]
        if missing:
            raise ValueError(f"Prompt template lacks section(s): {', '.join(missing)}")

        version = ""
        for line in sections["meta"].splitlines():
            key, _, value = line.partition("=")
            if key.strip() == "version":
                version = value.strip()
        if not version:
            raise ValueError("Prompt template does not declare a version")

        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return cls(version, tuple(sorted(sections.items())), digest, source)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "PromptTemplate":
        """Read a template file, the packaged one when ``path`` is ``None``."""

        resolved = AmbiVerConfig.get_prompt_template(path)
        if not resolved.exists():
            raise MissingFileError(f"Prompt template not found: {resolved}")
        return cls.from_text(resolved.read_text(encoding="utf-8"), resolved)

    def section(self, name: str) -> str:
        for key, value in self.sections:
            if key == name:
                return value
        raise KeyError(name)


def prompt_hash(text: str) -> str:
    """Content hash that keys recorded backend responses."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_summary(parsed: ParsedInstruction) -> str:
    """Single-line JSON rendering of a parse, as embedded in prompts."""
    return json.dumps(
        {
            "action": parsed.action,
            "target": parsed.target,
            "attributes": list(parsed.attributes),
            "relations": [list(r) for r in parsed.relations],
            "leftover": parsed.leftover,
        }
    )


def render_prompt(
    d: Dossier,
    template: Optional[PromptTemplate] = None,
    *,
    include_bev: bool = True,
    include_crops: bool = True,
) -> Tuple[str, List[PromptImage]]:
    """Render the prompt text and the ordered image list for ``d``.

    The image list is the BEV followed by one crop per candidate in candidate
    order. Either part can be left out for the reasoning ablations; the
    candidate lines stay in the text regardless.

    Args:
        d: The dossier.
        template: Prompt template; the packaged one when ``None``.
        include_bev: Attach the BEV raster when the dossier has one.
        include_crops: Attach the candidate crops.
    """

    template = template or PromptTemplate.load()

    images: List[PromptImage] = []
    guides = []
    if include_bev and d.global_context is not None:
        images.append(PromptImage("bev", d.global_context.pixels, d.bev_path))
        guides.append(template.section("image_guide_bev"))
    if include_crops and d.local_evidence:
        for i, evidence in enumerate(d.local_evidence, start=1):
            image = PromptImage(f"candidate-{i}", evidence.crop, evidence.crop_path)
            images.append(image)
        guides.append(template.section("image_guide_crops"))
    if not images:
        guides.append(template.section("image_guide_none"))

    line = Template(template.section("candidate"))
    if d.local_evidence:
        candidates = "\n".join(
            line.substitute(
                index=i,
                score=f"{e.candidate.group_score:.2f}",
                views=e.candidate.cardinality,
            )
            for i, e in enumerate(d.local_evidence, start=1)
        )
    else:
        candidates = template.section("no_candidates")

    parsed = d.linguistic
    text = Template(template.section("body")).substitute(
        instruction=parsed.raw,
        parse=parse_summary(parsed),
        image_guide="\n".join(guides),
        target=parsed.target or parsed.raw,
        candidates=candidates,
    )
    return text + "\n", images


__all__ = [
    "CROP_MARGIN",
    "CandidateEvidence",
    "Dossier",
    "KeyframeStore",
    "PromptImage",
    "PromptTemplate",
    "build_dossier",
    "crop_window",
    "parse_summary",
    "prompt_hash",
    "render_prompt",
]
