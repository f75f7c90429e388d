"""Tests for dossier assembly, crops and prompt rendering."""

import base64
import json

import numpy as np
import pytest

from ambiver.bev import BEVImage
from ambiver.dossier import (
    PromptTemplate,
    build_dossier,
    crop_window,
    parse_summary,
    prompt_hash,
    render_prompt,
)
from ambiver.exceptions import MissingKeyframeError
from ambiver.fusion import Candidate
from ambiver.geometry import BBox2D
from ambiver.parser import ParsedInstruction, parse_instruction

PARSED = ParsedInstruction(raw="pick up the cup", action="pick", target="cup")


def _frames(*views):
    return {v: np.full((240, 320, 3), 10 * (v + 1), dtype=np.uint8) for v in views}


def _candidate(view, score, bbox=(100, 80, 140, 120), cardinality=2):
    return Candidate(view, BBox2D(*bbox), score, cardinality)


def _bev():
    return BEVImage(
        np.zeros((8, 8, 3), dtype=np.uint8), 0.1, (0.0, 0.0), np.full((8, 8), np.nan)
    )


def test_no_candidates():
    """A dossier may hold no local evidence."""

    dossier = build_dossier(PARSED, _bev(), [], _frames(0))
    assert dossier.local_evidence == ()
    assert dossier.candidates == []


def test_candidates_ordered_by_score():
    """Local evidence is best candidate first."""

    candidates = [_candidate(0, 0.7), _candidate(1, 0.9)]
    dossier = build_dossier(PARSED, _bev(), candidates, _frames(0, 1))
    assert [c.group_score for c in dossier.candidates] == [0.9, 0.7]
    # each crop comes from its representative frame
    assert dossier.local_evidence[0].crop[0, 0].tolist() == [20, 20, 20]


def test_corner_crop_is_clipped():
    """A box flush with the image corner crops inside the image."""

    corner = _candidate(0, 0.5, (0, 0, 10, 10))
    dossier = build_dossier(PARSED, None, [corner], _frames(0))
    evidence = dossier.local_evidence[0]
    assert evidence.crop_bbox.as_list() == [0, 0, 11, 11]
    assert evidence.crop.shape == (11, 11, 3)


def test_crop_window_never_empty():
    """Even a sliver of a box yields at least one pixel."""

    x0, y0, x1, y1 = crop_window(BBox2D(319.5, 239.5, 320.0, 240.0), 320, 240)
    assert 0 <= x0 < x1 <= 320 and 0 <= y0 < y1 <= 240


def test_missing_keyframe_and_too_many_candidates():
    """Representatives must be in the store and the count is bounded."""

    with pytest.raises(MissingKeyframeError):
        build_dossier(PARSED, None, [_candidate(3, 0.5)], _frames(0))
    many = [_candidate(0, 0.1 * i) for i in range(1, 4)]
    with pytest.raises(ValueError):
        build_dossier(PARSED, None, many, _frames(0), top_k=2)


def test_crops_written_to_disk(tmp_path):
    """Crops are saved as PNG files in rank order when a directory is given."""

    candidates = [_candidate(0, 0.4), _candidate(1, 0.8)]
    dossier = build_dossier(PARSED, None, candidates, _frames(0, 1), crop_dir=tmp_path)
    paths = [e.crop_path for e in dossier.local_evidence]
    names = [p.name for p in paths]
    assert names == ["candidate_01_view1.png", "candidate_02_view0.png"]
    assert all(p.exists() for p in paths)


def test_render_prompt_images():
    """The BEV comes first, then one crop per candidate."""

    candidates = [_candidate(0, 0.9), _candidate(1, 0.7)]
    dossier = build_dossier(PARSED, _bev(), candidates, _frames(0, 1))
    text, images = render_prompt(dossier)
    assert [i.label for i in images] == ["bev", "candidate-1", "candidate-2"]
    assert "(candidate 1: reliability 0.90, seen in 2 views)" in text
    assert "(candidate 2: reliability 0.70, seen in 2 views)" in text
    assert "Instruction: pick up the cup" in text
    assert base64.b64decode(images[0].to_base64()).startswith(b"\x89PNG")


def test_render_prompt_without_candidates_or_images():
    """The template's notices replace missing candidates and images."""

    template = PromptTemplate.load()
    dossier = build_dossier(PARSED, None, [], _frames(0))
    text, images = render_prompt(dossier, template)
    assert images == []
    assert template.section("no_candidates") in text
    assert template.section("image_guide_none") in text


def test_render_prompt_ablations():
    """Either image kind can be left out while candidate lines stay."""

    dossier = build_dossier(PARSED, _bev(), [_candidate(0, 0.9)], _frames(0))
    _, images = render_prompt(dossier, include_crops=False)
    assert [i.label for i in images] == ["bev"]
    text, images = render_prompt(dossier, include_bev=False)
    assert [i.label for i in images] == ["candidate-1"]
    assert "(candidate 1:" in text


def test_render_prompt_is_stable():
    """The same dossier renders to the same text and hash."""

    dossier = build_dossier(PARSED, None, [_candidate(0, 0.9)], _frames(0))
    first, _ = render_prompt(dossier)
    second, _ = render_prompt(dossier)
    assert prompt_hash(first) == prompt_hash(second)


def test_parse_summary_embeds_parse():
    """The parse is embedded as one JSON line."""

    parsed = parse_instruction("Pick up the red cup to the left of the lamp")
    summary = json.loads(parse_summary(parsed))
    assert summary["target"] == "cup"
    assert summary["relations"] == [["left of", "lamp"]]


def test_template_loading():
    """The packaged template has a version and a content digest."""

    template = PromptTemplate.load()
    assert template.version == "ambiguity-v1"
    assert template.digest == PromptTemplate.load().digest
    assert len(template.digest) == 64


def test_template_validation():
    """Templates lacking sections or a version are rejected."""

    with pytest.raises(ValueError, match="lacks section"):
        PromptTemplate.from_text("[[meta]]\nversion = x\n")

    sections = "".join(
        f"[[{name}]]\ntext\n"
        for name in (
            "body",
            "no_candidates",
            "candidate",
            "image_guide_bev",
            "image_guide_crops",
            "image_guide_none",
        )
    )
    with pytest.raises(ValueError, match="version"):
        PromptTemplate.from_text("[[meta]]\n" + sections)
    template = PromptTemplate.from_text("[[meta]]\nversion = t1\n" + sections)
    assert template.version == "t1"
