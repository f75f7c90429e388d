"""Tests for the rule-based instruction parser and its lexicons."""

import pytest

from ambiver.exceptions import EmptyInstructionError, MissingFileError
from ambiver.parser import (
    ParsedInstruction,
    PassthroughParser,
    RuleParser,
    load_lexicon,
    parse_instruction,
    parser_backend_passthrough,
    tokenize,
)


def test_parse_examples():
    """Verb, target, attributes and relations of reference instructions."""

    parsed = parse_instruction("Please pick up the tallest object on the table")
    assert parsed.action == "pick"
    assert parsed.target == "object"
    assert parsed.attributes == ("tallest",)
    assert parsed.relations == (("on", "table"),)

    parsed = parse_instruction("Pass me the vial from the tray")
    assert (parsed.action, parsed.target) == ("pass", "vial")
    assert parsed.attributes == ()
    assert parsed.relations == (("from", "tray"),)


def test_single_noun():
    """A bare noun has no action but still yields a target."""

    parsed = parse_instruction("chair")
    assert parsed == ParsedInstruction(raw="chair", target="chair")
    assert not parsed.is_degenerate


def test_multiword_prepositions_fold_to_canonical():
    """Longer preposition variants win and map onto their canonical form."""

    parsed = parse_instruction("Pick up the red cup to the left of the lamp")
    assert parsed.target == "cup"
    assert parsed.attributes == ("red",)
    assert parsed.relations == (("left of", "lamp"),)

    parsed = parse_instruction("Could you grab the large cup next to the lamp?")
    assert parsed.action == "grab"
    assert parsed.attributes == ("large",)
    assert parsed.relations == (("next to", "lamp"),)


def test_particle_after_verb_is_not_a_relation():
    """A one-word preposition right after the verb belongs to the verb."""

    parsed = parse_instruction("Turn on the light")
    assert (parsed.action, parsed.target, parsed.relations) == ("turn", "light", ())


def test_inflected_verbs_are_lemmatized():
    """Regular and irregular inflections reduce to the lexicon lemma."""

    assert parse_instruction("grabbing the cup").action == "grab"
    assert parse_instruction("picks the cup").action == "pick"
    assert parse_instruction("took the cup").action == "take"


def test_compound_target_keeps_leftover():
    """Only the first conjunct becomes the target."""

    parsed = parse_instruction("Bring the cup and the plate")
    assert parsed.target == "cup"
    assert parsed.leftover == "the plate"


def test_comparatives_count_as_attributes():
    """Comparatives of known adjectives are attributes."""

    parsed = parse_instruction("Move the bigger box")
    assert parsed.attributes == ("bigger",)
    assert parsed.target == "box"


def test_degenerate_parse():
    """An instruction of only stopwords has no grounding query."""

    parsed = parse_instruction("pick it up")
    assert parsed.action == "pick"
    assert parsed.is_degenerate


def test_empty_instruction():
    """Blank and word-less text is rejected."""

    for text in ("", "   ", "?!"):
        with pytest.raises(EmptyInstructionError):
            parse_instruction(text)


def test_passthrough():
    """The passthrough parser keeps the whole instruction as the target."""

    text = "Pick up the red cup"
    assert parser_backend_passthrough(text).target == text
    assert parser_backend_passthrough("x").target == "x"
    assert PassthroughParser().parse("x").action == ""
    with pytest.raises(EmptyInstructionError):
        parser_backend_passthrough("")


def test_parse_is_deterministic():
    """Repeated parses of one instruction are equal."""

    parser = RuleParser()
    text = "Please put the small blue bowl behind the sink"
    assert parser.parse(text) == parser.parse(text)
    assert parser.parse(text).relations == (("behind", "sink"),)


def test_tokenize():
    """Lowercased word tokens with contractions kept together."""

    assert tokenize("Don't move THE cup!") == ["don't", "move", "the", "cup"]


def test_parsed_instruction_dict():
    """to_dict and from_dict are inverses."""

    parsed = parse_instruction("Pick up the red cup to the left of the lamp")
    assert ParsedInstruction.from_dict(parsed.to_dict()) == parsed


def test_custom_lexicon_directory(tmp_path):
    """Aliases fold onto their canonical entry and unknown files are ignored."""

    (tmp_path / "verbs.txt").write_text("fetch\n", encoding="utf-8")
    (tmp_path / "stopwords.txt").write_text("the\n", encoding="utf-8")
    (tmp_path / "prepositions.txt").write_text(
        "# relations\nunder\nbeneath = under\n", encoding="utf-8"
    )
    (tmp_path / "colors.txt").write_text("teal\n", encoding="utf-8")

    lexicon = load_lexicon(tmp_path)
    parsed = parse_instruction("Fetch the mug beneath the shelf", lexicon)
    assert parsed.action == "fetch"
    assert parsed.target == "mug"
    assert parsed.relations == (("under", "shelf"),)


def test_missing_lexicon_directory(tmp_path):
    """A lexicon directory that does not exist is an error."""

    with pytest.raises(MissingFileError):
        load_lexicon(tmp_path / "missing")


def test_superlative_needs_known_stem():
    """Words ending in -est count as attributes only when their stem is an adjective."""

    lexicon = load_lexicon()
    assert lexicon.is_attribute("largest")
    assert lexicon.is_attribute("biggest")
    assert lexicon.is_attribute("dirtiest")
    assert not lexicon.is_attribute("chest")
    assert not lexicon.is_attribute("forest")
    assert lexicon.lemmatize_graded("smallest", "est") == "small"

    parsed = parse_instruction("Pick up the wooden chest by the bed")
    assert parsed.target == "chest"
    assert parsed.attributes == ("wooden",)
    assert parsed.relations == (("by", "bed"),)

    parsed = parse_instruction("Open the chest")
    assert parsed.target == "chest"
    assert parsed.attributes == ()


def test_verb_only_before_noun_phrase():
    """A verb-lexicon word inside a noun phrase is not taken as the action."""

    parsed = parse_instruction("the stack of plates")
    assert parsed.action == ""
    assert not parsed.is_degenerate

    parsed = parse_instruction("the red box beside the stack")
    assert parsed.action == ""
    assert parsed.target == "box"
    assert parsed.attributes == ("red",)
    assert parsed.relations == (("beside", "stack"),)

    parsed = parse_instruction("Could you please stack the plates")
    assert parsed.action == "stack"
    assert parsed.target == "plates"
