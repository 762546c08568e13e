"""Rulebook parsing, schema validation and the structuring re-query."""

from __future__ import annotations

import pytest

from conftest import CHAT_CONFIG, offline_gateway, scripted_gateway
from playtest import prompts
from playtest.datamodel import NOT_MENTIONED, SECTION_KEYS, StructuredRulebook
from playtest.errors import StructuringError
from playtest.gateway import MockTransport, chat_request
from playtest.rulebook import (
    parse_sections,
    rectify_rulebook,
    source_hash,
    structure_rulebook,
    validate_rulebook,
    validate_sections,
)


def layout(bodies: dict[str, str] | None = None) -> str:
    over = bodies or {}
    parts = [f"## {i}. {key}\n{over.get(key, f'Text for {key}.')}"
             for i, key in enumerate(SECTION_KEYS, start=1)]
    return "\n\n".join(parts)


def pairs_for(text: str) -> list[str]:
    return [k for k, _ in parse_sections(text)]


# -- parsing tolerance -------------------------------------------------


def test_parse_heading_levels_and_numbering() -> None:
    text = "\n".join([
        "# 1. Lore & Objective", "a",
        "### 2) Components:", "b",
        "#Setup", "c",
        "###### 4: GAMEPLAY FLOW", "d",
        "## Core Mechanics", "e",
        "## 6. Scoring & End Game", "f",
        "## 7. FAQ or Edge Cases", "g",
    ])
    assert pairs_for(text) == list(SECTION_KEYS)


def test_parse_drops_preamble_keeps_subheadings_in_body() -> None:
    text = "Sure, here is the structured rulebook:\n\n" + layout(
        {"Core Mechanics": "#### Resources\nSkill points.\n#### Actions\nMove."})
    parsed = dict(parse_sections(text))
    assert "#### Resources" in parsed["Core Mechanics"]
    assert "#### Actions" in parsed["Core Mechanics"]
    assert len(parsed) == 7


def test_parse_empty_text() -> None:
    assert parse_sections("no headings at all") == []


# -- validation --------------------------------------------------------


def test_validate_accepts_canonical_layout() -> None:
    assert validate_rulebook(layout()) == []


def test_validate_missing_section() -> None:
    text = layout()
    text = text.replace("## 3. Setup\nText for Setup.\n\n", "")
    violations = validate_rulebook(text)
    assert [v.kind for v in violations] == ["missing"]
    assert violations[0].section == "Setup"


def test_validate_duplicate_section() -> None:
    text = layout() + "\n\n## 3. Setup\nSecond body."
    violations = validate_rulebook(text)
    assert [v.kind for v in violations] == ["duplicate"]
    assert violations[0].section == "Setup"


def test_validate_out_of_order() -> None:
    keys = list(SECTION_KEYS)
    keys[0], keys[1] = keys[1], keys[0]
    text = "\n\n".join(f"## {k}\nBody." for k in keys)
    violations = validate_rulebook(text)
    assert [v.kind for v in violations] == ["out_of_order"]


def test_validate_empty_body() -> None:
    pairs = [(k, "" if k == "Components" else "Body.") for k in SECTION_KEYS]
    violations = validate_sections(pairs)
    assert [v.kind for v in violations] == ["empty_body"]
    assert violations[0].section == "Components"


def test_validate_unknown_section_pair() -> None:
    pairs = [(k, "Body.") for k in SECTION_KEYS] + [("Designer Notes", "x")]
    kinds = {v.kind for v in validate_sections(pairs)}
    assert kinds == {"unknown"}


def test_validate_not_mentioned_allowed() -> None:
    assert validate_rulebook(layout({"FAQ or Edge Cases": NOT_MENTIONED})) == []


def test_validate_accepts_structured_rulebook_instance() -> None:
    doc = StructuredRulebook(
        game_id="g", source_hash="h",
        sections=tuple((k, "Body.") for k in SECTION_KEYS))
    assert validate_rulebook(doc) == []


def test_clank_fixture_is_schema_valid(clank_text) -> None:
    assert validate_rulebook(clank_text) == []
    parsed = dict(parse_sections(clank_text))
    assert "Dragon Bag" in parsed["Components"]


# -- structuring and rectification --------------------------------------


RAW = "\n".join(f"Sentence {i} about how the game works." for i in range(21))


def test_structure_rulebook_offline_roundtrip() -> None:
    gateway = offline_gateway()
    doc = structure_rulebook(RAW, "g1", gateway, CHAT_CONFIG)
    assert doc.game_id == "g1"
    assert doc.source_hash == source_hash(RAW)
    assert tuple(k for k, _ in doc.sections) == SECTION_KEYS
    # Every raw line survives somewhere in the structured bodies.
    joined = "\n".join(body for _, body in doc.sections)
    for i in range(21):
        assert f"Sentence {i} " in joined


def test_structure_requeries_on_bad_first_reply() -> None:
    prompt = prompts.fill(prompts.STRUCTURE_RULEBOOK, raw_markdown=RAW)
    unscripted: list[str] = []

    def responder(req):
        unscripted.append(req.messages[-1]["content"])
        return layout()

    transport = MockTransport(responder)
    transport.script(chat_request(None, prompt), "## 1. Lore & Objective\nonly one")
    gateway = scripted_gateway(transport)
    doc = structure_rulebook(RAW, "g1", gateway, CHAT_CONFIG)
    assert transport.chat_calls == 2
    assert tuple(k for k, _ in doc.sections) == SECTION_KEYS
    # Only the reminder reached the fallback responder; it names the
    # headers the first reply was missing.
    assert len(unscripted) == 1
    assert "REMINDER" in unscripted[0]
    assert "Components" in unscripted[0].split("REMINDER")[-1]


def test_structure_raises_after_second_bad_reply() -> None:
    transport = MockTransport(lambda req: "not a rulebook at all")
    gateway = scripted_gateway(transport)
    with pytest.raises(StructuringError) as exc_info:
        structure_rulebook(RAW, "g1", gateway, CHAT_CONFIG)
    assert transport.chat_calls == 2
    assert exc_info.value.violations


def test_rectify_unchanged_reports_no_changes() -> None:
    gateway = offline_gateway()
    doc = structure_rulebook(RAW, "g1", gateway, CHAT_CONFIG)
    rectified, changed = rectify_rulebook(doc, RAW, gateway, CHAT_CONFIG)
    assert changed == []
    assert rectified.sections == doc.sections
    assert rectified.source_hash == doc.source_hash


def test_rectify_reports_changed_sections() -> None:
    doc = StructuredRulebook(
        game_id="g", source_hash="h",
        sections=tuple((k, f"Old {k}.") for k in SECTION_KEYS))

    def responder(req):
        user = req.messages[-1]["content"]
        assert "[DRAFT RULEBOOK]:" in user
        return layout({k: f"Old {k}." for k in SECTION_KEYS} | {"Setup": "Corrected setup."})

    gateway = scripted_gateway(MockTransport(responder))
    rectified, changed = rectify_rulebook(doc, "raw text", gateway, CHAT_CONFIG)
    assert changed == ["Setup"]
    assert rectified.section("Setup") == "Corrected setup."
