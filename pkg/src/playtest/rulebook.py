"""Rulebook structuring and rectification.

Raw scraped rulebook markdown is rewritten by a model into a fixed
seven-section layout, then optionally rectified by a second pass that
cross-checks the draft against the source text. Replies are parsed
tolerantly (any heading level, optional numbering, case-insensitive)
but validated strictly: all seven sections, canonical order, exactly
once, non-empty bodies.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Sequence

from . import prompts
from .datamodel import SECTION_KEYS, StructuredRulebook
from .errors import StructuringError
from .gateway import ChatRequest, EndpointConfig, Gateway, chat_request

logger = logging.getLogger(__name__)

_HEADING_RE = re.compile(r"^\s{0,3}#{1,6}\s*(?:\d+\s*[.):]?\s*)?(.+?)\s*:?\s*$")

_CANONICAL = {key.casefold(): key for key in SECTION_KEYS}


@dataclass(frozen=True)
class Violation:
    kind: str        # missing | duplicate | out_of_order | empty_body
    section: str
    message: str


def source_hash(raw_markdown: str) -> str:
    return hashlib.sha256(raw_markdown.encode("utf-8")).hexdigest()


def _match_heading(line: str) -> str | None:
    m = _HEADING_RE.match(line)
    if not m:
        return None
    return _CANONICAL.get(m.group(1).casefold())


def parse_sections(text: str) -> list[tuple[str, str]]:
    """Split a reply into (canonical key, body) pairs.

    Headings are recognized at any ``#`` level, numbering optional,
    case-insensitive. Anything before the first recognized heading
    (conversational preamble) is dropped; unrecognized headings stay
    part of the enclosing body. Duplicates and gaps are preserved for
    validate_sections to report.
    """
    pairs: list[tuple[str, str]] = []
    current: str | None = None
    body: list[str] = []
    for line in text.splitlines():
        key = _match_heading(line)
        if key is not None:
            if current is not None:
                pairs.append((current, "\n".join(body).strip()))
            current = key
            body = []
        elif current is not None:
            body.append(line)
    if current is not None:
        pairs.append((current, "\n".join(body).strip()))
    return pairs


def validate_sections(pairs: Sequence[tuple[str, str]]) -> list[Violation]:
    """Schema check: each of the seven sections exactly once, canonical
    order, non-empty body. Empty list means valid."""
    violations: list[Violation] = []
    seen: dict[str, int] = {}
    first_pos: dict[str, int] = {}
    for pos, (key, body) in enumerate(pairs):
        if key not in SECTION_KEYS:
            violations.append(Violation("unknown", key, f"unknown section header {key!r}"))
            continue
        seen[key] = seen.get(key, 0) + 1
        if seen[key] == 1:
            first_pos[key] = pos
            if not body.strip():
                violations.append(Violation("empty_body", key, f"section {key!r} has an empty body"))
    for key, count in seen.items():
        if count > 1:
            violations.append(Violation("duplicate", key, f"section {key!r} appears {count} times"))
    for key in SECTION_KEYS:
        if key not in seen:
            violations.append(Violation("missing", key, f"section {key!r} is missing"))
    # Relative order of first occurrences must follow the canonical order.
    order = [k for k in sorted(first_pos, key=first_pos.get)]
    expected = [k for k in SECTION_KEYS if k in first_pos]
    if order != expected:
        misplaced = next(k for k, e in zip(order, expected) if k != e)
        violations.append(Violation("out_of_order", misplaced,
                                    f"section {misplaced!r} is out of canonical order"))
    return violations


def validate_rulebook(doc: StructuredRulebook | str | Sequence[tuple[str, str]]) -> list[Violation]:
    """Validate a structured rulebook, a markdown document, or parsed
    section pairs against the seven-section schema."""
    if isinstance(doc, StructuredRulebook):
        return validate_sections(doc.sections)
    if isinstance(doc, str):
        return validate_sections(parse_sections(doc))
    return validate_sections(doc)


def _missing_headers(pairs: Sequence[tuple[str, str]]) -> list[str]:
    present = {k for k, _ in pairs}
    return [k for k in SECTION_KEYS if k not in present]


def _request_sections(gateway: Gateway, config: EndpointConfig, prompt: str,
                      what: str) -> list[tuple[str, str]]:
    """Send a structuring-style prompt; on schema violations append a
    reminder naming the missing headers and re-query once."""
    response = gateway.chat(config, chat_request(None, prompt))
    pairs = parse_sections(response.text)
    violations = validate_sections(pairs)
    if not violations:
        return pairs
    missing = _missing_headers(pairs)
    reminder = (
        prompt
        + "\n\nREMINDER: Your previous reply did not follow the required structure."
        + (f" Missing headers: {', '.join(missing)}." if missing else "")
        + " Output ALL seven sections exactly once, in order, each with a non-empty body."
    )
    response = gateway.chat(config, chat_request(None, reminder))
    pairs = parse_sections(response.text)
    violations = validate_sections(pairs)
    if violations:
        raise StructuringError(
            f"{what}: reply violates the section schema after re-query: "
            + "; ".join(v.message for v in violations),
            violations=violations)
    return pairs


def structure_rulebook(raw_markdown: str, game_id: str, gateway: Gateway,
                       config: EndpointConfig) -> StructuredRulebook:
    """First pass: reorganize raw markdown into the seven-section layout."""
    prompt = prompts.fill(prompts.STRUCTURE_RULEBOOK, raw_markdown=raw_markdown)
    pairs = _request_sections(gateway, config, prompt, f"structure[{game_id}]")
    return StructuredRulebook(game_id=game_id, sections=tuple(pairs),
                              source_hash=source_hash(raw_markdown))


def rectify_rulebook(draft: StructuredRulebook, raw_markdown: str, gateway: Gateway,
                     config: EndpointConfig) -> tuple[StructuredRulebook, list[str]]:
    """Second pass: cross-check the draft against the source and correct
    numbers/omissions. Returns the rectified document plus the list of
    section keys whose bodies changed."""
    prompt = prompts.fill(prompts.RECTIFY_RULEBOOK,
                          raw_source=raw_markdown,
                          draft_markdown=draft.to_markdown())
    pairs = _request_sections(gateway, config, prompt, f"rectify[{draft.game_id}]")
    rectified = StructuredRulebook(game_id=draft.game_id, sections=tuple(pairs),
                                   source_hash=draft.source_hash)
    before = dict(draft.sections)
    changed = [k for k, v in rectified.sections if before.get(k, "").strip() != v.strip()]
    if changed:
        logger.info("rectify[%s]: sections changed: %s", draft.game_id, ", ".join(changed))
    return rectified, changed
