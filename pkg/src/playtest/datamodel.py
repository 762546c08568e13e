"""Shared domain types and line-delimited record persistence.

Every pipeline stage reads and writes the same record kinds: games,
structured rulebooks, raw and curated reviews, reasoning chains, SFT
records and simulated reviews. Records are serialized as UTF-8 JSON,
one object per line, with a fixed key order so repeated runs produce
byte-identical files and artifact digests are stable.

All enumerated vocabularies (section keys, review facets, persona
names, fact-check statuses) are closed: construction with a value
outside the vocabulary raises ValidationError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import RecordParseError, ValidationError

SECTION_KEYS = (
    "Lore & Objective",
    "Components",
    "Setup",
    "Gameplay Flow",
    "Core Mechanics",
    "Scoring & End Game",
    "FAQ or Edge Cases",
)

# Topics a rulebook does not cover are represented by this literal body.
NOT_MENTIONED = "Not Mentioned"

FACETS = (
    "Rule Clarity & Teachability",
    "Cognitive Load (Complexity)",
    "Interaction & Conflict",
    "Luck vs. Strategy",
    "Balance & Fairness",
    "Replayability & Variety",
    "Thematic Integration",
    "Pacing & Flow",
)

PERSONA_NAMES = (
    "The System Purist",
    "The Efficiency Essentialist",
    "The Narrative Architect",
    "The Social Lubricator",
    "The Thrill Seeker",
)

# Sentinel for reviews whose persona vote never converged. Never a
# simulation target and excluded from training corpora.
UNASSIGNED = "Unassigned"

FACT_STATUSES = ("SUPPORTED", "INFERRED", "CONTRADICTED")

SENTIMENT_TIERS = ("Positive", "Negative", "Neutral")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def _check_str(name: str, value: Any, allow_empty: bool = False) -> str:
    _require(isinstance(value, str), f"{name} must be a string, got {type(value).__name__}")
    if not allow_empty:
        _require(value.strip() != "", f"{name} must be non-empty")
    return value


def _check_number(name: str, value: Any, lo: float, hi: float) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"{name} must be a number, got {type(value).__name__}")
    _require(lo <= value <= hi, f"{name} out of [{lo:g}, {hi:g}]: {value!r}")
    return float(value)


def _check_int(name: str, value: Any, lo: int, hi: int | None = None) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{name} must be an integer, got {type(value).__name__}")
    _require(value >= lo and (hi is None or value <= hi),
             f"{name} out of [{lo}, {hi if hi is not None else 'inf'}]: {value!r}")
    return value


def _check_vocab(name: str, value: Any, vocab: Sequence[str]) -> str:
    _check_str(name, value)
    _require(value in vocab, f"{name} not in vocabulary: {value!r}")
    return value


def _canonical_subset(name: str, values: Any, vocab: Sequence[str]) -> tuple[str, ...]:
    """Validate a collection against a closed vocabulary; return it
    deduplicated in canonical vocabulary order."""
    _require(isinstance(values, (list, tuple)), f"{name} must be a list")
    for v in values:
        _check_vocab(f"{name} entry", v, vocab)
    present = set(values)
    return tuple(v for v in vocab if v in present)


def _reject_unknown(kind: str, data: Mapping[str, Any], allowed: Sequence[str]) -> None:
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ValidationError(f"{kind}: unknown keys {extra}")


@dataclass(frozen=True)
class GameRecord:
    """Catalog entry for one game."""

    game_id: str
    title: str
    weight: float          # complexity, [1, 5]
    avg_rating: float      # community average, [1, 10]
    year: int
    rank: int | None = None
    mechanics: tuple[str, ...] = ()
    themes: tuple[str, ...] = ()

    def __post_init__(self):
        _check_str("game_id", self.game_id)
        _check_str("title", self.title)
        object.__setattr__(self, "weight", _check_number("weight", self.weight, 1.0, 5.0))
        object.__setattr__(self, "avg_rating", _check_number("avg_rating", self.avg_rating, 1.0, 10.0))
        _check_int("year", self.year, 0)
        if self.rank is not None:
            _check_int("rank", self.rank, 1)
        for coll in ("mechanics", "themes"):
            values = getattr(self, coll)
            _require(isinstance(values, (list, tuple)), f"{coll} must be a list")
            for v in values:
                _check_str(f"{coll} entry", v)
            object.__setattr__(self, coll, tuple(sorted(set(values))))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "game_id": self.game_id,
            "title": self.title,
            "weight": self.weight,
            "avg_rating": self.avg_rating,
            "year": self.year,
        }
        if self.rank is not None:
            d["rank"] = self.rank
        d["mechanics"] = list(self.mechanics)
        d["themes"] = list(self.themes)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GameRecord":
        _reject_unknown("GameRecord", data,
                        ["game_id", "title", "weight", "avg_rating", "year", "rank", "mechanics", "themes"])
        return cls(
            game_id=data.get("game_id"),
            title=data.get("title"),
            weight=data.get("weight"),
            avg_rating=data.get("avg_rating"),
            year=data.get("year"),
            rank=data.get("rank"),
            mechanics=tuple(data.get("mechanics", ())),
            themes=tuple(data.get("themes", ())),
        )


@dataclass(frozen=True)
class StructuredRulebook:
    """A rulebook normalized to the fixed seven-section layout.

    ``sections`` maps each canonical section key to its markdown body.
    Construction enforces the full schema; use
    :func:`playtest.rulebook.validate_sections` to inspect violations
    in not-yet-valid parses.
    """

    game_id: str
    sections: tuple[tuple[str, str], ...]
    source_hash: str

    def __post_init__(self):
        _check_str("game_id", self.game_id)
        _check_str("source_hash", self.source_hash)
        pairs = tuple((k, v) for k, v in self.sections)
        # Local import: the section validator lives with the parser.
        from .rulebook import validate_sections

        violations = validate_sections(pairs)
        if violations:
            raise ValidationError(
                "sections violate the rulebook schema: "
                + "; ".join(v.message for v in violations)
            )
        ordered = tuple(sorted(pairs, key=lambda kv: SECTION_KEYS.index(kv[0])))
        object.__setattr__(self, "sections", ordered)

    def section(self, key: str) -> str:
        _check_vocab("section key", key, SECTION_KEYS)
        return dict(self.sections)[key]

    def to_markdown(self) -> str:
        parts = [f"## {i}. {k}\n{v.strip()}" for i, (k, v) in enumerate(self.sections, start=1)]
        return "\n\n".join(parts) + "\n"

    def to_dict(self) -> dict[str, Any]:
        return {
            "game_id": self.game_id,
            "sections": {k: v for k, v in self.sections},
            "source_hash": self.source_hash,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StructuredRulebook":
        _reject_unknown("StructuredRulebook", data, ["game_id", "sections", "source_hash"])
        sections = data.get("sections")
        _require(isinstance(sections, Mapping), "sections must be an object")
        return cls(
            game_id=data.get("game_id"),
            sections=tuple((k, v) for k, v in sections.items()),
            source_hash=data.get("source_hash"),
        )


@dataclass(frozen=True)
class RawReview:
    """One scraped user review, unmodified."""

    review_id: str
    game_id: str
    rating: float    # [1, 10]
    text: str
    source: str      # provenance tag for the scrape site

    def __post_init__(self):
        _check_str("review_id", self.review_id)
        _check_str("game_id", self.game_id)
        object.__setattr__(self, "rating", _check_number("rating", self.rating, 1.0, 10.0))
        _check_str("text", self.text)
        _check_str("source", self.source)

    def to_dict(self) -> dict[str, Any]:
        return {
            "review_id": self.review_id,
            "game_id": self.game_id,
            "rating": self.rating,
            "text": self.text,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RawReview":
        _reject_unknown("RawReview", data, ["review_id", "game_id", "rating", "text", "source"])
        return cls(
            review_id=data.get("review_id"),
            game_id=data.get("game_id"),
            rating=data.get("rating"),
            text=data.get("text"),
            source=data.get("source"),
        )


@dataclass(frozen=True)
class QualityAnnotation:
    """Judge verdict for one review: hard-filter flag, three 1-5 scores
    and the set of experience facets the review touches."""

    is_valid: bool
    filter_reason: str | None
    mechanism_anchoring: int
    causal_attribution: int
    constructiveness: int
    facets: tuple[str, ...] = ()

    def __post_init__(self):
        _require(isinstance(self.is_valid, bool), "is_valid must be a boolean")
        if self.filter_reason is not None:
            _check_str("filter_reason", self.filter_reason)
        _require(self.is_valid or self.filter_reason is not None,
                 "invalid review requires a filter_reason")
        for name in ("mechanism_anchoring", "causal_attribution", "constructiveness"):
            _check_int(name, getattr(self, name), 1, 5)
        object.__setattr__(self, "facets", _canonical_subset("facets", self.facets, FACETS))

    def mean_score(self) -> float:
        return (self.mechanism_anchoring + self.causal_attribution + self.constructiveness) / 3.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "is_valid": self.is_valid,
            "filter_reason": self.filter_reason,
            "mechanism_anchoring": self.mechanism_anchoring,
            "causal_attribution": self.causal_attribution,
            "constructiveness": self.constructiveness,
            "facets": list(self.facets),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QualityAnnotation":
        _reject_unknown("QualityAnnotation", data,
                        ["is_valid", "filter_reason", "mechanism_anchoring",
                         "causal_attribution", "constructiveness", "facets"])
        return cls(
            is_valid=data.get("is_valid"),
            filter_reason=data.get("filter_reason"),
            mechanism_anchoring=data.get("mechanism_anchoring"),
            causal_attribution=data.get("causal_attribution"),
            constructiveness=data.get("constructiveness"),
            facets=tuple(data.get("facets", ())),
        )


@dataclass(frozen=True)
class CuratedReview:
    """A review that survived quality curation, plus its annotation and
    (after labeling) the persona it is attributed to."""

    review_id: str
    game_id: str
    rating: float
    text: str
    source: str
    annotation: QualityAnnotation
    persona: str = UNASSIGNED

    def __post_init__(self):
        _check_str("review_id", self.review_id)
        _check_str("game_id", self.game_id)
        object.__setattr__(self, "rating", _check_number("rating", self.rating, 1.0, 10.0))
        _check_str("text", self.text)
        _check_str("source", self.source)
        _require(isinstance(self.annotation, QualityAnnotation),
                 "annotation must be a QualityAnnotation")
        _check_vocab("persona", self.persona, PERSONA_NAMES + (UNASSIGNED,))

    def with_persona(self, persona: str) -> "CuratedReview":
        return replace(self, persona=persona)

    def to_dict(self) -> dict[str, Any]:
        return {
            "review_id": self.review_id,
            "game_id": self.game_id,
            "rating": self.rating,
            "text": self.text,
            "source": self.source,
            "annotation": self.annotation.to_dict(),
            "persona": self.persona,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CuratedReview":
        _reject_unknown("CuratedReview", data,
                        ["review_id", "game_id", "rating", "text", "source", "annotation", "persona"])
        ann = data.get("annotation")
        _require(isinstance(ann, Mapping), "annotation must be an object")
        return cls(
            review_id=data.get("review_id"),
            game_id=data.get("game_id"),
            rating=data.get("rating"),
            text=data.get("text"),
            source=data.get("source"),
            annotation=QualityAnnotation.from_dict(ann),
            persona=data.get("persona", UNASSIGNED),
        )


@dataclass(frozen=True)
class PersonaProfile:
    """A named player archetype with its full semantic description."""

    name: str
    profile_text: str

    def __post_init__(self):
        _check_str("name", self.name)
        _check_str("profile_text", self.profile_text)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "profile_text": self.profile_text}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PersonaProfile":
        _reject_unknown("PersonaProfile", data, ["name", "profile_text"])
        return cls(name=data.get("name"), profile_text=data.get("profile_text"))


@dataclass(frozen=True)
class MdaChain:
    """Three-step reasoning trace from rules to experienced outcome:
    what the rules provide, how play unfolds around it, and what the
    player ends up feeling."""

    content_extraction: str
    dynamic_interaction: str
    experience_outcome: str

    def __post_init__(self):
        _check_str("content_extraction", self.content_extraction)
        _check_str("dynamic_interaction", self.dynamic_interaction)
        _check_str("experience_outcome", self.experience_outcome)

    def to_dict(self) -> dict[str, Any]:
        return {
            "content_extraction": self.content_extraction,
            "dynamic_interaction": self.dynamic_interaction,
            "experience_outcome": self.experience_outcome,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MdaChain":
        _reject_unknown("MdaChain", data,
                        ["content_extraction", "dynamic_interaction", "experience_outcome"])
        return cls(
            content_extraction=data.get("content_extraction"),
            dynamic_interaction=data.get("dynamic_interaction"),
            experience_outcome=data.get("experience_outcome"),
        )


@dataclass(frozen=True)
class SimulatedReview:
    """One validated generation from a simulated playtester run."""

    game_id: str
    persona: str
    rating: int          # integer [1, 10] per the output contract
    review: str
    run_index: int
    chain: MdaChain | None = None

    def __post_init__(self):
        _check_str("game_id", self.game_id)
        _check_vocab("persona", self.persona, PERSONA_NAMES)
        _check_int("rating", self.rating, 1, 10)
        _check_str("review", self.review)
        _check_int("run_index", self.run_index, 0)
        if self.chain is not None:
            _require(isinstance(self.chain, MdaChain), "chain must be an MdaChain")

    def to_dict(self) -> dict[str, Any]:
        return {
            "game_id": self.game_id,
            "persona": self.persona,
            "rating": self.rating,
            "review": self.review,
            "run_index": self.run_index,
            "chain": self.chain.to_dict() if self.chain is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimulatedReview":
        _reject_unknown("SimulatedReview", data,
                        ["game_id", "persona", "rating", "review", "run_index", "chain"])
        chain = data.get("chain")
        return cls(
            game_id=data.get("game_id"),
            persona=data.get("persona"),
            rating=data.get("rating"),
            review=data.get("review"),
            run_index=data.get("run_index"),
            chain=MdaChain.from_dict(chain) if chain is not None else None,
        )


RECORD_KINDS: dict[str, type] = {
    "game": GameRecord,
    "rulebook": StructuredRulebook,
    "raw_review": RawReview,
    "curated_review": CuratedReview,
    "persona_profile": PersonaProfile,
    "simulated_review": SimulatedReview,
}


def _resolve_kind(kind: str | type) -> type:
    if isinstance(kind, str):
        if kind not in RECORD_KINDS:
            raise ValidationError(f"unknown record kind {kind!r}")
        return RECORD_KINDS[kind]
    return kind


def dumps_record(record: Any) -> str:
    """Serialize one record to its canonical JSON line (no newline)."""
    return json.dumps(record.to_dict(), ensure_ascii=False)


def save_records(path: str | Path, records: Iterable[Any]) -> int:
    """Write records as line-delimited JSON. Returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec))
            fh.write("\n")
            n += 1
    return n


def iter_records(path: str | Path, kind: str | type) -> Iterator[Any]:
    """Yield records of one kind from a line-delimited JSON file.

    Raises RecordParseError with the 1-based line number on malformed
    lines; invariant violations surface as ValidationError.
    """
    cls = _resolve_kind(kind)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(f"invalid JSON ({exc.msg})", line_no) from exc
            if not isinstance(data, Mapping):
                raise RecordParseError("record line is not a JSON object", line_no)
            try:
                yield cls.from_dict(data)
            except ValidationError as exc:
                raise RecordParseError(str(exc), line_no) from exc


def load_records(path: str | Path, kind: str | type) -> list[Any]:
    return list(iter_records(path, kind))
