"""Record model: vocabularies, invariants and JSONL persistence."""

from __future__ import annotations

import json

import pytest

from playtest.datamodel import (
    FACETS,
    FACT_STATUSES,
    GameRecord,
    MdaChain,
    NOT_MENTIONED,
    PERSONA_NAMES,
    QualityAnnotation,
    CuratedReview,
    RawReview,
    SECTION_KEYS,
    SimulatedReview,
    StructuredRulebook,
    UNASSIGNED,
    dumps_record,
    iter_records,
    load_records,
    save_records,
)
from playtest.errors import RecordParseError, ValidationError


def make_sections(bodies: dict[str, str] | None = None) -> tuple[tuple[str, str], ...]:
    over = bodies or {}
    return tuple((k, over.get(k, f"Body for {k}.")) for k in SECTION_KEYS)


def make_annotation(**over) -> QualityAnnotation:
    base = dict(is_valid=True, filter_reason=None, mechanism_anchoring=4,
                causal_attribution=5, constructiveness=3,
                facets=("Pacing & Flow",))
    base.update(over)
    return QualityAnnotation(**base)


def make_curated(**over) -> CuratedReview:
    base = dict(review_id="r1", game_id="g1", rating=7.0, text="Plays fast.",
                source="forum", annotation=make_annotation())
    base.update(over)
    return CuratedReview(**base)


def test_vocabulary_sizes_and_sentinels() -> None:
    assert len(SECTION_KEYS) == 7
    assert len(FACETS) == 8
    assert len(PERSONA_NAMES) == 5
    assert FACT_STATUSES == ("SUPPORTED", "INFERRED", "CONTRADICTED")
    assert NOT_MENTIONED == "Not Mentioned"
    assert UNASSIGNED not in PERSONA_NAMES


def test_game_record_rejects_out_of_range_weight() -> None:
    with pytest.raises(ValidationError):
        GameRecord(game_id="g", title="T", weight=5.5, avg_rating=7.0, year=2020)


def test_game_record_rating_bounds() -> None:
    with pytest.raises(ValidationError):
        GameRecord(game_id="g", title="T", weight=2.0, avg_rating=0.5, year=2020)


def test_structured_rulebook_requires_all_sections() -> None:
    partial = make_sections()[:-1]
    with pytest.raises(ValidationError):
        StructuredRulebook(game_id="g", sections=partial, source_hash="h")


def test_structured_rulebook_rejects_out_of_order_sections() -> None:
    shuffled = tuple(reversed(make_sections()))
    with pytest.raises(ValidationError):
        StructuredRulebook(game_id="g", sections=shuffled, source_hash="h")


def test_structured_rulebook_markdown_headers_numbered() -> None:
    doc = StructuredRulebook(game_id="g", sections=make_sections(), source_hash="h")
    md = doc.to_markdown()
    for i, key in enumerate(SECTION_KEYS, start=1):
        assert f"## {i}. {key}" in md


def test_not_mentioned_body_is_schema_valid() -> None:
    doc = StructuredRulebook(
        game_id="g", sections=make_sections({"FAQ or Edge Cases": NOT_MENTIONED}),
        source_hash="h")
    assert doc.section("FAQ or Edge Cases") == NOT_MENTIONED


def test_annotation_mean_score() -> None:
    ann = make_annotation(mechanism_anchoring=3, causal_attribution=4, constructiveness=5)
    assert ann.mean_score() == pytest.approx(4.0)


def test_annotation_invalid_requires_reason() -> None:
    with pytest.raises(ValidationError):
        make_annotation(is_valid=False, filter_reason=None)


def test_annotation_rejects_unknown_facet() -> None:
    with pytest.raises(ValidationError):
        make_annotation(facets=("Shiny Bits",))


def test_annotation_scores_bounded() -> None:
    with pytest.raises(ValidationError):
        make_annotation(causal_attribution=6)


def test_curated_review_persona_vocab() -> None:
    assert make_curated().persona == UNASSIGNED
    labeled = make_curated().with_persona("The Thrill Seeker")
    assert labeled.persona == "The Thrill Seeker"
    with pytest.raises(ValidationError):
        make_curated(persona="The Completionist")


def test_simulated_review_rating_must_be_integer() -> None:
    with pytest.raises(ValidationError):
        SimulatedReview(game_id="g", persona=PERSONA_NAMES[0], rating=7.5,
                        review="ok", run_index=0)


def test_simulated_review_true_false_rating_rejected() -> None:
    with pytest.raises(ValidationError):
        SimulatedReview(game_id="g", persona=PERSONA_NAMES[0], rating=True,
                        review="ok", run_index=0)


def test_roundtrip_all_record_kinds(tmp_path) -> None:
    chain = MdaChain(content_extraction="a", dynamic_interaction="b",
                     experience_outcome="c")
    records = {
        "game": [GameRecord(game_id="g", title="T", weight=2.5, avg_rating=7.1,
                            year=2018, rank=12, mechanics=("dice",), themes=("space",))],
        "rulebook": [StructuredRulebook(game_id="g", sections=make_sections(),
                                        source_hash="abc")],
        "raw_review": [RawReview(review_id="r", game_id="g", rating=6.0,
                                 text="fine", source="forum")],
        "curated_review": [make_curated()],
        "simulated_review": [SimulatedReview(game_id="g", persona=PERSONA_NAMES[1],
                                             rating=8, review="good", run_index=3,
                                             chain=chain)],
    }
    for kind, recs in records.items():
        path = tmp_path / f"{kind}.jsonl"
        assert save_records(path, recs) == len(recs)
        assert load_records(path, kind) == recs


def test_save_is_byte_stable(tmp_path) -> None:
    recs = [RawReview(review_id=f"r{i}", game_id="g", rating=5.0,
                      text=f"text {i}", source="forum") for i in range(5)]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_records(p1, recs)
    save_records(p2, load_records(p1, "raw_review"))
    assert p1.read_bytes() == p2.read_bytes()


def test_dumps_record_preserves_field_order_and_unicode() -> None:
    rec = RawReview(review_id="r", game_id="g", rating=5.0, text="très bon",
                    source="forum")
    line = dumps_record(rec)
    assert "très bon" in line                      # no \u escapes
    assert list(json.loads(line)) == ["review_id", "game_id", "rating", "text", "source"]


def test_unknown_key_rejected(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    row = {"review_id": "r", "game_id": "g", "rating": 5.0, "text": "x",
           "source": "s", "sentiment": "happy"}
    path.write_text(json.dumps(row) + "\n", encoding="utf-8")
    with pytest.raises(RecordParseError) as exc_info:
        load_records(path, "raw_review")
    assert "sentiment" in str(exc_info.value)


def test_parse_error_carries_line_number(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    good = dumps_record(RawReview(review_id="r", game_id="g", rating=5.0,
                                  text="x", source="s"))
    path.write_text(good + "\n" + "{not json\n", encoding="utf-8")
    with pytest.raises(RecordParseError) as exc_info:
        load_records(path, "raw_review")
    assert exc_info.value.line_no == 2
    assert "line 2" in str(exc_info.value)


def test_blank_lines_skipped(tmp_path) -> None:
    rec = RawReview(review_id="r", game_id="g", rating=5.0, text="x", source="s")
    path = tmp_path / "gaps.jsonl"
    path.write_text("\n" + dumps_record(rec) + "\n\n", encoding="utf-8")
    assert load_records(path, "raw_review") == [rec]


def test_non_object_line_rejected(tmp_path) -> None:
    path = tmp_path / "arr.jsonl"
    path.write_text("[1, 2, 3]\n", encoding="utf-8")
    with pytest.raises(RecordParseError):
        load_records(path, "raw_review")


def test_iter_records_unknown_kind() -> None:
    with pytest.raises(ValidationError):
        list(iter_records("/nonexistent", "weird_kind"))
