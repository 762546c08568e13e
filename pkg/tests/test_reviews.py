"""Quality annotation parsing and distribution-preserving curation."""

from __future__ import annotations

import json
import random

import pytest

from conftest import JUDGE_CONFIG, offline_gateway, scripted_gateway
from playtest.datamodel import FACETS, CuratedReview, QualityAnnotation, RawReview
from playtest.errors import ValidationError
from playtest.gateway import MockTransport
from playtest.reviews import (
    JUDGE_FAILURE_REASON,
    SelectionConfig,
    annotate_reviews,
    facet_coverage_pairs,
    parse_annotation,
    select_reviews,
    selection_stats,
)
from playtest.sampling import rating_bin


def valid_item(**over):
    base = {
        "is_valid": True,
        "filter_reason": None,
        "scores": {"mechanism_anchoring": 4, "causal_attribution": 5,
                   "constructiveness": 3},
        "facets": ["Pacing & Flow"],
    }
    base.update(over)
    return base


def make_review(review_id: str, game_id: str = "g", rating: float = 6.0,
                text: str = "long enough text here", **ann_over) -> CuratedReview:
    ann = dict(is_valid=True, filter_reason=None, mechanism_anchoring=3,
               causal_attribution=4, constructiveness=3, facets=())
    ann.update(ann_over)
    return CuratedReview(review_id=review_id, game_id=game_id, rating=rating,
                         text=text, source="forum",
                         annotation=QualityAnnotation(**ann))


# -- annotation parsing --------------------------------------------------


def test_parse_annotation_valid() -> None:
    ann = parse_annotation(valid_item())
    assert ann.is_valid and ann.filter_reason is None
    assert ann.mean_score() == pytest.approx(4.0)
    assert ann.facets == ("Pacing & Flow",)


def test_parse_annotation_drops_reason_on_valid() -> None:
    ann = parse_annotation(valid_item(filter_reason="Too Short"))
    assert ann.is_valid and ann.filter_reason is None


def test_parse_annotation_invalid_keeps_reason() -> None:
    ann = parse_annotation(valid_item(is_valid=False, filter_reason="Irrelevant"))
    assert not ann.is_valid
    assert ann.filter_reason == "Irrelevant"


def test_parse_annotation_rejects_out_of_range() -> None:
    bad = valid_item()
    bad["scores"]["causal_attribution"] = 9
    with pytest.raises(ValidationError):
        parse_annotation(bad)
    with pytest.raises(ValidationError):
        parse_annotation(valid_item(facets=["Sparkle"]))


def test_annotate_reviews_offline_applies_hard_filters() -> None:
    reviews = [RawReview(review_id=f"j{i}", game_id="g", rating=r, text=t, source="s")
               for i, (r, t) in enumerate([
                   (7.0, "Way too short."),
                   (6.0, "The kickstarter shipping saga dragged on for half a year "
                         "and the box arrived crushed, which soured the whole thing."),
                   (9.0, " ".join(["word"] * 25) + " everything felt broken honestly."),
                   (6.0, "The drafting choices this game offers manage to keep every "
                         "round of play interesting and the whole table stayed fully "
                         "engaged from the opening deal to the final score."),
               ])]
    curated = annotate_reviews(reviews, offline_gateway(), JUDGE_CONFIG)
    assert [c.annotation.is_valid for c in curated] == [False, False, False, True]
    assert curated[0].annotation.filter_reason == "Too Short"
    assert curated[1].annotation.filter_reason == "Irrelevant"
    assert curated[2].annotation.filter_reason == "Rating Mismatch"


def test_annotate_reviews_judge_failure_marks_invalid() -> None:
    # Responder emits unparseable garbage for every request: batch try,
    # re-query and the per-item fallback all fail, so each review keeps
    # a "judge failure" annotation instead of being dropped.
    reviews = [RawReview(review_id=f"r{i}", game_id="g", rating=5.0,
                         text=f"body {i}", source="s") for i in range(3)]
    gateway = scripted_gateway(MockTransport(lambda req: "no json here"))
    curated = annotate_reviews(reviews, gateway, JUDGE_CONFIG, batch_size=2)
    assert len(curated) == 3
    for c in curated:
        assert not c.annotation.is_valid
        assert c.annotation.filter_reason == JUDGE_FAILURE_REASON


def test_annotate_reviews_bad_item_shape_falls_back_per_review() -> None:
    reviews = [RawReview(review_id="r0", game_id="g", rating=5.0,
                         text="alpha", source="s"),
               RawReview(review_id="r1", game_id="g", rating=6.0,
                         text="beta", source="s")]

    def responder(req):
        body = req.messages[-1]["content"]
        n = body.count('"rating"')
        if n == 2:
            return json.dumps([valid_item(), valid_item()])[:-2]   # truncated JSON
        return json.dumps([valid_item(facets=["Balance & Fairness"])])

    curated = annotate_reviews(reviews, scripted_gateway(MockTransport(responder)),
                               JUDGE_CONFIG)
    assert all(c.annotation.is_valid for c in curated)
    assert curated[0].annotation.facets == ("Balance & Fairness",)


# -- selection ------------------------------------------------------------


def test_selection_config_validation() -> None:
    with pytest.raises(ValidationError):
        SelectionConfig(retention_ratio=0.0)
    with pytest.raises(ValidationError):
        SelectionConfig(min_per_game=10, max_per_game=5)
    with pytest.raises(ValidationError):
        SelectionConfig(quality_threshold=6)


def test_target_size_clamps() -> None:
    config = SelectionConfig()
    pool = [make_review(f"r{i:04d}", rating=1 + (i % 9) + 0.5) for i in range(2000)]
    selected, _ = select_reviews(pool, config)
    assert len(selected) == 100        # 0.08 * 2000 = 160 -> max cap

    small = [make_review(f"s{i:02d}", rating=1 + (i % 9) + 0.5) for i in range(30)]
    selected, _ = select_reviews(small, config)
    assert len(selected) == 30         # fewer valid than the floor: take all


def test_selection_respects_bin_quotas() -> None:
    rng = random.Random(31)
    pool = [make_review(f"r{i:04d}", rating=rng.uniform(1, 10),
                        causal_attribution=rng.randint(1, 5))
            for i in range(800)]
    config = SelectionConfig()
    selected, _ = select_reviews(pool, config)
    assert len(selected) == 64         # round(0.08 * 800)
    from playtest.sampling import largest_remainder
    bin_counts = [0] * 9
    for r in pool:
        bin_counts[rating_bin(r.rating)] += 1
    expected = largest_remainder(bin_counts, 64)
    got = [0] * 9
    for r in selected:
        got[rating_bin(r.rating)] += 1
    assert got == expected


def test_selection_prefers_high_attribution_and_facet_gain() -> None:
    # One bin, quota 2 out of 4. Eligible (attribution >= 4): a, b, c.
    # Greedy takes widest facet gain first, then the best mean score.
    reviews = [
        make_review("a", rating=5.5, causal_attribution=5,
                    facets=("Pacing & Flow",), mechanism_anchoring=5),
        make_review("b", rating=5.5, causal_attribution=4,
                    facets=("Pacing & Flow", "Balance & Fairness")),
        make_review("c", rating=5.5, causal_attribution=4, facets=("Pacing & Flow",)),
        make_review("d", rating=5.5, causal_attribution=1, mechanism_anchoring=5,
                    constructiveness=5, facets=tuple(FACETS)),
    ]
    config = SelectionConfig(retention_ratio=0.5, min_per_game=1, max_per_game=2)
    selected, _ = select_reviews(reviews, config)
    assert [r.review_id for r in selected] == ["a", "b"]


def test_selection_backfills_same_bin_with_low_attribution() -> None:
    reviews = [
        make_review("a", rating=5.5, causal_attribution=5),
        make_review("b", rating=5.5, causal_attribution=1, mechanism_anchoring=4),
        make_review("c", rating=5.5, causal_attribution=1, mechanism_anchoring=2),
    ]
    config = SelectionConfig(retention_ratio=0.67, min_per_game=1, max_per_game=2)
    selected, _ = select_reviews(reviews, config)
    # Eligible pool exhausts after "a"; backfill prefers higher mean score.
    assert [r.review_id for r in selected] == ["a", "b"]


def test_selection_spills_into_adjacent_bins() -> None:
    # Quotas land where the mass is, but if a bin empties mid-draw the
    # shortfall drains the nearest neighbours.
    reviews = [make_review(f"lo{i}", rating=2.5) for i in range(6)]
    reviews += [make_review(f"hi{i}", rating=8.5) for i in range(6)]
    config = SelectionConfig(retention_ratio=1.0, min_per_game=1, max_per_game=12)
    selected, _ = select_reviews(reviews, config)
    assert len(selected) == 12


def test_selection_orders_output_by_game_then_id() -> None:
    reviews = [make_review("z9", game_id="g2", rating=5.5),
               make_review("a1", game_id="g2", rating=5.5),
               make_review("m5", game_id="g1", rating=5.5)]
    config = SelectionConfig(retention_ratio=1.0, min_per_game=1, max_per_game=10)
    selected, _ = select_reviews(reviews, config)
    assert [(r.game_id, r.review_id) for r in selected] == [
        ("g1", "m5"), ("g2", "a1"), ("g2", "z9")]


def test_selection_skips_invalid_and_reports_empty_games() -> None:
    reviews = [
        make_review("a", game_id="g1", rating=5.5),
        make_review("b", game_id="g2", rating=5.5, is_valid=False,
                    filter_reason="Too Short"),
    ]
    config = SelectionConfig(retention_ratio=1.0, min_per_game=1, max_per_game=10)
    selected, stats = select_reviews(reviews, config)
    assert [r.review_id for r in selected] == ["a"]
    assert stats.games_without_valid == ["g2"]
    assert stats.per_game_selected == {"g1": 1}
    assert stats.total_valid == 1


def test_selection_stats_coverage_and_deltas() -> None:
    original = [
        make_review("a", game_id="g1", rating=8.0, facets=("Pacing & Flow",),
                    causal_attribution=5),
        make_review("b", game_id="g1", rating=4.0, facets=("Balance & Fairness",),
                    causal_attribution=1),
        make_review("c", game_id="g2", rating=6.0, facets=("Pacing & Flow",),
                    causal_attribution=5),
        make_review("d", game_id="g2", rating=2.0, facets=(), causal_attribution=1),
    ]
    selected = [original[0], original[2]]
    stats = selection_stats(original, selected)
    # g1 facets {P} of {P, B} kept, g2 {P} of {P} kept -> 2/3.
    assert stats.facet_coverage == pytest.approx(2 / 3)
    # Attribution mean moves from (5+1+5+1)/4 = 3 to (5+5)/2 = 5.
    assert stats.score_deltas["causal_attribution"] == pytest.approx(2.0)
    assert stats.rating_pearson_r is not None
    assert facet_coverage_pairs(selected) == {("g1", "Pacing & Flow"),
                                              ("g2", "Pacing & Flow")}


def test_selection_on_generated_corpus(corpus) -> None:
    data_dir, manifest = corpus
    from playtest.datamodel import load_records
    raws = load_records(data_dir / "reviews.jsonl", "raw_review")
    curated = annotate_reviews(raws, offline_gateway(), JUDGE_CONFIG)
    # Exactly the planted junk fails the filters.
    invalid = {c.review_id: c.annotation.filter_reason for c in curated
               if not c.annotation.is_valid}
    expected_reasons = {"too_short": "Too Short", "irrelevant": "Irrelevant",
                        "visuals": "Visuals Only", "mismatch": "Rating Mismatch"}
    assert invalid == {rid: expected_reasons[kind]
                       for rid, kind in manifest.junk_ids.items()}
    selected, stats = select_reviews(curated)
    assert stats.per_game_selected == {g: 50 for g in manifest.game_ids}
    assert stats.rating_pearson_r > 0.95
