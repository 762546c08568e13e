"""Review quality annotation and corpus curation.

Raw reviews go through an LLM judge that applies hard filters (too
short, irrelevant, visuals-only, rating mismatch), scores three quality
dimensions on 1-5 scales and tags experience facets. Curation then
selects a per-game subset that preserves the rating distribution
(unit-width bins with largest-remainder quotas) while greedily
maximizing facet coverage among high-attribution reviews.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import prompts
from .datamodel import (
    FACETS,
    CuratedReview,
    QualityAnnotation,
    RawReview,
    UNASSIGNED,
)
from .errors import UndefinedMetricError, ValidationError
from .gateway import (
    ChatRequest,
    EndpointConfig,
    Gateway,
    Nullable,
    Opt,
    chat_request,
    judge_batches,
)
from .metrics import pearson_r
from .sampling import N_RATING_BINS, largest_remainder, rating_bin

logger = logging.getLogger(__name__)

JUDGE_FAILURE_REASON = "judge failure"

_ANNOTATION_SHAPE = {
    "is_valid": bool,
    "filter_reason": Nullable(str),
    "scores": {
        "mechanism_anchoring": int,
        "causal_attribution": int,
        "constructiveness": int,
    },
    "facets": [str],
}


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for per-game curation.

    The per-game target is clamp(round(retention_ratio * n_valid),
    min_per_game, max_per_game), never exceeding the number of valid
    reviews. Eligibility for the coverage-greedy pass requires
    causal_attribution >= quality_threshold.
    """

    retention_ratio: float = 0.08
    min_per_game: int = 50
    max_per_game: int = 100
    quality_threshold: int = 4

    def __post_init__(self):
        if not 0.0 < self.retention_ratio <= 1.0:
            raise ValidationError(f"retention_ratio out of (0, 1]: {self.retention_ratio}")
        if self.min_per_game < 1 or self.max_per_game < self.min_per_game:
            raise ValidationError(
                f"invalid per-game bounds [{self.min_per_game}, {self.max_per_game}]")
        if not 1 <= self.quality_threshold <= 5:
            raise ValidationError(f"quality_threshold out of [1, 5]: {self.quality_threshold}")


@dataclass
class SelectionStats:
    total_reviews: int
    total_valid: int
    total_selected: int
    retention: float
    rating_pearson_r: float | None
    facet_coverage: float | None
    score_deltas: dict[str, float]
    games_without_valid: list[str] = field(default_factory=list)
    per_game_selected: dict[str, int] = field(default_factory=dict)


def _judge_failure_annotation() -> QualityAnnotation:
    return QualityAnnotation(
        is_valid=False,
        filter_reason=JUDGE_FAILURE_REASON,
        mechanism_anchoring=1,
        causal_attribution=1,
        constructiveness=1,
        facets=(),
    )


def parse_annotation(item: Mapping) -> QualityAnnotation:
    """Convert one judge reply object into a QualityAnnotation.

    Raises ValidationError on out-of-range scores or unknown facets;
    a filter_reason on a valid review is dropped rather than rejected.
    """
    scores = item["scores"]
    is_valid = item["is_valid"]
    return QualityAnnotation(
        is_valid=is_valid,
        filter_reason=item["filter_reason"] if not is_valid else None,
        mechanism_anchoring=scores["mechanism_anchoring"],
        causal_attribution=scores["causal_attribution"],
        constructiveness=scores["constructiveness"],
        facets=tuple(item.get("facets", ())),
    )


def _quality_request(batch: Sequence[RawReview]) -> ChatRequest:
    payload = [{"rating": r.rating, "text": r.text} for r in batch]
    prompt = prompts.fill(
        prompts.REVIEW_QUALITY,
        batch_size=len(batch),
        reviews_json=json.dumps(payload, ensure_ascii=False),
    )
    return chat_request(None, prompt)


def annotate_reviews(reviews: Sequence[RawReview], gateway: Gateway,
                     config: EndpointConfig, batch_size: int = 10) -> list[CuratedReview]:
    """Run the quality judge over all reviews.

    Batches of ``batch_size`` are judged together; a reply array of the
    wrong length triggers one re-query and then a per-item fallback. A
    review whose annotation never parses is kept but marked invalid
    with reason "judge failure".
    """
    raw_items = judge_batches(gateway, config, reviews, _quality_request,
                              _ANNOTATION_SHAPE, batch_size=batch_size)
    out: list[CuratedReview] = []
    for review, item in zip(reviews, raw_items):
        if item is None:
            annotation = _judge_failure_annotation()
        else:
            try:
                annotation = parse_annotation(item)
            except (ValidationError, KeyError, TypeError) as exc:
                logger.warning("annotation for %s rejected: %s", review.review_id, exc)
                annotation = _judge_failure_annotation()
        out.append(CuratedReview(
            review_id=review.review_id,
            game_id=review.game_id,
            rating=review.rating,
            text=review.text,
            source=review.source,
            annotation=annotation,
            persona=UNASSIGNED,
        ))
    return out


def _target_size(n_valid: int, config: SelectionConfig) -> int:
    t = round(config.retention_ratio * n_valid)
    t = max(config.min_per_game, min(config.max_per_game, t))
    return min(t, n_valid)


def _greedy_order_key(review: CuratedReview, covered: set[str]):
    gain = len(set(review.annotation.facets) - covered)
    return (gain, review.annotation.mean_score(), len(review.text), review.review_id)


def _backfill_order(candidates: list[CuratedReview]) -> list[CuratedReview]:
    return sorted(candidates,
                  key=lambda r: (-r.annotation.mean_score(), -len(r.text), r.review_id))


def _select_for_game(valid: list[CuratedReview], config: SelectionConfig) -> list[CuratedReview]:
    target = _target_size(len(valid), config)
    bins: list[list[CuratedReview]] = [[] for _ in range(N_RATING_BINS)]
    for r in valid:
        bins[rating_bin(r.rating)].append(r)
    quotas = largest_remainder([len(b) for b in bins], target)

    chosen: list[CuratedReview] = []
    chosen_ids: set[str] = set()
    covered: set[str] = set()
    shortfall: dict[int, int] = {}

    for b in range(N_RATING_BINS):
        need = quotas[b]
        if need == 0:
            continue
        eligible = [r for r in bins[b]
                    if r.annotation.causal_attribution >= config.quality_threshold]
        while need > 0 and eligible:
            best = max(eligible, key=lambda r: _greedy_order_key(r, covered))
            eligible.remove(best)
            chosen.append(best)
            chosen_ids.add(best.review_id)
            covered.update(best.annotation.facets)
            need -= 1
        if need > 0:
            for r in _backfill_order([r for r in bins[b] if r.review_id not in chosen_ids]):
                if need == 0:
                    break
                chosen.append(r)
                chosen_ids.add(r.review_id)
                covered.update(r.annotation.facets)
                need -= 1
        if need > 0:
            shortfall[b] = need

    # Residual shortfall drains neighbouring bins, nearest first, lower
    # bin before higher at equal distance.
    for b in sorted(shortfall):
        need = shortfall[b]
        for dist in range(1, N_RATING_BINS):
            if need == 0:
                break
            for nb in (b - dist, b + dist):
                if need == 0 or not 0 <= nb < N_RATING_BINS:
                    continue
                for r in _backfill_order([r for r in bins[nb] if r.review_id not in chosen_ids]):
                    if need == 0:
                        break
                    chosen.append(r)
                    chosen_ids.add(r.review_id)
                    covered.update(r.annotation.facets)
                    need -= 1
    return chosen


def select_reviews(annotated: Iterable[CuratedReview],
                   config: SelectionConfig | None = None
                   ) -> tuple[list[CuratedReview], SelectionStats]:
    """Curate the corpus one game at a time.

    Output order is (game_id, review_id). Games with zero valid reviews
    are recorded in the stats and contribute nothing.
    """
    config = config or SelectionConfig()
    annotated = list(annotated)
    by_game: dict[str, list[CuratedReview]] = {}
    for r in annotated:
        by_game.setdefault(r.game_id, []).append(r)

    selected: list[CuratedReview] = []
    games_without_valid: list[str] = []
    per_game_selected: dict[str, int] = {}
    for game_id in sorted(by_game):
        valid = [r for r in by_game[game_id] if r.annotation.is_valid]
        if not valid:
            games_without_valid.append(game_id)
            continue
        picks = sorted(_select_for_game(valid, config), key=lambda r: r.review_id)
        per_game_selected[game_id] = len(picks)
        selected.extend(picks)

    stats = selection_stats(annotated, selected)
    stats.games_without_valid = games_without_valid
    stats.per_game_selected = per_game_selected
    return selected, stats


def selection_stats(original: Sequence[CuratedReview],
                    selected: Sequence[CuratedReview]) -> SelectionStats:
    """Fidelity summary: rating correlation, facet coverage retention
    and mean quality-score shifts against the full annotated corpus."""
    orig_by_game: dict[str, list[CuratedReview]] = {}
    for r in original:
        orig_by_game.setdefault(r.game_id, []).append(r)
    sel_by_game: dict[str, list[CuratedReview]] = {}
    for r in selected:
        sel_by_game.setdefault(r.game_id, []).append(r)

    common = sorted(set(orig_by_game) & set(sel_by_game))
    r_value: float | None = None
    if len(common) >= 2:
        orig_means = [sum(x.rating for x in orig_by_game[g]) / len(orig_by_game[g]) for g in common]
        sel_means = [sum(x.rating for x in sel_by_game[g]) / len(sel_by_game[g]) for g in common]
        try:
            r_value = pearson_r(orig_means, sel_means)
        except UndefinedMetricError:
            r_value = None

    valid_orig = [r for r in original if r.annotation.is_valid]
    orig_pairs = {(r.game_id, f) for r in valid_orig for f in r.annotation.facets}
    sel_pairs = {(r.game_id, f) for r in selected for f in r.annotation.facets}
    coverage = len(sel_pairs & orig_pairs) / len(orig_pairs) if orig_pairs else None

    deltas: dict[str, float] = {}
    if valid_orig and selected:
        for name in ("mechanism_anchoring", "causal_attribution", "constructiveness"):
            before = sum(getattr(r.annotation, name) for r in valid_orig) / len(valid_orig)
            after = sum(getattr(r.annotation, name) for r in selected) / len(selected)
            deltas[name] = after - before

    return SelectionStats(
        total_reviews=len(original),
        total_valid=len(valid_orig),
        total_selected=len(selected),
        retention=len(selected) / len(original) if original else 0.0,
        rating_pearson_r=r_value,
        facet_coverage=coverage,
        score_deltas=deltas,
    )


def facet_coverage_pairs(reviews: Sequence[CuratedReview]) -> set[tuple[str, str]]:
    """(game, facet) pairs represented in a review set."""
    return {(r.game_id, f) for r in reviews for f in r.annotation.facets}
