"""Evaluation harness for simulated playtests.

Two layers: pure alignment metrics against the human corpus (rating
MAE, distribution distance, rank correlation, lexical diversity, tier
confusion) and LLM-judged metrics (fact grounding against the
rulebook, perspective diversity, two-stage opinion recovery). Reports
serialize to plot-ready CSV files.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import metrics, prompts
from .datamodel import (
    CuratedReview,
    FACT_STATUSES,
    PERSONA_NAMES,
    SimulatedReview,
)
from .errors import JsonExtractError, JsonShapeError, UndefinedMetricError
from .gateway import (
    EndpointConfig,
    Gateway,
    Opt,
    chat_request,
    extract_json,
)

logger = logging.getLogger(__name__)

_CLAIM_SHAPE = [{"claim": str, "status": str, "reason": Opt(str)}]
_DIVERSITY_SHAPE = {"score": int, "reason": Opt(str)}

DIVERSITY_CHUNK = 5
DIVERSITY_MIN_CHUNK = 2
MINING_BATCH = 10
MATCHING_BATCH = 10


@dataclass(frozen=True)
class Claim:
    claim: str
    status: str


def fact_check(review_text: str, rulebook_text: str, gateway: Gateway,
               config: EndpointConfig) -> list[Claim] | None:
    """Extract and verify factual claims for one review.

    Budget: one re-query, spent on either a parse failure or an
    out-of-vocabulary status. Claims whose status never lands in the
    vocabulary are dropped; a reply that never parses yields None.
    """
    request = chat_request(
        prompts.FACT_CHECK_SYSTEM,
        prompts.fill(prompts.FACT_CHECK_USER,
                     rulebook_text=rulebook_text, review_text=review_text),
    )

    def attempt() -> list[dict] | None:
        reply = gateway.chat(config, request)
        try:
            return extract_json(reply.text, _CLAIM_SHAPE)
        except (JsonExtractError, JsonShapeError) as exc:
            logger.warning("fact-check reply malformed: %s", exc)
            return None

    first = attempt()
    if first is not None and all(c["status"] in FACT_STATUSES for c in first):
        return [Claim(c["claim"], c["status"]) for c in first]

    second = attempt()
    usable = second if second is not None else first
    if usable is None:
        return None
    kept = [Claim(c["claim"], c["status"]) for c in usable
            if c["status"] in FACT_STATUSES]
    dropped = len(usable) - len(kept)
    if dropped:
        logger.warning("dropped %d claims with out-of-vocabulary status", dropped)
    return kept


@dataclass
class FactCheckResult:
    statuses_by_game: dict[str, list[str]]
    checked_runs: int
    unusable_runs: int
    accuracy_by_game: dict[str, float]
    pooled_accuracy: float | None

    def total_claims(self) -> int:
        return sum(len(v) for v in self.statuses_by_game.values())


def fact_check_corpus(sim_reviews: Sequence[SimulatedReview],
                      rulebook_texts: Mapping[str, str], gateway: Gateway,
                      config: EndpointConfig) -> FactCheckResult:
    statuses_by_game: dict[str, list[str]] = {}
    checked = 0
    unusable = 0
    for review in sim_reviews:
        rulebook_text = rulebook_texts.get(review.game_id, "")
        claims = fact_check(review.review, rulebook_text, gateway, config)
        if claims is None:
            unusable += 1
            continue
        checked += 1
        statuses_by_game.setdefault(review.game_id, []).extend(
            c.status for c in claims)

    accuracy_by_game: dict[str, float] = {}
    pooled: list[str] = []
    for game_id, statuses in sorted(statuses_by_game.items()):
        pooled.extend(statuses)
        if statuses:
            accuracy_by_game[game_id] = metrics.fact_accuracy(statuses)
    pooled_accuracy = metrics.fact_accuracy(pooled) if pooled else None
    return FactCheckResult(
        statuses_by_game=statuses_by_game,
        checked_runs=checked,
        unusable_runs=unusable,
        accuracy_by_game=accuracy_by_game,
        pooled_accuracy=pooled_accuracy,
    )


@dataclass
class DiversityResult:
    chunk_scores: list[tuple[str, str, int, int]]
    mean_by_game: dict[str, float]
    overall_mean: float | None
    dropped_chunks: int


def _numbered_block(texts: Sequence[str]) -> str:
    return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=1))


def diversity_scores(sim_reviews: Sequence[SimulatedReview], gateway: Gateway,
                     config: EndpointConfig, chunk_size: int = DIVERSITY_CHUNK,
                     min_chunk: int = DIVERSITY_MIN_CHUNK) -> DiversityResult:
    """Judge semantic diversity per (game, persona) cell in run order.

    Reviews are chunked; a trailing chunk below min_chunk is skipped
    because diversity over a single text is meaningless. A chunk whose
    judgment never parses (or whose score leaves 1-5) is re-queried
    once and then dropped.
    """
    cells: dict[tuple[str, str], list[SimulatedReview]] = {}
    for review in sim_reviews:
        cells.setdefault((review.game_id, review.persona), []).append(review)

    chunk_scores: list[tuple[str, str, int, int]] = []
    dropped = 0
    for (game_id, persona), members in sorted(cells.items()):
        members = sorted(members, key=lambda r: r.run_index)
        for chunk_index, start in enumerate(range(0, len(members), chunk_size)):
            chunk = members[start:start + chunk_size]
            if len(chunk) < min_chunk:
                continue
            request = chat_request(
                prompts.fill(prompts.DIVERSITY_SYSTEM, batch_len=len(chunk)),
                prompts.fill(prompts.DIVERSITY_USER, game_id=game_id, persona=persona,
                             batch_len=len(chunk),
                             reviews_text_block=_numbered_block([r.review for r in chunk])),
            )
            score = None
            for _ in range(2):
                reply = gateway.chat(config, request)
                try:
                    parsed = extract_json(reply.text, _DIVERSITY_SHAPE)
                except (JsonExtractError, JsonShapeError) as exc:
                    logger.warning("diversity reply malformed: %s", exc)
                    continue
                if 1 <= parsed["score"] <= 5:
                    score = parsed["score"]
                    break
                logger.warning("diversity score out of range: %r", parsed["score"])
            if score is None:
                dropped += 1
                continue
            chunk_scores.append((game_id, persona, chunk_index, score))

    by_game: dict[str, list[int]] = {}
    for game_id, _, _, score in chunk_scores:
        by_game.setdefault(game_id, []).append(score)
    mean_by_game = {g: sum(s) / len(s) for g, s in sorted(by_game.items())}
    overall = None
    if chunk_scores:
        overall = sum(s for *_, s in chunk_scores) / len(chunk_scores)
    return DiversityResult(chunk_scores=chunk_scores, mean_by_game=mean_by_game,
                           overall_mean=overall, dropped_chunks=dropped)


def mine_viewpoints(game_id: str, persona: str, gt_texts: Sequence[str],
                    gateway: Gateway, config: EndpointConfig,
                    batch_size: int = MINING_BATCH) -> list[str]:
    """Stage 1: fold ground-truth reviews into a deduplicated viewpoint
    checklist. A batch whose reply never parses is skipped; the
    checklist built so far is kept."""
    checklist: list[str] = []
    for start in range(0, len(gt_texts), batch_size):
        batch = gt_texts[start:start + batch_size]
        request = chat_request(
            prompts.fill(prompts.VIEWPOINT_MINING_SYSTEM, persona=persona),
            prompts.fill(prompts.VIEWPOINT_MINING_USER, game_id=game_id, persona=persona,
                         existing_points_text=_numbered_block(checklist) or "(empty)",
                         new_reviews_text=_numbered_block(batch)),
        )
        updated = None
        for _ in range(2):
            reply = gateway.chat(config, request)
            try:
                updated = extract_json(reply.text, [str])
                break
            except (JsonExtractError, JsonShapeError) as exc:
                logger.warning("viewpoint mining reply malformed: %s", exc)
        if updated is None:
            continue
        merged: list[str] = []
        seen = set()
        for point in updated:
            cleaned = point.strip()
            if cleaned and cleaned not in seen:
                merged.append(cleaned)
                seen.add(cleaned)
        if merged:
            checklist = merged
    return checklist


def match_viewpoints(game_id: str, persona: str, checklist: Sequence[str],
                     sim_texts: Sequence[str], gateway: Gateway,
                     config: EndpointConfig,
                     batch_size: int = MATCHING_BATCH) -> set[int]:
    """Stage 2: which checklist ids are covered by the simulated
    reviews. The matched set grows monotonically; a failed batch is
    skipped without losing prior matches."""
    matched: set[int] = set()
    if not checklist:
        return matched
    for start in range(0, len(sim_texts), batch_size):
        unmatched = [i for i in range(len(checklist)) if i not in matched]
        if not unmatched:
            break
        batch = sim_texts[start:start + batch_size]
        checklist_text = "\n".join(f"{i}: {checklist[i]}" for i in unmatched)
        request = chat_request(
            prompts.fill(prompts.VIEWPOINT_MATCHING_SYSTEM,
                         game_id=game_id, persona=persona),
            prompts.fill(prompts.VIEWPOINT_MATCHING_USER,
                         checklist_text=checklist_text,
                         reviews_text=_numbered_block(batch)),
        )
        ids = None
        for _ in range(2):
            reply = gateway.chat(config, request)
            try:
                ids = extract_json(reply.text, [int])
                break
            except (JsonExtractError, JsonShapeError) as exc:
                logger.warning("viewpoint matching reply malformed: %s", exc)
        if ids is None:
            continue
        matched.update(i for i in ids if i in set(unmatched))
    return matched


@dataclass
class OpinionRecoveryResult:
    total_points: int
    total_matched: int
    rate: float | None
    by_cell: dict[tuple[str, str], tuple[int, int]]

    def by_game(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for (game_id, _), (matched, total) in self.by_cell.items():
            m, t = out.get(game_id, (0, 0))
            out[game_id] = (m + matched, t + total)
        return dict(sorted(out.items()))


def opinion_recovery(gt_reviews: Sequence[CuratedReview],
                     sim_reviews: Sequence[SimulatedReview], gateway: Gateway,
                     config: EndpointConfig, mining_batch: int = MINING_BATCH,
                     matching_batch: int = MATCHING_BATCH) -> OpinionRecoveryResult:
    """Mine viewpoints from the human corpus per (game, persona), then
    count how many the simulated corpus covers; the rate pools all
    cells."""
    gt_cells: dict[tuple[str, str], list[str]] = {}
    for review in gt_reviews:
        if review.persona in PERSONA_NAMES:
            gt_cells.setdefault((review.game_id, review.persona), []).append(review.text)
    sim_cells: dict[tuple[str, str], list[str]] = {}
    for review in sorted(sim_reviews, key=lambda r: (r.game_id, r.run_index)):
        sim_cells.setdefault((review.game_id, review.persona), []).append(review.review)

    by_cell: dict[tuple[str, str], tuple[int, int]] = {}
    total_points = 0
    total_matched = 0
    for cell in sorted(gt_cells):
        game_id, persona = cell
        checklist = mine_viewpoints(game_id, persona, gt_cells[cell], gateway,
                                    config, batch_size=mining_batch)
        if not checklist:
            continue
        matched = match_viewpoints(game_id, persona, checklist,
                                   sim_cells.get(cell, []), gateway, config,
                                   batch_size=matching_batch)
        by_cell[cell] = (len(matched), len(checklist))
        total_points += len(checklist)
        total_matched += len(matched)

    rate = None
    if total_points > 0:
        rate = metrics.opinion_recovery_rate(total_matched, total_points)
    return OpinionRecoveryResult(total_points=total_points, total_matched=total_matched,
                                 rate=rate, by_cell=by_cell)


@dataclass
class AlignmentReport:
    variant: str
    games: list[str]
    truth_means: dict[str, float]
    sim_means: dict[str, float]
    game_errors: dict[str, float]
    mae: float
    wasserstein_by_game: dict[str, float]
    mean_wasserstein: float
    kendall_tau: float | None
    pearson: float | None
    distinct2_by_game: dict[str, float]
    mean_distinct2: float | None
    tier_matrix: list[list[int]] | None
    n_runs: int
    n_failed: int
    games_missing_sim: list[str] = field(default_factory=list)


def evaluate_alignment(truth_reviews: Sequence[CuratedReview],
                       sim_reviews: Sequence[SimulatedReview], variant: str,
                       n_failed: int = 0, tiers: int = 5) -> AlignmentReport:
    """Pure-metric comparison of the simulated corpus against the human
    corpus, macro-averaged over the games present on both sides."""
    truth_by_game: dict[str, list[float]] = {}
    for review in truth_reviews:
        truth_by_game.setdefault(review.game_id, []).append(float(review.rating))
    sim_by_game: dict[str, list[float]] = {}
    sim_texts: dict[str, list[str]] = {}
    for review in sim_reviews:
        sim_by_game.setdefault(review.game_id, []).append(float(review.rating))
        sim_texts.setdefault(review.game_id, []).append(review.review)

    games = sorted(set(truth_by_game) & set(sim_by_game))
    missing = sorted(set(truth_by_game) - set(sim_by_game))
    if not games:
        raise UndefinedMetricError("no game appears in both corpora")

    truth_aligned = {g: truth_by_game[g] for g in games}
    sim_aligned = {g: sim_by_game[g] for g in games}
    game_errors = metrics.game_mean_errors(sim_aligned, truth_aligned)
    mae_value = metrics.mae(sim_aligned, truth_aligned)
    w_by_game = {g: metrics.wasserstein1(sim_aligned[g], truth_aligned[g]) for g in games}
    mean_w = sum(w_by_game.values()) / len(w_by_game)

    truth_means = {g: sum(v) / len(v) for g, v in truth_aligned.items()}
    sim_means = {g: sum(v) / len(v) for g, v in sim_aligned.items()}
    tau = pearson = None
    if len(games) >= 2:
        truth_vec = [truth_means[g] for g in games]
        sim_vec = [sim_means[g] for g in games]
        try:
            tau = metrics.kendall_tau_b(sim_vec, truth_vec)
        except UndefinedMetricError as exc:
            logger.warning("kendall tau undefined: %s", exc)
        try:
            pearson = metrics.pearson_r(sim_vec, truth_vec)
        except UndefinedMetricError as exc:
            logger.warning("pearson undefined: %s", exc)

    d2_by_game: dict[str, float] = {}
    for g in games:
        try:
            d2_by_game[g] = metrics.distinct2(sim_texts[g])
        except UndefinedMetricError as exc:
            logger.warning("distinct-2 undefined for %s: %s", g, exc)
    mean_d2 = (sum(d2_by_game.values()) / len(d2_by_game)) if d2_by_game else None

    tier_matrix = None
    if len(games) >= tiers:
        tier_matrix = metrics.tier_confusion(sim_means, truth_means, tiers=tiers)

    return AlignmentReport(
        variant=variant,
        games=games,
        truth_means=truth_means,
        sim_means=sim_means,
        game_errors=game_errors,
        mae=mae_value,
        wasserstein_by_game=w_by_game,
        mean_wasserstein=mean_w,
        kendall_tau=tau,
        pearson=pearson,
        distinct2_by_game=d2_by_game,
        mean_distinct2=mean_d2,
        tier_matrix=tier_matrix,
        n_runs=len(sim_reviews),
        n_failed=n_failed,
        games_missing_sim=missing,
    )


def persona_breakdown(truth_reviews: Sequence[CuratedReview],
                      sim_reviews: Sequence[SimulatedReview]) -> list[dict]:
    """Per-persona run counts and mean ratings on both sides."""
    rows = []
    for persona in PERSONA_NAMES:
        sim = [r.rating for r in sim_reviews if r.persona == persona]
        truth = [r.rating for r in truth_reviews if r.persona == persona]
        rows.append({
            "persona": persona,
            "sim_runs": len(sim),
            "sim_mean_rating": round(sum(sim) / len(sim), 4) if sim else "",
            "truth_reviews": len(truth),
            "truth_mean_rating": round(sum(truth) / len(truth), 4) if truth else "",
        })
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_summary_csv(path: str | Path, report: AlignmentReport,
                      fact: FactCheckResult | None = None,
                      diversity: DiversityResult | None = None,
                      recovery: OpinionRecoveryResult | None = None) -> None:
    rows: list[tuple[str, object]] = [
        ("variant", report.variant),
        ("games", len(report.games)),
        ("runs", report.n_runs),
        ("failed_runs", report.n_failed),
        ("rating_mae", report.mae),
        ("mean_wasserstein", report.mean_wasserstein),
        ("kendall_tau_b", report.kendall_tau),
        ("pearson_r", report.pearson),
        ("mean_distinct2", report.mean_distinct2),
    ]
    if fact is not None:
        rows.append(("fact_accuracy", fact.pooled_accuracy))
        rows.append(("fact_claims", fact.total_claims()))
        rows.append(("fact_unusable_runs", fact.unusable_runs))
    if diversity is not None:
        rows.append(("mean_diversity", diversity.overall_mean))
        rows.append(("diversity_dropped_chunks", diversity.dropped_chunks))
    if recovery is not None:
        rows.append(("opinion_recovery_pct", recovery.rate))
        rows.append(("opinion_points", recovery.total_points))
        rows.append(("opinion_matched", recovery.total_matched))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, _fmt(value)])


def write_per_game_csv(path: str | Path, report: AlignmentReport,
                       fact: FactCheckResult | None = None,
                       diversity: DiversityResult | None = None,
                       recovery: OpinionRecoveryResult | None = None) -> None:
    recovery_by_game = recovery.by_game() if recovery is not None else {}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "game_id", "truth_mean", "sim_mean", "abs_error", "wasserstein",
            "distinct2", "fact_accuracy", "diversity", "opinion_matched",
            "opinion_total",
        ])
        for game_id in report.games:
            fact_acc = ""
            if fact is not None and game_id in fact.accuracy_by_game:
                fact_acc = _fmt(fact.accuracy_by_game[game_id])
            div = ""
            if diversity is not None and game_id in diversity.mean_by_game:
                div = _fmt(diversity.mean_by_game[game_id])
            matched, total = recovery_by_game.get(game_id, ("", ""))
            writer.writerow([
                game_id,
                _fmt(report.truth_means[game_id]),
                _fmt(report.sim_means[game_id]),
                _fmt(report.game_errors[game_id]),
                _fmt(report.wasserstein_by_game[game_id]),
                _fmt(report.distinct2_by_game.get(game_id)),
                fact_acc,
                div,
                str(matched),
                str(total),
            ])


def write_tier_confusion_csv(path: str | Path, matrix: Sequence[Sequence[int]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tiers = len(matrix)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth_tier"] + [f"pred_tier_{j + 1}" for j in range(tiers)])
        for i, row in enumerate(matrix, start=1):
            writer.writerow([f"tier_{i}"] + [str(x) for x in row])


def write_persona_csv(path: str | Path, rows: Sequence[Mapping]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["persona", "sim_runs", "sim_mean_rating",
                         "truth_reviews", "truth_mean_rating"])
        for row in rows:
            writer.writerow([row["persona"], row["sim_runs"], row["sim_mean_rating"],
                             row["truth_reviews"], row["truth_mean_rating"]])
