"""Persona discovery and assignment.

Curated reviews are rendered into composite texts (sentiment tier +
facet focus + body), embedded, and clustered with spherical k-means.
Cluster samples are exported as profiling prompts for a human-in-the-
loop naming pass; the resulting merge map collapses clusters onto the
five canonical personas. Each review is then labeled directly by an
LLM judge with a best-of-N vote.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import prompts
from .datamodel import CuratedReview, PERSONA_NAMES, UNASSIGNED
from .errors import ClusteringError, ValidationError
from .gateway import ChatRequest, EndpointConfig, Gateway, chat_request, judge_batches

logger = logging.getLogger(__name__)

SENTIMENT_POSITIVE = "Positive"
SENTIMENT_NEUTRAL = "Neutral"
SENTIMENT_NEGATIVE = "Negative"


@dataclass(frozen=True)
class CompositeText:
    sentiment_tier: str
    facets: tuple[str, ...]
    body: str
    rendered: str


def sentiment_tier(rating: float) -> str:
    if rating >= 8:
        return SENTIMENT_POSITIVE
    if rating <= 4:
        return SENTIMENT_NEGATIVE
    return SENTIMENT_NEUTRAL


def render_composite(review: CuratedReview) -> CompositeText:
    """Prefix the body with explicit sentiment and focus markers so the
    embedding separates attitude from topic."""
    tier = sentiment_tier(review.rating)
    facets = tuple(review.annotation.facets)
    rendered = f"[SENTIMENT: {tier}] [FOCUS: {', '.join(facets)}] :: {review.text}"
    return CompositeText(sentiment_tier=tier, facets=facets, body=review.text,
                         rendered=rendered)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: tuple[tuple[float, ...], ...]
    assignments: Mapping[str, int]
    seed: int
    inertia: float
    inertia_history: tuple[float, ...]

    def members(self, cluster: int) -> list[str]:
        return sorted(i for i, c in self.assignments.items() if c == cluster)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "inertia_history": list(self.inertia_history),
            "centroids": [list(c) for c in self.centroids],
            "assignments": dict(sorted(self.assignments.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClusterModel":
        return cls(
            k=data["k"],
            centroids=tuple(tuple(c) for c in data["centroids"]),
            assignments=dict(data["assignments"]),
            seed=data["seed"],
            inertia=data["inertia"],
            inertia_history=tuple(data["inertia_history"]),
        )


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ClusteringError("zero-norm embedding vector")
    return matrix / norms


def _kmeanspp_init(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = matrix.shape[0]
    centroids = np.empty((k, matrix.shape[1]), dtype=matrix.dtype)
    first = int(rng.integers(n))
    centroids[0] = matrix[first]
    d2 = 2.0 - 2.0 * (matrix @ centroids[0])
    d2 = np.maximum(d2, 0.0)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = matrix[idx]
        d2 = np.minimum(d2, np.maximum(2.0 - 2.0 * (matrix @ centroids[j]), 0.0))
    return centroids


def _lloyd(matrix: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int, tol: float) -> tuple[np.ndarray, np.ndarray, list[float], float]:
    """One k-means++ init plus Lloyd iterations; returns (centroids,
    labels, inertia history, final inertia)."""
    n = matrix.shape[0]
    centroids = _kmeanspp_init(matrix, k, rng)
    history: list[float] = []
    for _ in range(max_iter):
        sims = matrix @ centroids.T
        labels = np.argmax(sims, axis=1)
        d2 = np.maximum(2.0 - 2.0 * sims[np.arange(n), labels], 0.0)
        history.append(float(d2.sum()))

        new_centroids = np.empty_like(centroids)
        for j in range(k):
            members = matrix[labels == j]
            if len(members) == 0:
                far = int(np.argmax(d2))
                new_centroids[j] = matrix[far]
                d2[far] = 0.0
                continue
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            new_centroids[j] = centroids[j] if norm == 0 else mean / norm
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break

    sims = matrix @ centroids.T
    labels = np.argmax(sims, axis=1)
    inertia = float(np.maximum(2.0 - 2.0 * sims[np.arange(n), labels], 0.0).sum())
    history.append(inertia)
    return centroids, labels, history, inertia


def cluster(vectors: Mapping[str, Sequence[float]], k: int, seed: int,
            max_iter: int = 300, tol: float = 1e-4, n_init: int = 10) -> ClusterModel:
    """Spherical k-means over unit-normalized vectors.

    Iteration order over ids is sorted so the result is independent of
    corpus order. Cosine distance on unit vectors is monotone in
    squared euclidean distance (d^2 = 2 - 2 cos), so the usual Lloyd
    updates with renormalized means apply. Empty clusters are reseeded
    with the point farthest from its centroid. ``n_init`` restarts with
    derived seeds guard against a poor k-means++ draw; the run with the
    lowest final inertia wins (ties keep the earliest restart).
    """
    ids = sorted(vectors)
    if len(ids) < k:
        raise ClusteringError(f"need at least k={k} vectors, got {len(ids)}")
    if n_init < 1:
        raise ClusteringError(f"n_init out of [1, inf]: {n_init}")
    matrix = np.asarray([vectors[i] for i in ids], dtype=np.float64)
    matrix = _normalize_rows(matrix)
    if len({tuple(np.round(row, 12)) for row in matrix}) < k:
        raise ClusteringError(f"fewer than k={k} distinct vectors")

    best: tuple[np.ndarray, np.ndarray, list[float], float] | None = None
    for restart in range(n_init):
        rng = np.random.default_rng([seed, restart])
        run = _lloyd(matrix, k, rng, max_iter, tol)
        if best is None or run[3] < best[3]:
            best = run
    centroids, labels, history, inertia = best
    return ClusterModel(
        k=k,
        centroids=tuple(tuple(float(x) for x in row) for row in centroids),
        assignments={i: int(c) for i, c in zip(ids, labels)},
        seed=seed,
        inertia=inertia,
        inertia_history=tuple(history),
    )


def representative_ids(model: ClusterModel, vectors: Mapping[str, Sequence[float]],
                       cluster_index: int, limit: int) -> list[str]:
    """Member ids nearest the centroid, ties broken by id."""
    centroid = np.asarray(model.centroids[cluster_index], dtype=np.float64)
    scored = []
    for rid in model.members(cluster_index):
        vec = np.asarray(vectors[rid], dtype=np.float64)
        vec = vec / np.linalg.norm(vec)
        scored.append((-float(vec @ centroid), rid))
    scored.sort()
    return [rid for _, rid in scored[:limit]]


def export_profiling_samples(model: ClusterModel, vectors: Mapping[str, Sequence[float]],
                             reviews: Mapping[str, CuratedReview],
                             per_cluster: int = 20) -> dict[int, str]:
    """One ready-to-send profiling prompt per cluster, built from the
    reviews closest to the centroid."""
    out: dict[int, str] = {}
    for j in range(model.k):
        ids = representative_ids(model, vectors, j, per_cluster)
        if not ids:
            continue
        lines = []
        for i, rid in enumerate(ids, start=1):
            review = reviews[rid]
            lines.append(f"{i}. (rating {review.rating}) {review.text}")
        out[j] = prompts.fill(prompts.PERSONA_PROFILING, reviews_block="\n".join(lines))
    return out


def save_merge_map(path: str | Path, mapping: Mapping[int, str]) -> None:
    lines = ["# cluster index = persona name", ""]
    for idx in sorted(mapping):
        lines.append(f"{idx} = {mapping[idx]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_merge_map(path: str | Path, k: int) -> dict[int, str]:
    """Parse "index = name" lines; the map must cover [0, k) exactly
    and only use canonical persona names or Unassigned."""
    allowed = set(PERSONA_NAMES) | {UNASSIGNED}
    mapping: dict[int, str] = {}
    for raw_line in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"merge map line not 'index = name': {raw_line!r}")
        left, right = line.split("=", 1)
        try:
            idx = int(left.strip())
        except ValueError:
            raise ValidationError(f"merge map index not an integer: {left.strip()!r}")
        name = right.strip()
        if name not in allowed:
            raise ValidationError(f"merge map persona unknown: {name!r}")
        if idx in mapping:
            raise ValidationError(f"merge map index repeated: {idx}")
        mapping[idx] = name
    missing = sorted(set(range(k)) - set(mapping))
    extra = sorted(set(mapping) - set(range(k)))
    if missing or extra:
        raise ValidationError(
            f"merge map must cover clusters 0..{k - 1}; missing {missing}, extra {extra}")
    return mapping


def apply_merge_map(model: ClusterModel, mapping: Mapping[int, str],
                    reviews: Sequence[CuratedReview]) -> list[CuratedReview]:
    out = []
    for review in reviews:
        cluster_idx = model.assignments.get(review.review_id)
        persona = UNASSIGNED if cluster_idx is None else mapping[cluster_idx]
        out.append(review.with_persona(persona))
    return out


def majority_label(votes: Sequence[str]) -> str:
    """Strict mode of the vote multiset; no unique mode yields
    Unassigned."""
    cleaned = [v for v in votes if v in PERSONA_NAMES]
    if not cleaned:
        return UNASSIGNED
    counts = Counter(cleaned)
    ranked = counts.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return UNASSIGNED
    return ranked[0][0]


def _label_request_builder(vote_pass: int):
    definitions = prompts.persona_definitions_block()

    def build(batch: Sequence[CuratedReview]) -> ChatRequest:
        payload = [{"rating": r.rating, "text": r.text} for r in batch]
        prompt = prompts.fill(
            prompts.PERSONA_LABELING,
            persona_definitions=definitions,
            batch_size=len(batch),
            reviews_json=json.dumps(payload, ensure_ascii=False),
        )
        # The pass marker makes repeat votes distinct requests so a
        # caching transport cannot collapse them into one opinion.
        return chat_request(None, f"{prompt}\n\nInference pass: {vote_pass}")

    return build


_LABEL_SHAPE = {"LLM_persona_name": str}


def _one_vote_round(reviews: Sequence[CuratedReview], gateway: Gateway,
                    config: EndpointConfig, vote_pass: int,
                    batch_size: int) -> list[str | None]:
    items = judge_batches(gateway, config, reviews, _label_request_builder(vote_pass),
                          _LABEL_SHAPE, batch_size=batch_size)
    votes: list[str | None] = []
    for review, item in zip(reviews, items):
        if item is None:
            votes.append(None)
            continue
        name = item["LLM_persona_name"]
        if name not in PERSONA_NAMES:
            name = _requery_vote(review, gateway, config, vote_pass)
        votes.append(name)
    return votes


def _requery_vote(review: CuratedReview, gateway: Gateway, config: EndpointConfig,
                  vote_pass: int) -> str | None:
    """One single-item retry for an out-of-vocabulary name; a second
    miss discards the vote."""
    request = _label_request_builder(vote_pass)([review])
    try:
        from .gateway import extract_json
        reply = gateway.chat(config, request)
        parsed = extract_json(reply.text, [_LABEL_SHAPE])
    except Exception as exc:
        logger.warning("vote re-query failed for %s: %s", review.review_id, exc)
        return None
    if len(parsed) != 1:
        return None
    name = parsed[0]["LLM_persona_name"]
    if name not in PERSONA_NAMES:
        logger.warning("vote for %s still out of vocabulary: %r", review.review_id, name)
        return None
    return name


def label_personas(reviews: Sequence[CuratedReview], gateway: Gateway,
                   config: EndpointConfig, votes: int = 3,
                   batch_size: int = 10) -> list[CuratedReview]:
    """Assign each review its majority persona across ``votes``
    independent judging passes.

    A tie among the base votes triggers two extra passes; the decision
    is then the strict mode of the combined multiset, else Unassigned.
    """
    if votes < 1:
        raise ValidationError(f"votes must be >= 1: {votes}")
    ballots: list[list[str]] = [[] for _ in reviews]
    for vote_pass in range(1, votes + 1):
        for i, vote in enumerate(_one_vote_round(reviews, gateway, config,
                                                 vote_pass, batch_size)):
            if vote is not None:
                ballots[i].append(vote)

    decisions = [majority_label(b) for b in ballots]
    tied = [i for i, (b, d) in enumerate(zip(ballots, decisions))
            if d == UNASSIGNED and b]
    if tied:
        subset = [reviews[i] for i in tied]
        for vote_pass in (votes + 1, votes + 2):
            for local, vote in enumerate(_one_vote_round(subset, gateway, config,
                                                         vote_pass, batch_size)):
                if vote is not None:
                    ballots[tied[local]].append(vote)
        for i in tied:
            decisions[i] = majority_label(ballots[i])

    return [r.with_persona(d) for r, d in zip(reviews, decisions)]


def persona_counts(reviews: Iterable[CuratedReview]) -> dict[str, int]:
    counts = Counter(r.persona for r in reviews)
    ordered = {name: counts.get(name, 0) for name in PERSONA_NAMES}
    ordered[UNASSIGNED] = counts.get(UNASSIGNED, 0)
    return ordered


def embedding_digest(vectors: Mapping[str, Sequence[float]]) -> str:
    """Stable content hash over (id, vector) pairs for resume checks."""
    h = hashlib.sha256()
    for rid in sorted(vectors):
        h.update(rid.encode("utf-8"))
        h.update(np.asarray(vectors[rid], dtype=np.float64).tobytes())
    return h.hexdigest()
