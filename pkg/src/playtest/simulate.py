"""Persona-conditioned playtest simulation.

Every game gets a fixed batch of runs whose persona mix mirrors the
labeled corpus (largest-remainder quotas over the canonical persona
order, shuffled with a per-game seed). Four prompt variants cover the
full system and its ablations: NoMDA drops the reasoning request,
NoPersona swaps in a generic player, NoRulebook blanks the rules.
Unparseable replies walk a bounded retry ladder and end up recorded as
failures, never padded.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .cot import split_think_block
from .datamodel import MdaChain, PERSONA_NAMES, SimulatedReview
from .errors import (
    EndpointError,
    JsonExtractError,
    JsonShapeError,
    TransportError,
    ValidationError,
)
from .gateway import ChatRequest, EndpointConfig, Gateway, chat_request, extract_json
from .sampling import largest_remainder

logger = logging.getLogger(__name__)

VARIANT_FULL = "Full"
VARIANT_NO_MDA = "NoMDA"
VARIANT_NO_PERSONA = "NoPersona"
VARIANT_NO_RULEBOOK = "NoRulebook"
VARIANTS = (VARIANT_FULL, VARIANT_NO_MDA, VARIANT_NO_PERSONA, VARIANT_NO_RULEBOOK)

GENERIC_PERSONA_PHRASE = "a board game player"

THINK_REQUEST = (
    "Before the JSON object, reason step by step inside <think>...</think> tags: "
    "reconstruct the thought_chain (content_extraction -> dynamic_interaction -> "
    "experience_outcome) that leads to your rating."
)

_REPLY_SHAPE = {"persona": str, "rating": int, "review": str}

_RETRY_NONCES = 3


@dataclass(frozen=True)
class SimulationSpec:
    n_runs: int = 100
    variant: str = VARIANT_FULL
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_runs < 1:
            raise ValidationError(f"n_runs must be >= 1: {self.n_runs}")


@dataclass(frozen=True)
class FailedRun:
    game_id: str
    run_index: int
    persona: str
    variant: str
    error: str

    def to_dict(self) -> dict:
        return {
            "game_id": self.game_id,
            "run_index": self.run_index,
            "persona": self.persona,
            "variant": self.variant,
            "error": self.error,
        }


def wants_think(variant: str) -> bool:
    """Every variant keeps the reasoning request except the MDA
    ablation."""
    return variant != VARIANT_NO_MDA


def allocate_personas(weights: Mapping[str, float], n: int) -> dict[str, int]:
    """Integer persona quotas summing to n, canonical order.

    Weights are usually labeled-review counts; an all-zero mass falls
    back to a uniform mix over the five personas.
    """
    masses = [max(0.0, float(weights.get(name, 0.0))) for name in PERSONA_NAMES]
    if sum(masses) == 0.0:
        masses = [1.0] * len(PERSONA_NAMES)
    quotas = largest_remainder(masses, n)
    return {name: q for name, q in zip(PERSONA_NAMES, quotas)}


def game_seed(seed: int, game_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{game_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def run_plan(weights: Mapping[str, float], n: int, seed: int, game_id: str) -> list[str]:
    """Quota multiset shuffled with a seed derived from (root seed,
    game), so plans are stable per game and independent of corpus
    order."""
    quotas = allocate_personas(weights, n)
    plan: list[str] = []
    for name in PERSONA_NAMES:
        plan.extend([name] * quotas[name])
    random.Random(game_seed(seed, game_id)).shuffle(plan)
    return plan


def session_tag(game_id: str, run_index: int) -> str:
    return f"[session {game_id}:{run_index:03d}]"


def build_run_request(variant: str, persona: str, rulebook_text: str,
                      game_id: str, run_index: int, nonce: str = "") -> ChatRequest:
    """Messages for one simulated run under the given variant."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    if variant == VARIANT_NO_PERSONA:
        system = prompts.GENERIC_PLAYER_SYSTEM
        persona_phrase = GENERIC_PERSONA_PHRASE
    else:
        system = prompts.fill(
            prompts.SIMULATION_SYSTEM,
            target_persona=persona,
            p_def=prompts.PERSONA_DEFINITIONS[persona],
        )
        persona_phrase = persona
    rules = "" if variant == VARIANT_NO_RULEBOOK else rulebook_text
    user = prompts.fill(
        prompts.SIMULATION_USER,
        target_persona=persona_phrase,
        rulebook_text=rules,
        session_tag=session_tag(game_id, run_index),
    )
    if wants_think(variant):
        user = f"{user}\n{THINK_REQUEST}"
    if nonce:
        user = f"{user}\n{nonce}"
    return chat_request(system, user)


def _parse_chain(think_text: str | None) -> MdaChain | None:
    """Best-effort chain recovery from the think block; failures leave
    the run valid with chain null."""
    if not think_text:
        return None
    for shape in (
        {"thought_chain": {"content_extraction": str, "dynamic_interaction": str,
                           "experience_outcome": str}},
        {"content_extraction": str, "dynamic_interaction": str, "experience_outcome": str},
    ):
        try:
            parsed = extract_json(think_text, shape)
        except (JsonExtractError, JsonShapeError):
            continue
        body = parsed.get("thought_chain", parsed)
        try:
            return MdaChain(
                content_extraction=body["content_extraction"],
                dynamic_interaction=body["dynamic_interaction"],
                experience_outcome=body["experience_outcome"],
            )
        except ValidationError:
            return None
    return None


def _parse_reply(text: str, variant: str, game_id: str, persona: str,
                 run_index: int) -> SimulatedReview:
    think_text: str | None = None
    body = text
    if wants_think(variant):
        think_text, body = split_think_block(text)
    parsed = extract_json(body, _REPLY_SHAPE)
    rating = parsed["rating"]
    if not 1 <= rating <= 10:
        raise ValidationError(f"rating out of [1, 10]: {rating}")
    review_text = parsed["review"].strip()
    if not review_text:
        raise ValidationError("empty review text")
    return SimulatedReview(
        game_id=game_id,
        persona=persona,
        rating=rating,
        review=review_text,
        run_index=run_index,
        chain=_parse_chain(think_text),
    )


def _run_once(gateway: Gateway, config: EndpointConfig, request: ChatRequest,
              variant: str, game_id: str, persona: str,
              run_index: int) -> SimulatedReview:
    reply = gateway.chat(config, request)
    return _parse_reply(reply.text, variant, game_id, persona, run_index)


def _run_with_ladder(gateway: Gateway, config: EndpointConfig, spec: SimulationSpec,
                     rulebook_text: str, game_id: str, persona: str,
                     run_index: int,
                     first_reply_text: str | None = None
                     ) -> SimulatedReview | FailedRun:
    """Parse ladder: first reply, one identical re-query, then fresh
    requests with an explicit format nudge."""
    base = build_run_request(spec.variant, persona, rulebook_text, game_id, run_index)
    errors: list[str] = []

    attempts: list[tuple[str, ChatRequest | None]] = []
    if first_reply_text is not None:
        attempts.append(("initial", None))
    else:
        attempts.append(("initial", base))
    attempts.append(("requery", base))
    for k in range(1, _RETRY_NONCES + 1):
        nonce = f"(Retry {k}: output ONLY the JSON object.)"
        attempts.append((f"retry {k}", build_run_request(
            spec.variant, persona, rulebook_text, game_id, run_index, nonce=nonce)))

    for label, request in attempts:
        try:
            if request is None:
                result = _parse_reply(first_reply_text, spec.variant, game_id,
                                      persona, run_index)
            else:
                result = _run_once(gateway, config, request, spec.variant,
                                   game_id, persona, run_index)
            return result
        except (JsonExtractError, JsonShapeError, ValidationError) as exc:
            errors.append(f"{label}: {exc}")
        except (EndpointError, TransportError) as exc:
            errors.append(f"{label}: {type(exc).__name__}: {exc}")
            logger.warning("run %s:%d endpoint failure: %s", game_id, run_index, exc)
    return FailedRun(game_id=game_id, run_index=run_index, persona=persona,
                     variant=spec.variant, error="; ".join(errors))


def simulate_game(game_id: str, rulebook_text: str, weights: Mapping[str, float],
                  gateway: Gateway, config: EndpointConfig, spec: SimulationSpec
                  ) -> tuple[list[SimulatedReview], list[FailedRun]]:
    """All runs for one game. First attempts go out through the
    parallel dispatcher; stragglers walk the retry ladder serially."""
    plan = run_plan(weights, spec.n_runs, spec.seed, game_id)
    requests = [
        build_run_request(spec.variant, persona, rulebook_text, game_id, idx)
        for idx, persona in enumerate(plan)
    ]
    try:
        replies = gateway.chat_many(config, requests)
        first_texts: list[str | None] = [r.text for r in replies]
    except (EndpointError, TransportError) as exc:
        logger.warning("batch dispatch for %s failed (%s); falling back to serial", game_id, exc)
        first_texts = [None] * len(requests)

    reviews: list[SimulatedReview] = []
    failures: list[FailedRun] = []
    for idx, persona in enumerate(plan):
        outcome = _run_with_ladder(gateway, config, spec, rulebook_text, game_id,
                                   persona, idx, first_reply_text=first_texts[idx])
        if isinstance(outcome, FailedRun):
            failures.append(outcome)
        else:
            reviews.append(outcome)
    return reviews, failures


def simulate_corpus(rulebook_texts: Mapping[str, str],
                    weights_by_game: Mapping[str, Mapping[str, float]],
                    gateway: Gateway, config: EndpointConfig, spec: SimulationSpec
                    ) -> tuple[list[SimulatedReview], list[FailedRun]]:
    """Simulate every game, ordered by (game_id, run_index)."""
    all_reviews: list[SimulatedReview] = []
    all_failures: list[FailedRun] = []
    for game_id in sorted(rulebook_texts):
        weights = weights_by_game.get(game_id, {})
        reviews, failures = simulate_game(game_id, rulebook_texts[game_id], weights,
                                          gateway, config, spec)
        all_reviews.extend(reviews)
        all_failures.extend(failures)
    all_reviews.sort(key=lambda r: (r.game_id, r.run_index))
    all_failures.sort(key=lambda f: (f.game_id, f.run_index))
    return all_reviews, all_failures


def persona_weights_from_reviews(reviews: Sequence) -> dict[str, dict[str, float]]:
    """Per-game labeled-persona counts, the default simulation mix."""
    out: dict[str, dict[str, float]] = {}
    for review in reviews:
        if review.persona not in PERSONA_NAMES:
            continue
        game = out.setdefault(review.game_id, {})
        game[review.persona] = game.get(review.persona, 0.0) + 1.0
    return out
