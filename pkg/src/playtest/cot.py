"""Reasoning-chain synthesis and the SFT corpus export.

Each (rulebook, persona, review) triple is reverse-engineered into a
three-step What -> How -> Feel chain by a teacher model, then audited
by a separate judge. Rejected chains are regenerated with the judge's
feedback up to a fixed attempt budget; survivors become supervised
fine-tuning records whose target wraps the chain in think markers
followed by the final critique JSON.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import prompts
from .datamodel import CuratedReview, MdaChain, StructuredRulebook, UNASSIGNED
from .errors import JsonExtractError, JsonShapeError, SynthesisError, ValidationError
from .gateway import (
    ChatRequest,
    EndpointConfig,
    Gateway,
    Opt,
    chat_request,
    extract_json,
    serialize_json,
)

logger = logging.getLogger(__name__)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
RULEBOOK_EXCERPT_LIMIT = 24000
VERDICT_PASS = "PASS"
VERDICT_REJECT = "REJECT"

_CHAIN_SHAPE = {
    "thought_chain": {
        "content_extraction": str,
        "dynamic_interaction": str,
        "experience_outcome": str,
    }
}
_VERDICT_SHAPE = {"status": str, "reason": str, "suggestion": Opt(str)}


@dataclass(frozen=True)
class VerifierVerdict:
    status: str
    reason: str
    suggestion: str | None = None

    @property
    def passed(self) -> bool:
        return self.status == VERDICT_PASS


@dataclass(frozen=True)
class ChainResult:
    chain: MdaChain | None
    verdict: VerifierVerdict | None
    attempts: int

    @property
    def passed(self) -> bool:
        return self.chain is not None and self.verdict is not None and self.verdict.passed


@dataclass(frozen=True)
class SftRecord:
    game_id: str
    persona: str
    review_id: str
    system_text: str
    user_text: str
    target_text: str

    def to_dict(self) -> dict:
        return {
            "game_id": self.game_id,
            "persona": self.persona,
            "review_id": self.review_id,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "target_text": self.target_text,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SftRecord":
        return cls(**{k: data[k] for k in ("game_id", "persona", "review_id",
                                           "system_text", "user_text", "target_text")})


@dataclass(frozen=True)
class DroppedTriple:
    review_id: str
    game_id: str
    persona: str
    reason: str
    attempts: int

    def to_dict(self) -> dict:
        return {
            "review_id": self.review_id,
            "game_id": self.game_id,
            "persona": self.persona,
            "reason": self.reason,
            "attempts": self.attempts,
        }


def rulebook_excerpt(rulebook: StructuredRulebook | str,
                     limit: int = RULEBOOK_EXCERPT_LIMIT) -> str:
    """Head of the rendered rulebook, bounded so prompts stay inside
    the context window."""
    text = rulebook if isinstance(rulebook, str) else rulebook.to_markdown()
    return text[:limit]


def _synthesis_request(rule_content: str, persona: str, review_text: str,
                       feedback: str | None) -> ChatRequest:
    prompt = prompts.fill(
        prompts.CHAIN_SYNTHESIS,
        rule_content=rule_content,
        persona_def=prompts.PERSONA_DEFINITIONS[persona],
        review_text=review_text,
    )
    if feedback:
        prompt = f"{prompt}\n\n{feedback}"
    return chat_request(None, prompt)


def synthesize_chain(rule_content: str, persona: str, review_text: str,
                     gateway: Gateway, config: EndpointConfig,
                     feedback: str | None = None) -> MdaChain:
    """One teacher call, one identical re-query on a malformed reply,
    then SynthesisError."""
    request = _synthesis_request(rule_content, persona, review_text, feedback)
    last_error: Exception | None = None
    for _ in range(2):
        reply = gateway.chat(config, request)
        try:
            parsed = extract_json(reply.text, _CHAIN_SHAPE)
            chain = parsed["thought_chain"]
            return MdaChain(
                content_extraction=chain["content_extraction"],
                dynamic_interaction=chain["dynamic_interaction"],
                experience_outcome=chain["experience_outcome"],
            )
        except (JsonExtractError, JsonShapeError, ValidationError) as exc:
            last_error = exc
            logger.warning("chain synthesis reply malformed: %s", exc)
    raise SynthesisError(f"teacher output unusable after re-query: {last_error}")


def chain_payload(chain: MdaChain) -> dict:
    return {
        "thought_chain": {
            "content_extraction": chain.content_extraction,
            "dynamic_interaction": chain.dynamic_interaction,
            "experience_outcome": chain.experience_outcome,
        }
    }


def verify_chain(chain: MdaChain, review_text: str, rating: float,
                 gateway: Gateway, config: EndpointConfig) -> VerifierVerdict:
    """Audit one chain. An unusable judge reply is re-queried once and
    then treated as a rejection so the triple is never silently kept."""
    request = chat_request(None, prompts.fill(
        prompts.CHAIN_VERIFIER,
        review_text=review_text,
        rating=format_rating(rating),
        generated_json=serialize_json(chain_payload(chain)),
    ))
    for _ in range(2):
        reply = gateway.chat(config, request)
        try:
            parsed = extract_json(reply.text, _VERDICT_SHAPE)
        except (JsonExtractError, JsonShapeError) as exc:
            logger.warning("verifier reply malformed: %s", exc)
            continue
        if parsed["status"] not in (VERDICT_PASS, VERDICT_REJECT):
            logger.warning("verifier status out of vocabulary: %r", parsed["status"])
            continue
        return VerifierVerdict(status=parsed["status"], reason=parsed["reason"],
                               suggestion=parsed.get("suggestion"))
    return VerifierVerdict(status=VERDICT_REJECT, reason="judge failure")


def filtration_loop(rule_content: str, persona: str, review_text: str, rating: float,
                    gateway: Gateway, teacher_config: EndpointConfig,
                    judge_config: EndpointConfig, max_attempts: int = 3) -> ChainResult:
    """Synthesize-verify with feedback until PASS or the budget runs
    out. The judge's reason and suggestion are appended to the next
    synthesis prompt."""
    feedback: str | None = None
    verdict: VerifierVerdict | None = None
    attempt = 0
    for attempt in range(1, max_attempts + 1):
        try:
            chain = synthesize_chain(rule_content, persona, review_text,
                                     gateway, teacher_config, feedback=feedback)
        except SynthesisError as exc:
            verdict = VerifierVerdict(status=VERDICT_REJECT, reason=str(exc))
            feedback = "Previous attempt was rejected: output was not valid JSON."
            continue
        verdict = verify_chain(chain, review_text, rating, gateway, judge_config)
        if verdict.passed:
            return ChainResult(chain=chain, verdict=verdict, attempts=attempt)
        feedback = f"Previous attempt was rejected: {verdict.reason}."
        if verdict.suggestion:
            feedback = f"{feedback} {verdict.suggestion}"
    return ChainResult(chain=None, verdict=verdict, attempts=attempt)


def format_rating(rating: float) -> int | float:
    """Integral floats render as ints so JSON matches the schema's
    Integer (1-10)."""
    return int(rating) if float(rating).is_integer() else float(rating)


def format_target_text(chain: MdaChain, persona: str, rating: float,
                       review_text: str) -> str:
    think_json = json.dumps(chain_payload(chain), ensure_ascii=False, indent=2)
    critique = serialize_json({
        "persona": persona,
        "rating": format_rating(rating),
        "review": review_text,
    })
    return f"{THINK_OPEN}\n{think_json}\n{THINK_CLOSE}\n{critique}"


_THINK_RE = re.compile(re.escape(THINK_OPEN) + r"(.*?)" + re.escape(THINK_CLOSE),
                       re.DOTALL)


def split_think_block(text: str) -> tuple[str | None, str]:
    """(think content, remainder). No think block returns (None,
    text)."""
    match = _THINK_RE.search(text)
    if match is None:
        return None, text
    rest = text[:match.start()] + text[match.end():]
    return match.group(1).strip(), rest.strip()


def build_sft_record(review: CuratedReview, chain: MdaChain, rulebook_text: str) -> SftRecord:
    if review.persona == UNASSIGNED:
        raise ValidationError(f"review {review.review_id} has no persona")
    system_text = prompts.fill(
        prompts.SIMULATION_SYSTEM,
        target_persona=review.persona,
        p_def=prompts.PERSONA_DEFINITIONS[review.persona],
    )
    user_text = prompts.fill(
        prompts.SIMULATION_USER,
        target_persona=review.persona,
        rulebook_text=rulebook_text,
        session_tag="",
    )
    return SftRecord(
        game_id=review.game_id,
        persona=review.persona,
        review_id=review.review_id,
        system_text=system_text,
        user_text=user_text,
        target_text=format_target_text(chain, review.persona, review.rating, review.text),
    )


def synthesize_sft_corpus(reviews: Sequence[CuratedReview],
                          rulebooks: Mapping[str, StructuredRulebook],
                          gateway: Gateway, teacher_config: EndpointConfig,
                          judge_config: EndpointConfig, max_attempts: int = 3,
                          excerpt_limit: int = RULEBOOK_EXCERPT_LIMIT
                          ) -> tuple[list[SftRecord], list[DroppedTriple]]:
    """Run the filtration loop over every labeled review.

    Reviews without a persona or without a structured rulebook are
    dropped with an explicit reason; nothing is padded or retried
    beyond the per-triple budget.
    """
    records: list[SftRecord] = []
    dropped: list[DroppedTriple] = []
    for review in sorted(reviews, key=lambda r: (r.game_id, r.review_id)):
        if review.persona == UNASSIGNED:
            dropped.append(DroppedTriple(review.review_id, review.game_id,
                                         review.persona, "no persona", 0))
            continue
        rulebook = rulebooks.get(review.game_id)
        if rulebook is None:
            dropped.append(DroppedTriple(review.review_id, review.game_id,
                                         review.persona, "missing rulebook", 0))
            continue
        excerpt = rulebook_excerpt(rulebook, excerpt_limit)
        result = filtration_loop(excerpt, review.persona, review.text, review.rating,
                                 gateway, teacher_config, judge_config,
                                 max_attempts=max_attempts)
        if result.passed:
            records.append(build_sft_record(review, result.chain, excerpt))
        else:
            reason = result.verdict.reason if result.verdict else "no verdict"
            dropped.append(DroppedTriple(review.review_id, review.game_id,
                                         review.persona, reason, result.attempts))
    return records, dropped


# Fine-tuning recipe emitted alongside the corpus so a training run can
# be reproduced without consulting anything outside the artifact dir.
TRAINING_MANIFEST: tuple[tuple[str, str], ...] = (
    ("backbone_model", "Qwen-3-8B"),
    ("framework", "LLaMA-Factory"),
    ("context_window", "16384"),
    ("attention", "Flash Attention v2"),
    ("lora_target_modules", "all linear layers"),
    ("lora_rank", "32"),
    ("lora_alpha", "64"),
    ("lora_dropout", "0.1"),
    ("learning_rate", "5.0e-5"),
    ("lr_scheduler", "cosine"),
    ("warmup_ratio", "0.03"),
    ("optimizer", "AdamW"),
    ("num_epochs", "3"),
    ("per_device_batch_size", "2"),
    ("gradient_accumulation", "8"),
    ("effective_batch_size", "128"),
    ("reasoning_mode", "slow thinking"),
    ("dataset_template", "qwen"),
    ("think_block_open", THINK_OPEN),
    ("think_block_close", THINK_CLOSE),
)


def export_sft(records: Sequence[SftRecord], corpus_path: str | Path,
               manifest_path: str | Path) -> int:
    """Write the {system, user, assistant} training file plus the
    key = value manifest. Returns the record count."""
    corpus_path = Path(corpus_path)
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    with corpus_path.open("w", encoding="utf-8") as fh:
        for record in records:
            line = serialize_json({
                "system": record.system_text,
                "user": record.user_text,
                "assistant": record.target_text,
            })
            fh.write(line + "\n")

    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {value}" for key, value in TRAINING_MANIFEST]
    lines.append(f"num_records = {len(records)}")
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(records)


def save_sft_records(records: Sequence[SftRecord], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize_json(record.to_dict()) + "\n")
    return len(records)


def load_sft_records(path: str | Path) -> list[SftRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(SftRecord.from_dict(json.loads(line)))
    return out


def save_dropped(dropped: Iterable[DroppedTriple], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for item in dropped:
            fh.write(serialize_json(item.to_dict()) + "\n")
            n += 1
    return n
