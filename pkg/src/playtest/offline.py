"""Deterministic offline responder for mock endpoints.

Stands in for every model-facing step so the full pipeline runs with
no network. Replies are derived from content digests of the request
itself, which keeps them stable across runs and independent of call
order. A small shared lexicon of mechanic phrases links the stages:
structured rulebooks keep the phrases from the raw text, simulated
reviews cite phrases found in the rules, the fact-checker supports
exactly those citations, and viewpoint mining/matching recover them.
"""

from __future__ import annotations

import hashlib
import json
import re

from .datamodel import FACETS, PERSONA_NAMES, SECTION_KEYS, NOT_MENTIONED
from .errors import TransportError
from .gateway import ChatRequest, MockTransport

# Mechanic phrases recognized by every stage. None of these appear in
# the canonical section headers or prompt templates, so scanning an
# extracted rulebook or review span cannot pick up template noise.
LEXICON: tuple[str, ...] = (
    "area control",
    "auction",
    "bluffing",
    "deck building",
    "dice",
    "drafting",
    "engine building",
    "hand management",
    "push your luck",
    "route building",
    "set collection",
    "trading",
    "variable player powers",
    "worker placement",
    "downtime",
    "combat",
)

NEGATIVE_WORDS = ("frustrating", "broken", "unfair", "boring", "tedious", "grating")
POSITIVE_WORDS = ("satisfying", "thrilling", "brilliant", "delightful", "tense", "sharp")

PERSONA_KEYWORDS: dict[str, tuple[str, ...]] = {
    "The System Purist": ("perfect information", "optimization", "optimal line", "tight math"),
    "The Efficiency Essentialist": ("streamlined", "elegant", "no wasted motion", "bloat"),
    "The Narrative Architect": ("story", "immersive", "world", "saga"),
    "The Social Lubricator": ("laughing", "table talk", "party", "banter"),
    "The Thrill Seeker": ("gamble", "adrenaline", "push your luck", "jackpot"),
}

_PERSONA_OFFSETS: dict[str, int] = {
    "The System Purist": 1,
    "The Efficiency Essentialist": 0,
    "The Narrative Architect": 0,
    "The Social Lubricator": -1,
    "The Thrill Seeker": 1,
}

_FACET_KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Rule Clarity & Teachability", ("rulebook", "teach", "unclear", "ambiguous")),
    ("Cognitive Load (Complexity)", ("heavy", "brain", "analysis paralysis", "complex")),
    ("Interaction & Conflict", ("blocking", "take-that", "combat", "interaction")),
    ("Luck vs. Strategy", ("dice", "luck", "random", "gamble")),
    ("Balance & Fairness", ("balance", "unfair", "runaway", "overpowered")),
    ("Replayability & Variety", ("replay", "variety", "samey", "scripted")),
    ("Thematic Integration", ("theme", "immersive", "story", "world")),
    ("Pacing & Flow", ("downtime", "drags", "pacing", "brisk")),
)

_FILLER_SENTENCES = (
    "Teaching it took about ten minutes and nobody asked to re-read the rules.",
    "We played with four and the table stayed involved between turns.",
    "The first round felt slow, then the rhythm clicked for everyone.",
    "Scores ended up closer than anyone expected going into the final round.",
    "Half of us wanted a rematch immediately, which says something.",
    "Setup was quick once the components were sorted into trays.",
    "One player spent the whole game chasing a single combo line.",
    "The midgame decision space opened up nicely after the second round.",
    "Nobody could agree afterwards on which opening was strongest.",
    "It ran about an hour, which felt right for what it offers.",
)

_PROFILE_NAMES = (
    "The Dice Hater", "The Euro Optimizer", "The Combo Chaser", "The Table Captain",
    "The Rules Lawyer", "The Weekend Narrator", "The Risk Junkie", "The Quiet Strategist",
)

GENERIC_TOPICS = ("the turn structure", "the component quality", "the scoring rhythm")


def _digest(*parts: object) -> int:
    payload = "\x1f".join(str(p) for p in parts)
    raw = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(raw[:8], "big")


def lexicon_words(text: str) -> list[str]:
    lowered = text.lower()
    return [w for w in LEXICON if w in lowered]


def rules_rating_anchor(rules_text: str) -> int:
    """Baseline quality signal carried by the mechanic phrases a
    rulebook contains; empty rules sit at the scale midpoint.

    Corpus generators can call this to center human ratings on the
    same anchor the simulated players will converge to.
    """
    words = lexicon_words(rules_text)
    if not words:
        return 5
    return 3 + _digest("anchor", ",".join(words)) % 6


def _span(text: str, start_marker: str, end_marker: str | None) -> str:
    start = text.find(start_marker)
    if start < 0:
        return ""
    start += len(start_marker)
    if end_marker is None:
        return text[start:]
    end = text.find(end_marker, start)
    return text[start:end] if end >= 0 else text[start:]


def _json_after(text: str, marker: str):
    pos = text.find(marker)
    if pos < 0:
        raise TransportError(f"offline responder: marker {marker!r} not found")
    tail = text[pos + len(marker):]
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(tail):
        if ch in "[{":
            return decoder.raw_decode(tail, idx)[0]
    raise TransportError(f"offline responder: no JSON after {marker!r}")


def _dumps(value) -> str:
    return json.dumps(value, ensure_ascii=False)


class OfflineResponder:
    """Routes a chat request to the matching stage handler by sentinel
    substrings unique to each prompt template."""

    def __call__(self, request: ChatRequest) -> str:
        system = ""
        user = ""
        for message in request.messages:
            if message["role"] == "system":
                system = message["content"]
            elif message["role"] == "user":
                user = message["content"]
        combined = f"{system}\n{user}"

        if "expert board game rules analyst" in combined:
            return self._structure(user)
        if "[DRAFT RULEBOOK]:" in combined:
            return self._rectify(user)
        if "Board Game Research Assistant" in combined:
            return self._quality(user)
        if "### VALID PERSONAS" in combined:
            return self._label(user)
        if "synthesize a Persona Profile" in combined:
            return self._profile(user)
        if "Reverse Experience Reconstruction" in combined:
            return self._synthesize(user)
        if "Senior Logic Auditor" in combined:
            return self._verify(user)
        if "strict Board Game Fact-Checker" in combined:
            return self._fact_check(user)
        if "Lead Game Designer analyzing playtest feedback" in combined:
            return self._diversity(user)
        if "Qualitative Data Analyst" in combined:
            return self._mine(user)
        if "Semantic Match Evaluator" in combined:
            return self._match(user)
        if "**Task:** Read the Game Rules below." in user:
            return self._simulate(system, user)
        raise TransportError("offline responder: unrecognized prompt")

    # -- rulebook stages --------------------------------------------

    def _structure(self, user: str) -> str:
        raw = _span(user, "Input Text:\n", None).strip()
        lines = [ln for ln in raw.splitlines() if ln.strip()]
        n = len(lines)
        sections = []
        for i, key in enumerate(SECTION_KEYS):
            chunk = lines[i * n // 7:(i + 1) * n // 7]
            body = "\n".join(chunk).strip() or NOT_MENTIONED
            sections.append(f"## {i + 1}. {key}\n{body}")
        return "\n\n".join(sections) + "\n"

    def _rectify(self, user: str) -> str:
        return _span(user, "[DRAFT RULEBOOK]:\n", None).strip() + "\n"

    # -- review curation --------------------------------------------

    def _quality(self, user: str) -> str:
        reviews = _json_after(user, "REVIEWS (JSON list):")
        return _dumps([self._annotate_one(r["rating"], r["text"]) for r in reviews])

    def _annotate_one(self, rating: float, text: str) -> dict:
        lowered = text.lower()
        words = text.split()
        reason = None
        if len(words) < 20:
            reason = "Too Short"
        elif "kickstarter" in lowered or "shipping" in lowered or "customer service" in lowered:
            reason = "Irrelevant"
        elif (("artwork" in lowered or "miniatures" in lowered or "card stock" in lowered)
              and not lexicon_words(text)):
            reason = "Visuals Only"
        elif rating >= 8 and any(w in lowered for w in NEGATIVE_WORDS):
            reason = "Rating Mismatch"
        elif rating <= 3 and any(w in lowered for w in POSITIVE_WORDS):
            reason = "Rating Mismatch"
        if reason is not None:
            return {
                "is_valid": False,
                "filter_reason": reason,
                "scores": {"mechanism_anchoring": 1, "causal_attribution": 1,
                           "constructiveness": 1},
                "facets": [],
            }
        h = _digest("quality", text)
        facets = [f for f, keys in _FACET_KEYWORDS if any(k in lowered for k in keys)]
        if not facets:
            facets = [FACETS[h % len(FACETS)]]
        return {
            "is_valid": True,
            "filter_reason": None,
            "scores": {
                "mechanism_anchoring": 1 + h % 5,
                "causal_attribution": 1 + (h >> 3) % 5,
                "constructiveness": 1 + (h >> 6) % 5,
            },
            "facets": facets,
        }

    # -- persona stages ---------------------------------------------

    def _label(self, user: str) -> str:
        match = re.search(r"Inference pass: (\d+)", user)
        vote_pass = match.group(1) if match else "0"
        reviews = _json_after(user, "REVIEWS:")
        out = []
        for review in reviews:
            out.append({"LLM_persona_name": self._persona_for(review["text"], vote_pass)})
        return _dumps(out)

    def _persona_for(self, text: str, vote_pass: str) -> str:
        lowered = text.lower()
        for name in PERSONA_NAMES:
            if any(k in lowered for k in PERSONA_KEYWORDS[name]):
                return name
        return PERSONA_NAMES[_digest("label", text, vote_pass) % len(PERSONA_NAMES)]

    def _profile(self, user: str) -> str:
        h = _digest("profile", user)
        name = _PROFILE_NAMES[h % len(_PROFILE_NAMES)]
        return _dumps({
            "persona_name": name,
            "core_motivation": "Chasing the moments the sampled reviews keep returning to.",
            "preferred_mechanics": "Leans toward the mechanics named most often in the cluster.",
            "interaction_style": "Mirrors the table dynamics the reviews describe.",
            "deal_breakers": "Whatever the cluster's lowest-rated reviews complain about.",
            "system_prompt_description": f"You are {name}, shaped by the sampled opinions.",
        })

    # -- chain synthesis and audit ----------------------------------

    def _synthesize(self, user: str) -> str:
        review = _span(user, '**User Review (Ground Truth):**\n"', '"\n\n### TASK')
        lowered = review.lower()
        words = lexicon_words(review) or ["the core loop"]
        negative = any(w in lowered for w in NEGATIVE_WORDS)
        positive = any(w in lowered for w in POSITIVE_WORDS)
        retry = "Previous attempt was rejected" in user
        if not retry and _digest("flip", review) % 12 == 0:
            negative, positive = positive, negative
        if negative:
            outcome = ("The session ended on a sour note; the experience felt "
                       "frustrating and the group checked out early.")
        elif positive:
            outcome = ("The finale landed as a thrilling, satisfying payoff that "
                       "had the table talking afterwards.")
        else:
            outcome = "An engaging if unremarkable session with a few bright spots."
        return _dumps({
            "thought_chain": {
                "content_extraction": f"The review explicitly mentions {', '.join(words)}.",
                "dynamic_interaction": (
                    f"During play, {words[0]} shaped the decisions at the table and "
                    "set the pace between turns."),
                "experience_outcome": outcome,
            }
        })

    def _verify(self, user: str) -> str:
        match = re.search(r"- Ground Truth Rating: (.+?) / 10", user)
        rating = float(match.group(1)) if match else 5.0
        chain_text = _span(user, "- Synthesized MDA Chain: ", "\n")
        try:
            chain = json.loads(chain_text)["thought_chain"]
        except (ValueError, KeyError, TypeError):
            return _dumps({"status": "REJECT", "reason": "Chain JSON unreadable.",
                           "suggestion": "Emit the thought_chain object only."})
        outcome = str(chain.get("experience_outcome", "")).lower()
        if any(w in outcome for w in NEGATIVE_WORDS) and rating > 7:
            return _dumps({
                "status": "REJECT",
                "reason": "Sentiment Mismatch: chain reads negative but the rating is high.",
                "suggestion": "Match the emotional outcome to the high rating.",
            })
        if any(w in outcome for w in POSITIVE_WORDS) and rating < 4:
            return _dumps({
                "status": "REJECT",
                "reason": "Sentiment Mismatch: chain reads positive but the rating is low.",
                "suggestion": "Match the emotional outcome to the low rating.",
            })
        return _dumps({"status": "PASS", "reason": "Grounded and consistent."})

    # -- simulation --------------------------------------------------

    def _simulate(self, system: str, user: str) -> str:
        rules = _span(user, "**Game Rules:**", "\nRules analysis complete.")
        persona_match = re.search(r"Current Active Persona: \*\*(.+?)\*\*", system)
        persona = persona_match.group(1) if persona_match else "a board game player"

        anchor = rules_rating_anchor(rules)
        h = _digest("simulate", system, user)
        if persona in _PERSONA_OFFSETS:
            rating = anchor + _PERSONA_OFFSETS[persona] + (h % 3) - 1
        else:
            rating = anchor + (h % 5) - 2
        rating = max(1, min(10, rating))

        review = self._sim_review_text(rules, rating, h)
        reply = _dumps({"persona": persona, "rating": rating, "review": review})
        if "reconstruct the thought_chain" in user:
            reply = self._sim_think_block(review, rating, h) + reply
        wrapper = h % 9
        if wrapper == 0:
            reply = f"```json\n{reply}\n```"
        elif wrapper == 1:
            reply = f"Quick thoughts after tonight's table.\n{reply}"
        return reply

    def _sim_review_text(self, rules: str, rating: int, h: int) -> str:
        words = lexicon_words(rules)
        if words:
            picks = [words[h % len(words)]]
            if len(words) > 1:
                second = words[(h >> 4) % len(words)]
                if second != picks[0]:
                    picks.append(second)
        else:
            picks = [GENERIC_TOPICS[h % len(GENERIC_TOPICS)]]
        sentences = [f"Most of the evening revolved around {picks[0]}."]
        if len(picks) > 1:
            sentences.append(f"The {picks[1]} layer kept pulling focus back to the board.")
        if rating >= 8:
            sentences.append(f"It built to a genuinely {POSITIVE_WORDS[h % len(POSITIVE_WORDS)]} finish.")
        elif rating <= 4:
            sentences.append(f"By the end it just felt {NEGATIVE_WORDS[h % len(NEGATIVE_WORDS)]}.")
        else:
            sentences.append("Parts of it sang, parts of it dragged; a mixed night overall.")
        for k in range(h % 4):
            sentences.append(_FILLER_SENTENCES[(h >> (8 + 3 * k)) % len(_FILLER_SENTENCES)])
        if words and h % 7 == 0:
            absent = [w for w in LEXICON if w not in words]
            if absent:
                sentences.append(f"I kept waiting for the {absent[h % len(absent)]} to matter, "
                                 "but maybe I imagined reading about it.")
        return " ".join(sentences)

    def _sim_think_block(self, review: str, rating: int, h: int) -> str:
        focus = lexicon_words(review) or ["the core loop"]
        if rating >= 8:
            outcome = "A satisfying session that justified the score."
        elif rating <= 4:
            outcome = "A frustrating session that dragged the score down."
        else:
            outcome = "A serviceable session with highs and lows."
        chain = {
            "thought_chain": {
                "content_extraction": f"I keep coming back to {', '.join(focus)}.",
                "dynamic_interaction": f"{focus[0]} dictated the table's rhythm.",
                "experience_outcome": outcome,
            }
        }
        return f"<think>\n{_dumps(chain)}\n</think>\n"

    # -- evaluation judges -------------------------------------------

    def _fact_check(self, user: str) -> str:
        rulebook = _span(user, "**Official Rulebook Context:**\n", "\n**Player Review:**")
        review = _span(user, "**Player Review:**\n", "\n**TASK:**")
        rule_words = set(lexicon_words(rulebook))
        claims = []
        for word in lexicon_words(review):
            status = "SUPPORTED" if word in rule_words else "CONTRADICTED"
            claims.append({
                "claim": f"Player mentions '{word}'",
                "status": status,
                "reason": ("Present in the rulebook text." if status == "SUPPORTED"
                           else "Not found anywhere in the rulebook."),
            })
        if "at its heart" in review.lower():
            claims.append({
                "claim": "Player summarizes the game's genre",
                "status": "INFERRED",
                "reason": "Correct paraphrase of the rules without quoting them.",
            })
        return _dumps(claims)

    def _diversity(self, user: str) -> str:
        h = _digest("diversity", user)
        return _dumps({"score": 2 + h % 3,
                       "reason": "Mostly intra-layer variation with occasional shifts."})

    @staticmethod
    def _numbered_items(block: str) -> list[str]:
        items = []
        for line in block.splitlines():
            match = re.match(r"\s*\d+[.:]\s*(.+)", line)
            if match:
                items.append(match.group(1).strip())
        return items

    def _mine(self, user: str) -> str:
        existing_block = _span(user, "**Current Viewpoints List:**\n", "\n\n**New Reviews Batch:**")
        new_block = _span(user, "**New Reviews Batch:**\n", "\n\n**Task:**")
        points = self._numbered_items(existing_block)
        seen = set(points)
        for word in lexicon_words(new_block):
            point = f"Mentions {word}"
            if point not in seen:
                points.append(point)
                seen.add(point)
        lowered = new_block.lower()
        for sentiment, marker_words in (("positive", POSITIVE_WORDS),
                                        ("negative", NEGATIVE_WORDS)):
            if any(w in lowered for w in marker_words):
                point = f"Overall {sentiment} table experience"
                if point not in seen:
                    points.append(point)
                    seen.add(point)
        return _dumps(points)

    def _match(self, user: str) -> str:
        checklist_block = _span(user, "**Unmatched Viewpoints Checklist:**\n",
                                "\n\n**Reviews Batch:**")
        reviews_block = _span(user, "**Reviews Batch:**\n", "\n\n**Task:**").lower()
        matched = []
        for line in checklist_block.splitlines():
            entry = re.match(r"\s*(\d+):\s*(.+)", line)
            if not entry:
                continue
            idx = int(entry.group(1))
            text = entry.group(2).lower()
            mention = re.match(r"mentions (.+)", text)
            if mention:
                if mention.group(1).strip() in reviews_block:
                    matched.append(idx)
            elif "positive" in text:
                if any(w in reviews_block for w in POSITIVE_WORDS):
                    matched.append(idx)
            elif "negative" in text:
                if any(w in reviews_block for w in NEGATIVE_WORDS):
                    matched.append(idx)
            elif any(w in reviews_block for w in text.split() if len(w) > 4):
                matched.append(idx)
        return _dumps(matched)


def mock_transport() -> MockTransport:
    """MockTransport wired to the offline responder."""
    return MockTransport(OfflineResponder())
