"""Virtual playtesting pipeline for board games.

Structures rulebooks into a canonical seven-section layout, curates
player reviews with an LLM judge, discovers and labels player
personas, distills verified reasoning chains into an SFT corpus, runs
persona-conditioned playtest simulations, and scores the results
against the human corpus.
"""

__version__ = "0.1.0"

from .datamodel import (
    CuratedReview,
    GameRecord,
    MdaChain,
    PersonaProfile,
    QualityAnnotation,
    RawReview,
    SimulatedReview,
    StructuredRulebook,
)
from .errors import PlaytestError

__all__ = [
    "__version__",
    "CuratedReview",
    "GameRecord",
    "MdaChain",
    "PersonaProfile",
    "PlaytestError",
    "QualityAnnotation",
    "RawReview",
    "SimulatedReview",
    "StructuredRulebook",
]
