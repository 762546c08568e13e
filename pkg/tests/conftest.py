"""Shared fixtures: a session-scoped synthetic corpus and offline
gateways wired to the deterministic mock responder."""

from __future__ import annotations

from pathlib import Path

import pytest

from corpus import make_corpus
from playtest.gateway import EndpointConfig, Gateway, MockTransport
from playtest.offline import OfflineResponder

FIXTURES = Path(__file__).parent / "fixtures"

CHAT_CONFIG = EndpointConfig(base_url="mock:test", model_name="sim-model")
JUDGE_CONFIG = EndpointConfig(base_url="mock:test", model_name="judge-model",
                              temperature=0.0)
TEACHER_CONFIG = EndpointConfig(base_url="mock:test", model_name="teacher-model")
EMBED_CONFIG = EndpointConfig(base_url="mock:test", model_name="embed-model")


def no_sleep(_seconds: float) -> None:
    """Injectable sleep for retry tests; never actually waits."""


def offline_gateway() -> Gateway:
    return Gateway(transport=MockTransport(OfflineResponder()), sleep=no_sleep)


def scripted_gateway(transport: MockTransport) -> Gateway:
    return Gateway(transport=transport, sleep=no_sleep)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """(data_dir, manifest) for the generated three-game corpus."""
    data_dir = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(data_dir, seed=7)
    return data_dir, manifest


@pytest.fixture(scope="session")
def clank_text() -> str:
    return (FIXTURES / "clank_rulebook.md").read_text(encoding="utf-8")
