"""Shared fixtures: the bundled mini corpus, template bank, stub policy."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from cofprm import corpus, pipeline, policy

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def mini_problems_path() -> Path:
    return pipeline.bundled_problems_path()


@pytest.fixture(scope="session")
def mini_store(mini_problems_path) -> corpus.ProblemStore:
    return corpus.load_problems(mini_problems_path)


@pytest.fixture(scope="session")
def template_dir() -> Path:
    return pipeline.bundled_template_dir()


@pytest.fixture(scope="session")
def template_bank(template_dir) -> dict:
    return policy.load_template_bank(template_dir)


@pytest.fixture()
def stub_backend(template_bank) -> policy.StubBackend:
    return policy.StubBackend(policy.StubSpec(pass_probability=0.5, template_bank=template_bank))


@pytest.fixture(scope="session")
def decompose_expected() -> dict:
    with open(FIXTURES / "decompose" / "expected.json", encoding="utf-8") as fh:
        return json.load(fh)
