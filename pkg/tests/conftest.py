from __future__ import annotations

import pathlib

import pytest

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def json_fixture_paths() -> list[pathlib.Path]:
    return sorted((FIXTURES / "json").glob("*.json"))


def xml_fixture_paths() -> list[pathlib.Path]:
    return sorted((FIXTURES / "xml").glob("*.xml"))


@pytest.fixture(scope="session")
def json_corpus() -> list[tuple[str, bytes]]:
    return [(p.name, p.read_bytes()) for p in json_fixture_paths()]


@pytest.fixture(scope="session")
def xml_corpus() -> list[tuple[str, bytes]]:
    return [(p.name, p.read_bytes()) for p in xml_fixture_paths()]
