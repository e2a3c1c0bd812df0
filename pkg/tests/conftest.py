import pathlib

import pytest

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixture_path():
    """Resolve a fixture file name to its absolute path."""

    def resolve(name: str) -> str:
        path = FIXTURES / name
        assert path.exists(), f"missing fixture: {path}"
        return str(path)

    return resolve
