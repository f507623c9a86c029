import pytest

from rinser import load_api_catalog

from fixtureutil import fixture_text


@pytest.fixture(scope="session")
def catalog():
    return load_api_catalog(fixture_text("api_catalog.txt"))
