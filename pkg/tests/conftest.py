import json
from importlib import resources

import pytest

from hyql.context import ContextModel


@pytest.fixture(scope="session")
def context():
    return ContextModel.default()


@pytest.fixture(scope="session")
def canonical_scenario():
    text = (resources.files("hyql") / "data" / "canonical_scenario.json").read_text("utf-8")
    return json.loads(text)
