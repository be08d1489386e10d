# conftest.py — shared model fixtures (built once per session)

import pytest

from age_model import build_model
from presets import build_preset
from run_log import clear_status_log


@pytest.fixture(scope="session")
def choices():
    return build_model(build_preset("choices"))


@pytest.fixture(scope="session")
def stab2():
    return build_model(build_preset("choices-stab2"))


@pytest.fixture(scope="session")
def x34():
    return build_model(build_preset("plus(34)"))


@pytest.fixture(autouse=True)
def fresh_status_log():
    clear_status_log()
    yield
    clear_status_log()
