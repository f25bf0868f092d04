from pathlib import Path

import pytest

from dtapsim.model import load_instance

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def audit_small():
    return load_instance(DATA / "audit_small.json")


@pytest.fixture(scope="session")
def directional():
    return load_instance(DATA / "directional.json")


@pytest.fixture(scope="session")
def overload():
    return load_instance(DATA / "overload.json")


@pytest.fixture(scope="session")
def roundtrip():
    return load_instance(DATA / "roundtrip.json")


@pytest.fixture(scope="session")
def agreement4():
    return load_instance(DATA / "agreement4.json")
