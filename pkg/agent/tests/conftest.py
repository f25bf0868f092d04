import subprocess
import sys
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


def _spawn_server(instance_path: Path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "dtapsim.cli", "serve",
         "--instance", str(instance_path), "--port", "0",
         "--determinize", "--auto-apply-singletons", "on"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    banner = proc.stdout.readline().strip()
    if not banner.startswith("listening on "):
        proc.terminate()
        raise RuntimeError(f"simulator failed to start: {banner!r}")
    return proc, banner.removeprefix("listening on ")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def desk_endpoint():
    proc, endpoint = _spawn_server(DATA / "desk.json")
    yield endpoint
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture(scope="session")
def desk_b_endpoint():
    proc, endpoint = _spawn_server(DATA / "desk_b.json")
    yield endpoint
    proc.terminate()
    proc.wait(timeout=10)
