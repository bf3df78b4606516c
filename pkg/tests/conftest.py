import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS_DIR))

FIXTURES = TESTS_DIR / "fixtures"


@pytest.fixture(scope="session")
def nvd_fixture_path() -> Path:
    path = FIXTURES / "nvd_kernel_snapshot.json.gz"
    assert path.exists(), "run scripts/make_nvd_fixture.py first"
    return path


@pytest.fixture(scope="session")
def nvd_snapshot(nvd_fixture_path):
    from kcve.cve_store import ingest_nvd_feed

    return ingest_nvd_feed(nvd_fixture_path)
