from pathlib import Path

import pytest

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def golden():
    """Checked-in golden bytes (regenerate with ``python3 tests/regen_golden.py``)."""
    return lambda name: (GOLDEN / name).read_bytes()
