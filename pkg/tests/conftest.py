from pathlib import Path

import pytest
from hypothesis import settings

from embedforge import kernels

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    """Each importable kernel backend in turn."""
    return kernels.backends()[request.param]
