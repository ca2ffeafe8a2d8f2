import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import roughflow as rf  # noqa: E402


@pytest.fixture(scope="session")
def rotation_field():
    return rf.rotation()


@pytest.fixture(scope="session")
def contraction_field():
    return rf.contraction()


@pytest.fixture(scope="session")
def shear_field():
    return rf.rough_shear()


@pytest.fixture(scope="session")
def zero():
    return rf.zero_field()
