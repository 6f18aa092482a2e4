import pytest

from binned_ssa.engine import SimulationModel
from binned_ssa.model import read_model
from binned_ssa.rng import RngStream

ALL_METHODS = ["direct", "direct2d", "direct3d", "cr", "nrm-heap", "nrm-bins", "nsm"]


@pytest.fixture(scope="module")
def birth_death():
    return SimulationModel.from_network(*read_model("birth_death"))


@pytest.fixture(scope="module")
def three_channel():
    return SimulationModel.from_network(*read_model("three_channel"))


@pytest.fixture(scope="module")
def elf_ehrenberg_well_mixed():
    return SimulationModel.from_network(*read_model("elf_ehrenberg"))


@pytest.fixture
def rng():
    return RngStream(12345)
