import pytest

from field.FiniteField import FieldSpec
from graph import generators


@pytest.fixture(scope="session")
def gf2():
    return FieldSpec(1)


@pytest.fixture(scope="session")
def gf16():
    return FieldSpec(4)


@pytest.fixture(scope="session")
def gf256():
    return FieldSpec(8)


@pytest.fixture
def star2():
    return generators.star(2)


@pytest.fixture
def star3():
    return generators.star(3)


@pytest.fixture
def seven_node_tree():
    # 4 sources, 2 hidden atomic nodes, 1 output
    return generators.binary_tree(2)


@pytest.fixture(scope="session")
def tree64():
    return generators.binary_tree(6)
