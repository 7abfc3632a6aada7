import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fractal_spde import (KernelEvaluator, assemble_eigenproblem, build_partition,
                          cantor_spec, exponents, lebesgue_spec, solve_spectrum,
                          validate_ifs)


def make_basis(spec, level, bc, K=None):
    part = build_partition(spec, level)
    return solve_spectrum(assemble_eigenproblem(part, bc), K, exponents(spec))


@pytest.fixture(scope="session")
def skewed_spec():
    return validate_ifs((0.5, 0.5), (0.0, 0.5), (0.9, 0.1))


@pytest.fixture(scope="session")
def leb_neumann():
    return make_basis(lebesgue_spec(), 8, "neumann")


@pytest.fixture(scope="session")
def leb_dirichlet():
    return make_basis(lebesgue_spec(), 8, "dirichlet")


@pytest.fixture(scope="session")
def cantor_neumann():
    return make_basis(cantor_spec(), 6, "neumann")


@pytest.fixture(scope="session")
def cantor_dirichlet():
    return make_basis(cantor_spec(), 6, "dirichlet")


@pytest.fixture(scope="session")
def small_cantor_evaluator():
    """Cantor level 4 (16 cells) with a complete basis."""
    return KernelEvaluator(make_basis(cantor_spec(), 4, "neumann"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
