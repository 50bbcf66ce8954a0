"""Shared pytest fixtures for the EF-BV test suite.

Problems are small synthetic logistic regressions, built once per
session because they are immutable.
"""

import pytest

from efbv.certifier import reference_solution
from efbv.compressors import CompressorSpec
from efbv.problems import Regularizer, build_problem, synth_dataset
from efbv.types import RegularizerKind


@pytest.fixture(scope="session")
def small_dataset():
    """d=20, N=200 Gaussian two-class data."""
    return synth_dataset(seed=1, d=20, N=200, separation=0.5)


@pytest.fixture(scope="session")
def convex_problem(small_dataset):
    """Strongly convex problem: n=10 workers, mu=0.1."""
    return build_problem(small_dataset, n=10, l2=0.1)


@pytest.fixture(scope="session")
def convex_reference(convex_problem):
    return reference_solution(convex_problem)


@pytest.fixture(scope="session")
def l1_problem(small_dataset):
    """Strongly convex smooth part plus R = 0.01 ||x||_1."""
    return build_problem(
        small_dataset,
        n=10,
        l2=0.1,
        regularizer=Regularizer(RegularizerKind.L1, 0.01),
    )


@pytest.fixture(scope="session")
def l1_reference(l1_problem):
    return reference_solution(l1_problem)


@pytest.fixture(scope="session")
def nonconvex_problem(small_dataset):
    """Logistic loss plus 0.1 * sum x^2 / (1 + x^2), no l2."""
    return build_problem(small_dataset, n=10, nonconvex_weight=0.1)


@pytest.fixture
def comp_spec():
    """comp-(2,10) on d=20."""
    return CompressorSpec.comp(20, 2, 10)


@pytest.fixture
def tiny_problem():
    """d=5, N=40, n=4: fast enough for CLI round trips."""
    data = synth_dataset(seed=3, d=5, N=40, separation=1.0)
    return build_problem(data, n=4, l2=0.1)
