import math

import pytest

from granular_fourier.kernels import KernelModel, RestitutionParams

C_QUARTER = 1.0 / (4.0 * math.pi)


@pytest.fixture
def const_kernel():
    return KernelModel.constant(C_QUARTER)


@pytest.fixture
def ps_kernel():
    return KernelModel.power_singular(C_QUARTER, 0.5)


@pytest.fixture
def sp_kernel():
    return KernelModel.scaled_power(1.0, 0.25)


@pytest.fixture
def params075():
    return RestitutionParams(0.75)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
