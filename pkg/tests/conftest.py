import numpy as np
import pytest

from sparta import activations as A


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dscanet(c, rng, use_dpnet=True, k=1, scale=1.0):
    """DSCANet with every tensor random (DPNet included), for non-degenerate tests."""
    p = A.init_dscanet(c, rng, use_dpnet, k, zero_dpnet=False)
    for name, v in p.tensors.items():
        p.tensors[name] = scale * rng.normal(0.0, 0.5, size=v.shape)
    return p


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
