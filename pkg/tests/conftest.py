"""Shared test helpers: complex random grids, a central finite-difference
gradient checker, and a terminal summary that prints one line per
acceptance criterion."""

import numpy as np
import pytest

from en2mri.autodiff import backward, no_grad

_ACCEPTANCE_RESULTS = {}


def record_criterion(number, description, passed=True):
    _ACCEPTANCE_RESULTS[number] = (description, passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        description, passed = _ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {description}")


def crandn(rng, shape, scale=1.0):
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def fd_gradcheck(make_loss, leaves, rng, n_coords=40, h=1e-5, atol_skip=1e-8):
    """Compare backward() against central finite differences.

    make_loss rebuilds the scalar loss node from the leaves' current values.
    Perturbs n_coords randomly chosen (leaf, index, plane) coordinates and
    returns the worst relative error among non-negligible entries.
    """
    for leaf in leaves:
        leaf.grad = None
    backward(make_loss())
    worst = 0.0
    for _ in range(n_coords):
        leaf = leaves[rng.integers(len(leaves))]
        idx = tuple(int(rng.integers(s)) for s in leaf.value.shape)
        plane = int(rng.integers(2))
        delta = h if plane == 0 else 1j * h
        orig = leaf.value[idx]
        leaf.value[idx] = orig + delta
        with no_grad():
            loss_plus = make_loss().item()
        leaf.value[idx] = orig - delta
        with no_grad():
            loss_minus = make_loss().item()
        leaf.value[idx] = orig
        numeric = (loss_plus - loss_minus) / (2 * h)
        g = leaf.grad[idx]
        analytic = g.real if plane == 0 else g.imag
        if abs(analytic) < atol_skip and abs(numeric) < atol_skip:
            continue
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
