import numpy as np
import pytest

from scenclass import autodiff as ad

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def max_rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


def analytic_and_numeric(build_loss, params: ad.ParameterSet, h=1e-5):
    """Gradient of ``build_loss(params)`` by backward and by central differences."""
    params.zero_grad()
    ad.backward(build_loss(params))
    analytic = {name: node.grad.copy() for name, node in params.items()}
    params.zero_grad()
    numeric = ad.finite_diff_gradient(lambda ps: build_loss(ps).value[0, 0], params, h)
    return analytic, numeric
