import numpy as np
import pytest
import torch

from mgan import _kernels


@pytest.fixture(params=sorted(_kernels.backends()))
def kernels(request, monkeypatch):
    """Run a test once per importable kernel backend, patched into the package."""
    impl = _kernels.backends()[request.param]
    for name in ("label8", "local_maxima", "grow_from_seeds", "overlap_counts"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return impl


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance verdict; printed in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
