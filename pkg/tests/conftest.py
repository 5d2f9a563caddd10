import numpy as np
import pytest

from crossdecode.data import SessionDataset


def make_dataset(n_per_sub=40, n_sub=4, n_neurons=3, n_classes=3, seed=0, directions=("F", "B")):
    """Small random dataset with ``n_sub`` subdatasets per context."""
    rng = np.random.default_rng(seed)
    total = 2 * n_sub * n_per_sub
    loc = np.tile(np.arange(n_per_sub) % n_classes, 2 * n_sub)
    dirn = np.tile(np.where(np.arange(n_per_sub) < n_per_sub // 2, directions[0], directions[-1]), 2 * n_sub)
    sub = np.repeat(np.arange(2 * n_sub), n_per_sub)
    ctx = np.where(sub < n_sub, "task", "fr")
    spikes = rng.poisson(1.0 + loc[:, None], size=(total, n_neurons))
    return SessionDataset(spikes=spikes, location=loc, direction=dirn, context=ctx, subdataset=sub,
                          n_classes=n_classes)


@pytest.fixture
def small_ds():
    return make_dataset()


# --- acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Remember one acceptance outcome for the terminal summary."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
