import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icnnvolt import baseline as bl  # noqa: E402
from icnnvolt import regulate as rg  # noqa: E402
from icnnvolt import train as tr  # noqa: E402
from icnnvolt.grid import LoadProfileConfig, generate_dataset, make_test_feeder  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one acceptance line; it is echoed immediately and in the summary."""

    def _report(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


@pytest.fixture(scope="session")
def feeder():
    return make_test_feeder("path_13")


@pytest.fixture(scope="session")
def small_fit(feeder):
    """A quickly trained 13-bus ICNN for tests that need a realistic surrogate."""
    prof = LoadProfileConfig()
    data = generate_dataset(feeder, prof, 3000, seed=11)
    rep = tr.fit_icnn(data, tr.TrainConfig(seed=11, n_iterations=6000))
    test = generate_dataset(feeder, prof.uncontrolled(), 20, seed=12)
    return {"data": data, "report": rep, "model": rep.final_model, "test": test}


@pytest.fixture(scope="session")
def desk_pipeline(feeder):
    """Full desk-scale comparison: 8,000 training rows and 500 test instances."""
    prof = LoadProfileConfig()
    data = generate_dataset(feeder, prof, 8000, seed=1)
    rep = tr.fit_icnn(data, tr.TrainConfig(seed=1))
    lin = bl.fit_linear(data.subset(rep.train_idx))
    lin_mae = tr.mean_absolute_error(lin.predict(data.inputs[rep.val_idx]), data.dv[rep.val_idx])
    test = generate_dataset(feeder, prof.uncontrolled(), 500, seed=10_001)
    P, Q0 = test.p, test.q
    lo, hi = rg.reactive_box(Q0, qmax=0.03)
    res = rg.regulate_batch(rep.final_model, P, Q0, rg.RegulateConfig(q_lower=lo, q_upper=hi))
    lres = bl.regulate_linear_batch(lin, P, Q0, bl.linear_regulate_config(q_lower=lo, q_upper=hi))
    return {
        "net": feeder, "report": rep, "linear": lin, "linear_mae": lin_mae, "test": test,
        "lo": lo, "hi": hi,
        "q_icnn": np.array([r.q_star for r in res]),
        "q_linear": np.array([r.q_star for r in lres]),
    }
