import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> one-line verdict, filled by test_acceptance.py
CRITERIA: dict = {}


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    CRITERIA[n] = line
    print(line, flush=True)
    return ok


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hermitian(rng, n, complex_=True, scale=1.0):
    X = rng.standard_normal((n, n))
    if complex_:
        X = X + 1j * rng.standard_normal((n, n))
    return scale * (X + X.conj().T) / 2


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA, key=lambda x: (int(re.match(r"\d+", str(x)).group()), str(x))):
        terminalreporter.write_line(CRITERIA[k])
