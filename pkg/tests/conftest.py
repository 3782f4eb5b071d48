import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("epr", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("epr")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def theta_model(theta):
    from epr.model import linear_from_parts
    return linear_from_parts(np.eye(2), np.eye(2), np.array([[0.0, theta], [-theta, 0.0]]))


def random_spd(rng, d, floor=0.3):
    A = rng.uniform(-1, 1, (d, d))
    return A @ A.T + floor * np.eye(d)


def random_stable_model(rng, d, rank=None):
    """Random linear model with full-rank noise unless ``rank`` is given."""
    from epr.model import linear_from_parts
    Pi = random_spd(rng, d)
    r = d if rank is None else rank
    S = rng.uniform(-1, 1, (d, r))
    D = 0.5 * S @ S.T + (1e-1 * np.eye(d) if rank is None else 0.0)
    A = rng.uniform(-1, 1, (d, d))
    Q = A - A.T
    if rank is not None:
        # keep im Q inside im sigma
        P = S @ np.linalg.pinv(S)
        Q = P @ Q @ P
    return linear_from_parts(Pi, D, Q)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str):
    ACCEPTANCE_LINES[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[k])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
