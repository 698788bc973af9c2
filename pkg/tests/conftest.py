from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_tunnel():
    from rockmass.synth import SynthSpec, generate

    return generate(SynthSpec(n_rounds=120, seed=3, p_stay=0.6))


@pytest.fixture(scope="session")
def small_table(small_tunnel):
    from rockmass.features import build_sections

    return build_sections(small_tunnel.dataset)


@pytest.fixture
def blobs():
    """Three well separated Gaussian blobs in 4-D, 40 rows each."""
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0, 0, 0], [5, 5, 0, 0], [0, 5, 5, 5]], dtype=float)
    X = np.vstack([c + rng.normal(0, 0.5, size=(40, 4)) for c in centers])
    y = np.repeat(np.array(["A", "B", "C"]), 40)
    return X, y


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
