import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vasorl.data import Episode, feature_index, normalize, split_cohort
from vasorl.reward import annotate_rewards
from vasorl.sim import SimConfig, generate_cohort

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_episode(T=5, pid="p0", mortality=False, **columns):
    """Episode with T transitions of plausible raw features; ``columns`` override by name."""
    rows = T + 1
    feats = np.tile(np.array([70.0, 2.0, 30.0, 1.5, 200.0, 40.0, 0.0, 8.0, 0.0, 0.0]), (rows, 1))
    vp1 = np.zeros(rows, dtype=int)
    vp2 = np.full(rows, 0.1)
    for name, values in columns.items():
        values = np.broadcast_to(np.asarray(values, dtype=float), (rows,))
        if name == "vp1":
            vp1 = values.astype(int)
        elif name == "vp2":
            vp2 = values.copy()
        else:
            feats[:, feature_index(name)] = values
    return Episode(pid, feats, vp1, vp2, mortality)


@pytest.fixture(scope="session")
def small_cohort():
    """Simulated, annotated, split and normalized cohort of 60 patients."""
    raw = generate_cohort(SimConfig(n_patients=60, seed=7))
    return normalize(split_cohort(annotate_rewards(raw), (0.6, 0.2, 0.2), seed=7))

