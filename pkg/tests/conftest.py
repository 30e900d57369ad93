import pytest

from otapfl.config import DatasetSpec, ExperimentConfig

# Acceptance outcomes, echoed in the terminal summary: (criterion, passed, detail).
ACCEPTANCE = []


def small_config(**kw):
    """A synthetic configuration that runs a round in a few milliseconds."""
    base = dict(
        seed=0, users=4, rounds=3, phase_iters=10, architecture="softmax", batch_size=16,
        eta=0.05, diag_samples=32, calibration_steps=20,
        dataset=DatasetSpec(kind="synthetic", classes=4, dims=8, per_class=40, test_per_class=20,
                            separation=3.0),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def small_cfg():
    return small_config()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {name}: {detail}")
