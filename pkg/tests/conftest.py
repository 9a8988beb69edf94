import numpy as np
import pytest

from sdrate._validation import check_dataset
from sdrate.config import PipelineConfig, Study1Config
from sdrate.models import run_pipeline
from sdrate.simulation import generate_study1, with_true_guesses

# Monte-Carlo truth for the default Study 1 parameters: 10**6 draws, default seed.
ORACLE_ATE = 2.0279715465329597
ORACLE_SE = 0.004019354226697043


def make_dataset(X, y, t):
    return check_dataset(np.asarray(X, float), np.asarray(y, float), np.asarray(t, float))


@pytest.fixture(scope="session")
def study_small():
    """A 300-row Study 1 sample."""
    return generate_study1(Study1Config(n=300), seed=2024)


@pytest.fixture(scope="session")
def truth_config():
    return with_true_guesses(PipelineConfig(), Study1Config())


@pytest.fixture(scope="session")
def small_result(study_small, truth_config):
    """Full pipeline (all estimators and variances) on the 300-row sample."""
    return run_pipeline(study_small.data, truth_config)


@pytest.fixture(scope="session")
def study_1000():
    """The n = 1000 Study 1 sample at the default seed."""
    return generate_study1(Study1Config())


@pytest.fixture(scope="session")
def paper_run(study_1000, truth_config):
    """Full pipeline at n = 1000 from the true parameter vectors."""
    return run_pipeline(study_1000.data, truth_config)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
