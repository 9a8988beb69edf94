import csv
import io as stdio
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ORACLE_ATE, ORACLE_SE
from sdrate.config import PipelineConfig, Study1Config
from sdrate.exceptions import ConfigurationError
from sdrate.simulation import (
    ESTIMATORS,
    REPLICATION_COLUMNS,
    ReplicationTable,
    generate_study1,
    run_replications,
    true_ate_oracle,
)


def test_shapes_and_binary_treatment():
    sim = generate_study1(Study1Config(n=50))
    assert sim.data.X.shape == (50, 6)
    assert sim.data.y.shape == (50,) and sim.data.t.shape == (50,)
    assert set(np.unique(sim.data.t)) <= {0.0, 1.0}
    assert set(np.unique(sim.data.X[:, 2])) <= {0.0, 1.0}
    assert set(np.unique(sim.data.X[:, 4])) <= {0.0, 1.0}


def test_seed_determinism():
    a = generate_study1(Study1Config(n=100), seed=7)
    b = generate_study1(Study1Config(n=100), seed=7)
    c = generate_study1(Study1Config(n=100), seed=8)
    for fld in ("X", "y", "t"):
        assert np.array_equal(getattr(a.data, fld), getattr(b.data, fld))
    assert not np.array_equal(a.data.y, c.data.y)


@pytest.mark.parametrize("seed", [0, 1, 48371])
def test_latent_outcomes_consistent(seed):
    sim = generate_study1(Study1Config(n=500), seed=seed)
    t = sim.data.t
    assert np.array_equal(sim.data.y, t * sim.y1 + (1 - t) * sim.y0)


def test_covariate_moments_large_sample():
    sim = generate_study1(Study1Config(n=10**6), seed=1)
    X = sim.data.X
    assert abs(X[:, 0].mean() - 1.0) <= 0.01
    assert abs(X[:, 1].mean()) <= 0.01
    assert abs(X[:, 3].mean() - 0.015) <= 0.01
    # X4 = 0.015 X1 + U(-0.5, 0.5)
    assert abs(X[:, 3].var() - (0.015 ** 2 + 1 / 12)) <= 0.005


def test_latent_noise_variances():
    sim = generate_study1(Study1Config(n=200_000), seed=2)
    X = sim.data.X
    b1 = np.array(Study1Config().true_beta1)
    b0 = np.array(Study1Config().true_beta0)
    z1 = X @ b1
    r1 = sim.y1 - (0.7 * z1 ** 2 + np.sin(z1))
    r0 = sim.y0 - X @ b0
    assert abs(r1.var() - 0.5) < 0.01
    assert abs(r0.var() - 0.2) < 0.005


def test_oracle_frozen_value():
    mean, se = true_ate_oracle(Study1Config(), 10**6)
    assert_allclose(mean, ORACLE_ATE, rtol=1e-12)
    assert_allclose(se, ORACLE_SE, rtol=1e-12)


def test_oracle_zero_coefficients():
    cfg = Study1Config(true_beta1=[0] * 6, true_beta0=[0] * 6)
    mean, se = true_ate_oracle(cfg, 10**5)
    assert mean == 0.0 and se == 0.0


def test_oracle_disjoint_seeds_agree():
    a, sa = true_ate_oracle(Study1Config(), 10**6, seed=11)
    b, sb = true_ate_oracle(Study1Config(), 10**6, seed=12)
    assert abs(a - b) <= 4 * math.hypot(sa, sb)


def test_oracle_se_rate():
    _, s1 = true_ate_oracle(Study1Config(), 200_000, seed=3)
    _, s2 = true_ate_oracle(Study1Config(), 400_000, seed=3)
    assert_allclose(s2 / s1, 1 / math.sqrt(2), rtol=0.05)


def test_oracle_needs_enough_draws():
    with pytest.raises(ValueError):
        true_ate_oracle(Study1Config(), 1000)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        Study1Config(true_alpha=[1, 2, 3])
    with pytest.raises(ConfigurationError):
        Study1Config(seed=-1)


def test_zero_replications():
    table = run_replications(Study1Config(n=200), 0)
    assert table.rows == []
    out = stdio.StringIO()
    table.to_csv(out)
    assert out.getvalue().strip() == ",".join(REPLICATION_COLUMNS)


@pytest.fixture(scope="module")
def two_reps():
    cfg = Study1Config(n=150, seed=99)
    return run_replications(cfg, 2, PipelineConfig(study1=cfg), truth=ORACLE_ATE)


def test_replications_one_row_per_estimator(two_reps):
    assert len(two_reps.rows) == 2 * len(ESTIMATORS)
    assert [r["estimator"] for r in two_reps.rows[:5]] == list(ESTIMATORS)
    assert {r["rep"] for r in two_reps.rows} == {0, 1}


def test_replication_rows_consistent(two_reps):
    for r in two_reps.rows:
        if r["status"] == "failed":
            continue
        half = 1.959963984540054 * math.sqrt(r["variance"] / two_reps.n)
        assert_allclose([r["ci_low"], r["ci_high"]], [r["estimate"] - half, r["estimate"] + half])
        assert r["covered"] == (r["ci_low"] <= ORACLE_ATE <= r["ci_high"])


def test_replications_deterministic(two_reps):
    cfg = Study1Config(n=150, seed=99)
    again = run_replications(cfg, 2, PipelineConfig(study1=cfg), truth=ORACLE_ATE)
    a, b = stdio.StringIO(), stdio.StringIO()
    two_reps.to_csv(a)
    again.to_csv(b)
    assert a.getvalue() == b.getvalue()


def test_replication_csv_and_summary(two_reps):
    out = stdio.StringIO()
    two_reps.to_csv(out)
    rows = list(csv.DictReader(stdio.StringIO(out.getvalue())))
    assert list(rows[0]) == list(REPLICATION_COLUMNS)
    summary = two_reps.summary()
    assert set(summary) == set(ESTIMATORS)
    assert set(summary["IMP"]) >= {"mean_bias", "empirical_sd", "mean_estimated_sd", "coverage"}


def test_failed_replication_recorded():
    cfg = Study1Config(n=60, seed=5)
    pc = PipelineConfig(study1=cfg)
    pc.initial.beta_guess1 = [[0.0]] * 6
    table = run_replications(cfg, 1, pc, truth=ORACLE_ATE)
    assert {r["status"] for r in table.rows} == {"failed"}
    assert not table.all_ok
    assert isinstance(table, ReplicationTable)
