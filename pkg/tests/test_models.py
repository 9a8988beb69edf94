import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone

from sdrate.config import Study1Config
from sdrate.exceptions import ConfigurationError, EstimatorInputError
from sdrate.models import (
    SDRAverageTreatmentEffect,
    SDROutcomeRegressor,
    SDRPropensityClassifier,
    normalize_which,
    run_pipeline,
)

TRUTH = Study1Config()


def test_outcome_regressor_matches_pipeline_fit(study_small, small_result):
    d = study_small.data
    reg = SDROutcomeRegressor(beta_init=TRUTH.true_beta1, arm=1).fit(d.X, d.y, d.t)
    fit = small_result.fits["imp1"]
    assert np.array_equal(reg.projection_, fit.projection.matrix)
    assert_allclose(reg.predict(d.X), fit.curve.values, rtol=1e-12)
    assert reg.transform(d.X).shape == (d.n, 1)


def test_outcome_regressor_arm_only_and_params(study_small):
    d = study_small.data
    mask = d.t == 0
    reg = SDROutcomeRegressor(beta_init=TRUTH.true_beta0, arm=0).fit(d.X[mask], d.y[mask])
    pred = reg.predict(d.X[mask])
    assert np.all(np.isfinite(pred))
    assert reg.score(d.X[mask], d.y[mask]) > 0.8
    params = reg.get_params()
    assert params["arm"] == 0 and params["bwc_impute"] == 1.25
    assert clone(reg).get_params() == params


def test_outcome_regressor_requires_guess(study_small):
    d = study_small.data
    with pytest.raises(ConfigurationError):
        SDROutcomeRegressor().fit(d.X, d.y, d.t)


def test_propensity_classifier(study_small, small_result):
    d = study_small.data
    clf = SDRPropensityClassifier(alpha_init=TRUTH.true_alpha).fit(d.X, d.t)
    proba = clf.predict_proba(d.X)
    assert proba.shape == (d.n, 2)
    assert_allclose(proba.sum(axis=1), 1.0)
    assert np.all((proba > 0) & (proba < 1))
    assert_allclose(proba[:, 1], small_result.fits["ipw"].propensity, rtol=1e-12)
    assert set(np.unique(clf.predict(d.X))) <= {0, 1}
    assert list(clf.classes_) == [0, 1]


def test_ate_estimator(study_small, small_result):
    d = study_small.data
    est = SDRAverageTreatmentEffect(TRUTH.true_beta1, TRUTH.true_beta0, TRUTH.true_alpha)
    est.fit(d.X, d.y, d.t)
    assert est.ate_ == {k: v.ate for k, v in small_result.estimates.items()}
    assert est.variance_ == small_result.variances
    lo, hi = est.confidence_intervals()["AIPW"]
    assert lo < est.ate_["AIPW"] < hi


def test_single_class_treatment_rejected(study_small):
    d = study_small.data
    with pytest.raises(EstimatorInputError):
        SDRAverageTreatmentEffect(TRUTH.true_beta1, TRUTH.true_beta0,
                                  TRUTH.true_alpha).fit(d.X, d.y, np.ones(d.n))


@pytest.mark.parametrize("which,expected", [
    ("all", ("imp", "ipw", "aipw", "aipw2")),
    ("aipw", ("aipw",)),
    ("IPW, imp", ("imp", "ipw")),
    (["aipw2", "imp"], ("imp", "aipw2")),
])
def test_normalize_which(which, expected):
    assert normalize_which(which) == expected


@pytest.mark.parametrize("bad", ["", "ols", "imp,foo"])
def test_normalize_which_rejects(bad):
    with pytest.raises(ConfigurationError):
        normalize_which(bad)


def test_pipeline_without_variance(study_small, truth_config, small_result):
    res = run_pipeline(study_small.data, truth_config, which="ipw", with_variance=False)
    assert res.variances == {}
    assert res.estimates["IPW"].ate == small_result.estimates["IPW"].ate
    assert res.implicit_stages == ("imp",)
