"""Study 1 data generation, the Monte Carlo ATE oracle and replication runs.

Random streams: ``SeedSequence(seed).spawn(k)`` gives one PCG64 child per
variable, in the order listed in :data:`STREAMS`.  Normal variates use the
inverse CDF of uniforms so a stream's consumption never depends on values.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtri

from ._validation import Dataset
from .config import InitialGuesses, PipelineConfig, Study1Config

logger = logging.getLogger(__name__)

STREAMS = ("x1", "x2", "x3", "x4", "x5", "x6", "y1", "y0", "t")
REPLICATION_COLUMNS = ("rep", "estimator", "estimate", "variance", "ci_low", "ci_high",
                       "covered", "status")
ESTIMATORS = ("IMP", "IMP2", "IPW", "AIPW", "AIPW2")
MIN_ORACLE_DRAWS = 10**5
Z975 = 1.959963984540054


@dataclass
class SimulatedData:
    """A generated sample together with its latent potential outcomes."""

    data: Dataset
    y1: np.ndarray
    y0: np.ndarray


def _generators(seed):
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(STREAMS, children)}


def _normal(rng, n, loc=0.0, sd=1.0):
    # uniforms on the open interval so ndtri stays finite
    u = (np.floor(rng.random(n) * 2.0**53) + 0.5) / 2.0**53
    return loc + sd * ndtri(u)


def _bernoulli(rng, prob):
    return (rng.random(prob.shape[0]) < np.clip(prob, 0.0, 1.0)).astype(float)


def _covariates(g, n):
    x1 = _normal(g["x1"], n, 1.0)
    x2 = _normal(g["x2"], n)
    x4 = 0.015 * x1 + g["x4"].uniform(-0.5, 0.5, n)
    x3 = _bernoulli(g["x3"], 0.5 + 0.05 * x2)
    x5 = _bernoulli(g["x5"], 0.4 + 0.2 * x4)
    x6 = 0.04 * x2 + 0.15 * x3 + 0.05 * x4 + _normal(g["x6"], n)
    return np.column_stack([x1, x2, x3, x4, x5, x6])


def _contrast(X, beta1, beta0):
    s1 = X @ np.asarray(beta1, dtype=float)
    return 0.7 * s1**2 + np.sin(s1), X @ np.asarray(beta0, dtype=float)


def generate_study1(config: Study1Config = None, *, n=None, seed=None) -> SimulatedData:
    """Draw one Study 1 sample.

    ``n`` and ``seed`` override the config values.
    """
    config = config or Study1Config()
    n = config.n if n is None else int(n)
    seed = config.seed if seed is None else int(seed)
    if n < 10:
        raise ValueError("n must be >= 10")
    g = _generators(seed)
    X = _covariates(g, n)
    m1, m0 = _contrast(X, config.true_beta1, config.true_beta0)
    y1 = m1 + _normal(g["y1"], n, sd=math.sqrt(0.5))
    y0 = m0 + _normal(g["y0"], n, sd=math.sqrt(0.2))
    t = _bernoulli(g["t"], expit(X @ np.asarray(config.true_alpha, dtype=float)))
    y = t * y1 + (1 - t) * y0
    return SimulatedData(Dataset(np.ascontiguousarray(X), y, t), y1, y0)


def true_ate_oracle(config: Study1Config = None, draws=10**6, seed=None, chunk=250_000):
    """Monte Carlo value of E(Y1 - Y0) and its standard error.

    Uses fresh covariate draws (noise terms have mean zero and are omitted).
    """
    config = config or Study1Config()
    if draws < MIN_ORACLE_DRAWS:
        raise ValueError(f"draws must be >= {MIN_ORACLE_DRAWS}")
    seed = config.seed + 0x5EED if seed is None else int(seed)
    g = _generators(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        m1, m0 = _contrast(_covariates(g, k), config.true_beta1, config.true_beta0)
        diff = m1 - m0
        total += diff.sum()
        total_sq += (diff * diff).sum()
        done += k
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0) * draws / (draws - 1)
    return float(mean), float(math.sqrt(var / draws))


def with_true_guesses(pipeline_config: PipelineConfig, config: Study1Config) -> PipelineConfig:
    """Copy of ``pipeline_config`` with missing initial guesses set to the truth."""
    init = pipeline_config.initial
    guesses = InitialGuesses(
        init.beta_guess1 if init.beta_guess1 is not None else config.true_beta1,
        init.beta_guess0 if init.beta_guess0 is not None else config.true_beta0,
        init.alpha_initial if init.alpha_initial is not None else config.true_alpha)
    return dataclasses.replace(pipeline_config, initial=guesses)


def _rows_for(rep, result, truth, n):
    rows = []
    for name in ESTIMATORS:
        est = result.estimates.get(name) if result is not None else None
        var = result.variances.get(name) if result is not None else None
        if est is None or var is None or not np.isfinite(est.ate) or not np.isfinite(var):
            rows.append({"rep": rep, "estimator": name, "estimate": math.nan, "variance": math.nan,
                         "ci_low": math.nan, "ci_high": math.nan, "covered": "",
                         "status": "failed"})
            continue
        half = Z975 * math.sqrt(max(var, 0.0) / n)
        lo, hi = est.ate - half, est.ate + half
        status = "ok"
        if name == "AIPW2" and result.flags.get("aipw2_fallback"):
            status = "fallback"
        rows.append({"rep": rep, "estimator": name, "estimate": est.ate, "variance": var,
                     "ci_low": lo, "ci_high": hi, "covered": int(lo <= truth <= hi),
                     "status": status})
    return rows


def run_replications(config: Study1Config = None, reps=1, pipeline_config=None, *,
                     truth=None, oracle_draws=10**6, base_seed=None, progress=None):
    """Run the full pipeline on ``reps`` fresh samples.

    Replication ``r`` uses seed ``base_seed + r``.  A failing replication is
    recorded with status ``failed`` rather than raised.

    Returns
    -------
    ReplicationTable
    """
    from .models import run_pipeline

    config = config or Study1Config()
    pipeline_config = with_true_guesses(pipeline_config or PipelineConfig(study1=config), config)
    base_seed = config.seed if base_seed is None else int(base_seed)
    if reps < 0:
        raise ValueError("reps must be >= 0")
    if truth is None:
        truth = true_ate_oracle(config, oracle_draws)[0] if reps > 0 else math.nan
    rows = []
    for rep in range(int(reps)):
        sim = generate_study1(config, seed=base_seed + rep)
        try:
            result = run_pipeline(sim.data, pipeline_config)
        except Exception as exc:  # recorded, never propagated
            logger.warning("replication %d failed: %s", rep, exc)
            result = None
        rows.extend(_rows_for(rep, result, truth, sim.data.n))
        if progress is not None:
            progress(rep)
    return ReplicationTable(rows, truth, config.n)


@dataclass
class ReplicationTable:
    rows: list
    truth: float
    n: int

    @property
    def all_ok(self) -> bool:
        return all(r["status"] != "failed" for r in self.rows)

    def column(self, estimator, key):
        return np.array([r[key] for r in self.rows
                         if r["estimator"] == estimator and r["status"] != "failed"], dtype=float)

    def summary(self) -> dict:
        """Mean bias, empirical sd, mean estimated sd and coverage per estimator."""
        out = {}
        for name in ESTIMATORS:
            est = self.column(name, "estimate")
            var = self.column(name, "variance")
            cov = self.column(name, "covered")
            n_rows = len([r for r in self.rows if r["estimator"] == name])
            out[name] = {
                "n_ok": int(est.size),
                "n_failed": n_rows - int(est.size),
                "mean_bias": float(np.mean(est) - self.truth) if est.size else math.nan,
                "empirical_sd": float(np.std(est, ddof=1)) if est.size > 1 else math.nan,
                "mean_estimated_sd": float(np.mean(np.sqrt(var / self.n))) if est.size else math.nan,
                "coverage": float(np.mean(cov)) if cov.size else math.nan,
            }
        return out

    def to_csv(self, path_or_buf) -> None:
        """Write the table; ``"-"`` means standard output."""
        if path_or_buf == "-":
            path_or_buf = sys.stdout
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPLICATION_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in REPLICATION_COLUMNS])
        finally:
            if own:
                fh.close()


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else "%.17g" % v
    return str(v)
