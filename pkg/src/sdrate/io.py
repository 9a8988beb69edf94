"""Dataset CSV files, JSON reports and plot-data export.

Floats are written with 17 significant digits in CSV files and with
Python's shortest round-trip representation in JSON, so every double
survives a write/read cycle exactly.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import math
import sys

import jsonschema
import numpy as np

from ._validation import Dataset
from .exceptions import DataParseError, MissingStage
from .models import PipelineResult
from .simulation import SimulatedData, Z975

REPORT_FORMAT = "sdrate-report"
REPORT_VERSION = 1
PLOT_KINDS = ("imp_index", "imp_cms1", "imp_cms0", "ipw_propensity")


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        return "%.17g" % v
    return str(v)


@contextlib.contextmanager
def open_out(path):
    """Text handle for ``path``; ``"-"`` means standard output."""
    if path in (None, "-"):
        yield sys.stdout
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        yield fh


# ---------------------------------------------------------------------------
# datasets


def write_dataset(path, data: Dataset, y1=None, y0=None) -> None:
    """Write ``x1..xp,y,t`` (plus ``y1,y0`` when both are given)."""
    latent = y1 is not None and y0 is not None
    header = [f"x{j + 1}" for j in range(data.p)] + ["y", "t"] + (["y1", "y0"] if latent else [])
    with open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [fmt(v) for v in data.X[i]] + [fmt(data.y[i]), str(int(data.t[i]))]
            if latent:
                row += [fmt(y1[i]), fmt(y0[i])]
            w.writerow(row)


def write_simulated(path, sim: SimulatedData, with_latent=False) -> None:
    if with_latent:
        write_dataset(path, sim.data, sim.y1, sim.y0)
    else:
        write_dataset(path, sim.data)


def _parse_float(text, line, col):
    try:
        v = float(text)
    except ValueError:
        raise DataParseError(f"not a number: {text!r}", line, col) from None
    if not math.isfinite(v):
        raise DataParseError(f"non-finite value: {text!r}", line, col)
    return v


def read_dataset(path_or_text, *, from_text=False):
    """Parse a dataset CSV.

    Returns
    -------
    data : Dataset
    latent : tuple of ndarray or None
        ``(y1, y0)`` when the file carries latent columns.

    Raises
    ------
    DataParseError
        With the 1-based line and column of the first problem.
    """
    if from_text:
        text = path_or_text
    else:
        try:
            with open(path_or_text, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataParseError(f"cannot read {path_or_text}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(c.strip() for c in rows[0]):
        raise DataParseError("empty data file (no header)", 1, 1)
    header = [c.strip() for c in rows[0]]
    latent = header[-2:] == ["y1", "y0"]
    core = header[:-2] if latent else header
    if len(core) < 4 or core[-2:] != ["y", "t"]:
        raise DataParseError("header must be x1..xp,y,t (optionally followed by y1,y0)", 1, 1)
    p = len(core) - 2
    for j, name in enumerate(core[:p]):
        if name != f"x{j + 1}":
            raise DataParseError(f"expected column x{j + 1}, found {name!r}", 1, j + 1)
    body = [(k + 2, r) for k, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    if not body:
        raise DataParseError("data file has a header but no rows", 2, 1)
    width = len(header)
    values = np.empty((len(body), width))
    for r, (line, row) in enumerate(body):
        if len(row) != width:
            raise DataParseError(f"expected {width} fields, found {len(row)}", line,
                                 min(len(row), width) + 1)
        for c, cell in enumerate(row):
            values[r, c] = _parse_float(cell.strip(), line, c + 1)
        tval = values[r, p + 1]
        if tval not in (0.0, 1.0):
            raise DataParseError(f"treatment must be 0 or 1, found {row[p + 1]!r}", line, p + 2)
    data = Dataset(np.ascontiguousarray(values[:, :p]), values[:, p].copy(),
                   values[:, p + 1].copy())
    lat = (values[:, p + 2].copy(), values[:, p + 3].copy()) if latent else None
    return data, lat


# ---------------------------------------------------------------------------
# reports

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}

_FIT_SCHEMA = {
    "type": "object",
    "required": ["projection", "bandwidth_dim_red", "bandwidth_final", "objective_value",
                 "converged", "n_iter", "n_eval", "status_counts", "fitted"],
    "properties": {
        "projection": _MATRIX,
        "bandwidth_dim_red": {"type": "array", "items": _NUM},
        "bandwidth_final": {"type": "array", "items": _NUM},
        "objective_value": _NUM,
        "converged": {"type": "boolean"},
        "n_iter": {"type": "integer"},
        "n_eval": {"type": "integer"},
        "n_failed_final": {"type": "integer"},
        "status_counts": {"type": "object", "additionalProperties": {"type": "integer"}},
        "fitted": {
            "type": "object",
            "required": ["values", "derivatives", "status"],
            "properties": {
                "values": {"type": "array", "items": _NUM},
                "derivatives": _MATRIX,
                "status": {"type": "array", "items": {"type": "string"}},
                "propensity": {"type": "array", "items": _NUM},
            },
        },
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "n", "p", "which", "implicit_stages", "estimates",
                 "fits", "flags", "config"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "version": {"const": REPORT_VERSION},
        "n": {"type": "integer", "minimum": 1},
        "p": {"type": "integer", "minimum": 2},
        "which": {"type": "array", "items": {"enum": ["imp", "ipw", "aipw", "aipw2"]}},
        "implicit_stages": {"type": "array", "items": {"enum": ["imp", "ipw"]}},
        "estimates": {
            "type": "object",
            "propertyNames": {"enum": ["IMP", "IMP2", "IPW", "AIPW", "AIPW2"]},
            "additionalProperties": {
                "type": "object",
                "required": ["ate", "e_y1", "e_y0", "variance", "variance_of_estimate",
                             "ci_low", "ci_high"],
                "properties": {
                    "ate": _NUM, "e_y1": _NUM, "e_y0": _NUM,
                    "variance": _NUM_OR_NULL, "variance_of_estimate": _NUM_OR_NULL,
                    "ci_low": _NUM_OR_NULL, "ci_high": _NUM_OR_NULL,
                    "gamma1": _NUM_OR_NULL, "gamma0": _NUM_OR_NULL,
                },
            },
        },
        "fits": {
            "type": "object",
            "propertyNames": {"enum": ["imp1", "imp0", "ipw"]},
            "additionalProperties": _FIT_SCHEMA,
        },
        "flags": {"type": "object"},
        "config": {"type": "object"},
    },
}


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _fit_block(fit):
    c = fit.curve
    block = {
        "projection": fit.projection.matrix.tolist(),
        "bandwidth_dim_red": [float(h) for h in fit.bandwidth_dim_red.resolved],
        "bandwidth_final": [float(h) for h in fit.bandwidth_final.resolved],
        "objective_value": float(fit.objective_value),
        "converged": bool(fit.optimizer.converged),
        "n_iter": int(fit.optimizer.n_iter),
        "n_eval": int(fit.optimizer.n_eval),
        "n_failed_final": int(fit.n_failed_final),
        "status_counts": c.counts(),
        "fitted": {
            "values": [float(v) for v in c.values],
            "derivatives": c.derivatives.tolist(),
            "status": [_STATUS_NAMES[s] for s in c.status],
        },
    }
    if fit.propensity is not None:
        block["fitted"]["propensity"] = [float(v) for v in fit.propensity]
    return block


_STATUS_NAMES = {0: "ok", 1: "interpolated", 2: "extrapolated", 3: "failed"}


def build_report(result: PipelineResult) -> dict:
    """Structured report of a pipeline run (see :data:`REPORT_SCHEMA`)."""
    n = result.data.n
    estimates = {}
    for name, est in result.estimates.items():
        var = result.variances.get(name)
        entry = {"ate": est.ate, "e_y1": est.e_y1, "e_y0": est.e_y0,
                 "variance": _finite_or_none(var), "variance_of_estimate": None,
                 "ci_low": None, "ci_high": None,
                 "gamma1": _finite_or_none(est.gamma1), "gamma0": _finite_or_none(est.gamma0)}
        if entry["variance"] is not None:
            v_est = var / n
            half = Z975 * math.sqrt(max(v_est, 0.0))
            entry.update(variance_of_estimate=v_est, ci_low=est.ate - half,
                         ci_high=est.ate + half)
        estimates[name] = entry
    flags = dict(result.flags)
    flags.update({k: v for k, v in result.bundle.flags.items()})
    flags["imp_weight_inside"] = bool(result.config.variance.imp_weight_inside)
    config = result.config.to_dict()
    # execution detail only; results do not depend on it
    config["smoother"].pop("n_threads", None)
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "n": n,
        "p": result.data.p,
        "which": list(result.which),
        "implicit_stages": list(result.implicit_stages),
        "estimates": estimates,
        "fits": {k: _fit_block(f) for k, f in result.fits.items()},
        "flags": flags,
        "config": config,
    }


def validate_report(report: dict) -> None:
    """Raise :class:`jsonschema.ValidationError` if ``report`` is malformed."""
    jsonschema.validate(report, REPORT_SCHEMA)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, allow_nan=False) + "\n"


def write_report(path, report: dict) -> None:
    validate_report(report)
    with open_out(path) as fh:
        fh.write(dumps_report(report))


def read_report(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            report = json.load(fh)
    except OSError as exc:
        raise DataParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataParseError(f"report is not valid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    try:
        validate_report(report)
    except jsonschema.ValidationError as exc:
        raise DataParseError(f"report does not match the schema: {exc.message}") from None
    return report


# ---------------------------------------------------------------------------
# plot data


def _fit(report, key):
    fit = report.get("fits", {}).get(key)
    if fit is None:
        raise MissingStage(f"report has no {key!r} fit")
    return fit


def plot_rows(report: dict, data: Dataset, which: str):
    """Rows of the requested plot-data table.

    ``imp_index``: every individual's observed outcome and imputed
    counterfactual (2n rows).  ``imp_cms1``/``imp_cms0``: observed or
    imputed arm outcome against the arm's index, sorted by index.
    ``ipw_propensity``: fitted propensity against the propensity index.

    Returns
    -------
    header : list of str
    rows : list of tuple
    """
    if which not in PLOT_KINDS:
        raise ValueError(f"unknown plot {which!r}; choose from {PLOT_KINDS}")
    if report["n"] != data.n or report["p"] != data.p:
        raise ValueError("report and data file disagree on the sample shape")
    t = data.t.astype(int)
    if which == "imp_index":
        m1 = np.asarray(_fit(report, "imp1")["fitted"]["values"])
        m0 = np.asarray(_fit(report, "imp0")["fitted"]["values"])
        rows = []
        for i in range(data.n):
            rows.append((i + 1, float(data.y[i]), "observed", int(t[i])))
            imputed = m0[i] if t[i] == 1 else m1[i]
            rows.append((i + 1, float(imputed), "imputed", 1 - int(t[i])))
        return ["index", "value", "kind", "arm"], rows
    if which in ("imp_cms1", "imp_cms0"):
        arm = 1 if which == "imp_cms1" else 0
        fit = _fit(report, f"imp{arm}")
        B = np.asarray(fit["projection"], dtype=float)
        z = data.X @ B[:, 0]
        m = np.asarray(fit["fitted"]["values"])
        obs = t == arm
        value = np.where(obs, data.y, m)
        order = np.argsort(z, kind="stable")
        return ["projection", "value", "kind", "arm"], [
            (float(z[i]), float(value[i]), "observed" if obs[i] else "imputed", arm)
            for i in order]
    fit = _fit(report, "ipw")
    A = np.asarray(fit["projection"], dtype=float)
    z = data.X @ A[:, 0]
    p = fit["fitted"].get("propensity")
    if p is None:
        raise MissingStage("report has no fitted propensities")
    order = np.argsort(z, kind="stable")
    return ["projection", "p_hat", "t"], [(float(z[i]), float(p[i]), int(t[i])) for i in order]


def write_rows(path, header, rows) -> None:
    with open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
