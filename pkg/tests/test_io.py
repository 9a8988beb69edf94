import copy
import json

import jsonschema
import numpy as np
import pytest

from sdrate.config import Study1Config
from sdrate.exceptions import DataParseError, MissingStage
from sdrate.io import (
    build_report,
    dumps_report,
    fmt,
    plot_rows,
    read_dataset,
    read_report,
    validate_report,
    write_report,
    write_simulated,
)
from sdrate.simulation import generate_study1


@pytest.mark.parametrize("v,text", [
    (0.1, "0.10000000000000001"),
    (2.0, "2"),
    (float("nan"), "NA"),
    (1, "1"),
    ("imputed", "imputed"),
])
def test_fmt(v, text):
    assert fmt(v) == text


def test_dataset_round_trip_exact(tmp_path):
    sim = generate_study1(Study1Config(n=25), seed=3)
    path = tmp_path / "d.csv"
    write_simulated(path, sim, with_latent=True)
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,x4,x5,x6,y,t,y1,y0"
    data, latent = read_dataset(path)
    assert np.array_equal(data.X, sim.data.X)
    assert np.array_equal(data.y, sim.data.y)
    assert np.array_equal(data.t, sim.data.t)
    assert np.array_equal(latent[0], sim.y1) and np.array_equal(latent[1], sim.y0)


def test_dataset_without_latent(tmp_path):
    sim = generate_study1(Study1Config(n=10), seed=3)
    path = tmp_path / "d.csv"
    write_simulated(path, sim)
    lines = path.read_text().splitlines()
    assert len(lines) == 11
    assert lines[0] == "x1,x2,x3,x4,x5,x6,y,t"
    assert read_dataset(path)[1] is None


@pytest.mark.parametrize("text,line,column", [
    ("", 1, 1),
    ("x1,x2,y,t\n", 2, 1),
    ("x1,x2,y\n1,2,3\n", 1, 1),
    ("x1,x3,y,t\n1,2,3,1\n", 1, 2),
    ("x1,x2,y,t\n1,2,3,1\n1,abc,3,0\n", 3, 2),
    ("x1,x2,y,t\n1,2,3,1\n1,2,3\n", 3, 4),
    ("x1,x2,y,t\n1,2,3,2\n", 2, 4),
    ("x1,x2,y,t\n1,inf,3,1\n", 2, 2),
])
def test_parse_errors_report_location(text, line, column):
    with pytest.raises(DataParseError) as info:
        read_dataset(text, from_text=True)
    assert (info.value.line, info.value.column) == (line, column)
    assert f"line {line}, column {column}" in str(info.value)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(DataParseError):
        read_dataset(tmp_path / "absent.csv")


def test_report_schema_and_content(small_result):
    report = build_report(small_result)
    validate_report(report)
    assert set(report["estimates"]) == {"IMP", "IMP2", "IPW", "AIPW", "AIPW2"}
    n = small_result.data.n
    for name, e in report["estimates"].items():
        assert e["variance_of_estimate"] == pytest.approx(e["variance"] / n, rel=1e-15)
        assert e["ci_low"] < e["ate"] < e["ci_high"]
    assert report["estimates"]["AIPW"]["variance"] == report["estimates"]["AIPW2"]["variance"]
    assert report["fits"]["imp1"]["projection"][0] == [1.0]
    assert report["fits"]["ipw"]["projection"][0] == [-0.27]
    assert "n_threads" not in report["config"]["smoother"]


def test_report_round_trip(tmp_path, small_result):
    report = build_report(small_result)
    path = tmp_path / "r.json"
    write_report(path, report)
    assert read_report(path) == json.loads(dumps_report(report))
    assert read_report(path)["estimates"]["IMP"]["ate"] == small_result.estimates["IMP"].ate


def test_schema_rejects_malformed(small_result):
    report = build_report(small_result)
    bad = copy.deepcopy(report)
    del bad["estimates"]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)
    bad = copy.deepcopy(report)
    bad["format"] = "other"
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)


def test_invalid_report_file(tmp_path):
    path = tmp_path / "r.json"
    path.write_text("{not json")
    with pytest.raises(DataParseError):
        read_report(path)
    path.write_text("{}")
    with pytest.raises(DataParseError):
        read_report(path)


def test_plot_imp_index(small_result):
    report = build_report(small_result)
    header, rows = plot_rows(report, small_result.data, "imp_index")
    assert header == ["index", "value", "kind", "arm"]
    assert len(rows) == 2 * small_result.data.n
    assert {r[2] for r in rows} == {"observed", "imputed"}


@pytest.mark.parametrize("which", ["imp_cms1", "imp_cms0"])
def test_plot_cms_sorted(small_result, which):
    header, rows = plot_rows(build_report(small_result), small_result.data, which)
    assert header == ["projection", "value", "kind", "arm"]
    z = [r[0] for r in rows]
    assert z == sorted(z)
    assert len(rows) == small_result.data.n


def test_plot_propensity_in_unit_interval(small_result):
    header, rows = plot_rows(build_report(small_result), small_result.data, "ipw_propensity")
    assert header == ["projection", "p_hat", "t"]
    p = np.array([r[1] for r in rows])
    assert np.all((p > 0) & (p < 1))
    z = [r[0] for r in rows]
    assert z == sorted(z)


def test_plot_missing_stage(small_result):
    report = build_report(small_result)
    del report["fits"]["ipw"]
    with pytest.raises(MissingStage):
        plot_rows(report, small_result.data, "ipw_propensity")
