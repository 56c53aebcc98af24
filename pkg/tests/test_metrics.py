import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csiloc.errors import ParameterError
from csiloc.localizers import LocationEstimate
from csiloc.metrics import ErrorReport, cdf_quantile, distance_errors, error_cdf, format_table, mde, write_summary


class TestMde:
    def test_zero(self):
        pts = np.random.default_rng(0).normal(size=(10, 2))
        assert mde(pts, pts) == 0.0

    def test_345(self):
        assert mde([[3.0, 4.0]], [[0.0, 0.0]]) == 5.0

    def test_two_pairs(self):
        assert mde([[3.0, 4.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]]) == 2.5

    def test_location_estimates(self):
        assert mde([LocationEstimate((3.0, 4.0), "knn")], [(0.0, 0.0)]) == 5.0

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            mde(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_empty(self):
        with pytest.raises(ParameterError):
            mde(np.zeros((0, 2)), np.zeros((0, 2)))


class TestCdf:
    def test_four_points(self):
        assert error_cdf([3.0, 1.0, 4.0, 2.0]) == [(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]

    def test_all_equal(self):
        assert error_cdf([0.7] * 5) == [(0.7, 1.0)]

    def test_repeated_values_step(self):
        assert error_cdf([1.0, 1.0, 2.0, 3.0]) == [(1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]

    def test_median_oracle(self):
        e = np.random.default_rng(0).exponential(size=1000)
        srt = sorted(e.tolist())
        assert cdf_quantile(error_cdf(e), 0.5) == (srt[499] + srt[500]) / 2

    def test_median_odd(self):
        e = np.random.default_rng(1).exponential(size=999)
        assert cdf_quantile(error_cdf(e), 0.5) == sorted(e.tolist())[499]

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
    def test_monotone_and_complete(self, errors):
        cdf = error_cdf(errors)
        xs = [x for x, _ in cdf]
        fs = [f for _, f in cdf]
        assert xs == sorted(set(xs))
        assert all(b > a for a, b in zip(fs, fs[1:]))
        assert fs[-1] == 1.0

    def test_empty(self):
        with pytest.raises(ParameterError):
            error_cdf([])


class TestReport:
    def test_summary_consistent(self):
        rng = np.random.default_rng(2)
        truth = rng.uniform(0, 5, (101, 2))
        est = truth + rng.normal(size=(101, 2))
        rep = ErrorReport.build("sln+fn", est, truth, "a" * 64, "b" * 64)
        errs = distance_errors(est, truth)
        s = rep.summary()
        assert s["mde_m"] == pytest.approx(errs.mean(), rel=1e-15)
        assert s["max_error_m"] == errs.max()
        assert s["median_m"] == np.median(errs)
        assert s["n"] == 101

    def test_write_files(self, tmp_path):
        rep = ErrorReport.build("sln+fn", [[3.0, 4.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]])
        rep.write(tmp_path)
        rows = (tmp_path / "errors_sln_fn.csv").read_text().splitlines()
        assert rows[0] == "index,x_true,y_true,x_est,y_est,error_m"
        assert rows[1] == "0,0.0,0.0,3.0,4.0,5.0"
        assert (tmp_path / "cdf_sln_fn.csv").read_text().splitlines() == [
            "error_m,cumulative_fraction", "0.0,0.5", "5.0,1.0"]

    def test_summary_json_and_table(self, tmp_path):
        reps = [ErrorReport.build(m, [[3.0, 4.0]], [[0.0, 0.0]]) for m in ("knn", "sln")]
        write_summary(reps, tmp_path / "summary.json")
        data = json.loads((tmp_path / "summary.json").read_text())
        assert [d["method"] for d in data] == ["knn", "sln"]
        table = format_table(data)
        assert "knn" in table.splitlines()[1] and "5.000" in table
