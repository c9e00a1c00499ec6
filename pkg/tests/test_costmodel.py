"""Cost-model tests: the reference table cells, formula cross-checks against
instrumented kernels, ratio claims, and report rendering."""

import itertools
import json

import pytest

from hgnl import costmodel
from hgnl.aggregators import AggregatorConfig, init_params
from hgnl.errors import ConfigError

NL_HALF = AggregatorConfig.nl(1024, 512)
NL_EIGHTH = AggregatorConfig.nl(1024, 128)
HG = AggregatorConfig.hgnl(1024, 128, 16, 8)
HG_SHARED = AggregatorConfig.hgnl(1024, 128, 16, 8, shared=True)


class TestParamTable:
    """All ten numeric cells of the reference parameter table."""

    @pytest.mark.parametrize("config,expected", [
        (NL_HALF, {"query_conv": 524_800, "key_conv": 524_800,
                   "value_conv": 1_049_600, "others": 0, "total": 2_099_200}),
        (NL_EIGHTH, {"query_conv": 131_200, "key_conv": 131_200,
                     "value_conv": 1_049_600, "others": 0, "total": 1_312_000}),
        (HG, {"query_conv": 8_320, "key_conv": 8_320,
              "value_conv": 132_096, "others": 0, "total": 148_736}),
        (HG_SHARED, {"query_conv": 520, "key_conv": 520,
                     "value_conv": 16_512, "others": 0, "total": 17_552}),
    ])
    def test_cells(self, config, expected):
        assert costmodel.param_count(config).params == expected

    def test_total_is_sum(self):
        for config in costmodel.standard_table_configs():
            p = costmodel.param_count(config).params
            assert p["total"] == p["query_conv"] + p["key_conv"] + p["value_conv"] + p["others"]
            assert all(v >= 0 for v in p.values())

    @pytest.mark.parametrize("m,m1,g1,g2,shared", [
        (16, 8, 4, 2, False), (16, 8, 4, 2, True), (32, 16, 8, 4, False),
        (24, 12, 2, 2, True), (8, 8, 1, 1, False),
    ])
    def test_matches_materialized_params(self, m, m1, g1, g2, shared):
        config = AggregatorConfig.hgnl(m, m1, g1, g2, shared=shared)
        assert init_params(config, 0).scalar_count() == \
            costmodel.param_count(config).params["total"]

    def test_monotone_shared_le_grouped_le_dense(self):
        for m1 in (512, 128):
            for g1, g2 in ((2, 2), (4, 2), (16, 8), (8, 8)):
                dense = costmodel.param_count(AggregatorConfig.nl(1024, m1)).params["total"]
                grouped = costmodel.param_count(
                    AggregatorConfig.hgnl(1024, m1, g1, g2)).params["total"]
                shared = costmodel.param_count(
                    AggregatorConfig.hgnl(1024, m1, g1, g2, shared=True)).params["total"]
                assert shared <= grouped <= dense

    def test_avg_has_no_params(self):
        assert costmodel.param_count(AggregatorConfig.average(64)).params["total"] == 0


class TestMaddsFormulas:
    def test_nl_half_width_closed_forms(self):
        m, n = 1024, 8
        r = costmodel.madds(NL_HALF, n).madds
        assert r["query_conv"] == m * m * n == 8_388_608
        assert r["key_conv"] == m * m * n
        assert r["value_conv"] == 2 * m * m * n
        assert r["attention_product"] == n * n * m - n * n
        assert r["activation"] == 0
        assert r["output_product"] == m * n * (2 * n - 1)

    def test_nl_eighth_width_closed_forms(self):
        m, n = 1024, 8
        r = costmodel.madds(NL_EIGHTH, n).madds
        assert r["query_conv"] == m * m * n // 4
        assert r["attention_product"] == n * n * m // 4 - n * n

    def test_hgnl_closed_forms(self):
        m, n, g1, g2 = 1024, 8, 16, 8
        r = costmodel.madds(HG, n).madds
        assert r["query_conv"] == m * m * n // (4 * g1)
        assert r["key_conv"] == m * m * n // (4 * g1)
        assert r["value_conv"] == 2 * m * m * n // g2 == 2_097_152
        assert r["attention_product"] == n * n * m // 4 - g2 * n * n
        assert r["output_product"] == m * n * (2 * n - 1)

    def test_shared_madds_equal_unshared(self):
        assert costmodel.madds(HG, 8).madds == costmodel.madds(HG_SHARED, 8).madds

    def test_invalid_frame_count(self):
        with pytest.raises(ConfigError):
            costmodel.madds(HG, 0)


class TestMeasuredAgainstAnalytic:
    @pytest.mark.parametrize("config,n", [
        (AggregatorConfig.hgnl(16, 4, 4, 2), 3),
        (AggregatorConfig.hgnl(32, 8, 8, 4), 5),
        (AggregatorConfig.nl(16, 8), 3),
        (AggregatorConfig.hgnl(16, 8, 4, 2, shared=True), 4),
    ])
    def test_instrumented_counts_equal_formulas(self, kernel_backend, config, n):
        report = costmodel.madds(config, n)
        assert costmodel.measured_madds(config, n) == report.madds

    def test_property_sweep_small_shapes(self):
        cases = []
        for m, m1 in itertools.product((8, 16, 32), (4, 8)):
            for g1, g2 in ((1, 1), (2, 2), (4, 2), (8, 4)):
                if m % g1 or m1 % g1 or m % g2 or m1 % g2 or g1 % g2:
                    continue
                cases.append(AggregatorConfig.hgnl(m, m1, g1, g2))
        assert len(cases) > 10
        for config in cases:
            for n in (1, 3, 8):
                assert costmodel.measured_madds(config, n) == \
                    costmodel.madds(config, n).madds

    def test_attach_measurement(self):
        report = costmodel.madds(AggregatorConfig.hgnl(16, 4, 4, 2), 3)
        costmodel.attach_measurement(report)
        assert report.measured == report.madds


class TestRatios:
    def test_parameter_ratio_band(self):
        lo = costmodel.param_count(NL_EIGHTH).params["total"] / \
            costmodel.param_count(HG).params["total"]
        hi = costmodel.param_count(NL_HALF).params["total"] / \
            costmodel.param_count(HG).params["total"]
        assert lo == pytest.approx(8.8209, abs=1e-3)
        assert hi == pytest.approx(14.1128, abs=1e-3)
        assert 8 <= lo <= 14 and 8 <= hi <= 14.2

    def test_shared_ratio_near_70x(self):
        ratio = costmodel.param_count(NL_EIGHTH).params["total"] / \
            costmodel.param_count(HG_SHARED).params["total"]
        assert ratio == pytest.approx(74.75, abs=0.01)
        assert abs(ratio - 70) / 70 <= 0.10

    def test_compare_reports_pairs(self):
        out = costmodel.compare([NL_EIGHTH, HG, HG_SHARED], n=8)
        assert len(out["configs"]) == 3
        assert len(out["ratios"]) == 3
        first = out["ratios"][0]
        assert first["param_ratio"] == pytest.approx(1_312_000 / 148_736)

    def test_compare_empty(self):
        with pytest.raises(ConfigError):
            costmodel.compare([], 4)


class TestRendering:
    def test_params_table_contains_all_cells(self):
        reports = [costmodel.param_count(c) for c in costmodel.standard_table_configs()]
        text = costmodel.render_params_table(reports)
        for cell in ("524800", "131200", "8320", "520", "1049600",
                     "132096", "16512", "2099200", "1312000", "148736", "17552"):
            assert cell in text

    def test_madds_table_renders(self):
        reports = [costmodel.madds(c, 8) for c in costmodel.standard_table_configs()]
        text = costmodel.render_madds_table(reports)
        assert "8388608" in text and "2097152" in text
        assert "n=8" in text

    def test_report_json_round_trips_exact_integers(self):
        report = costmodel.madds(HG, 8)
        blob = json.dumps(report.to_dict(), sort_keys=True)
        parsed = json.loads(blob)
        assert parsed["params"]["total"] == 148_736
        assert parsed["madds"]["value_conv"] == 2_097_152
        assert json.dumps(report.to_dict(), sort_keys=True) == blob

    def test_formula_strings(self):
        f = costmodel.madds_formulas(HG)
        assert f["query_conv"] == "2*m*m1*n/g1"
        assert costmodel.madds_formulas(NL_HALF)["value_conv"] == "2*m*m*n"
