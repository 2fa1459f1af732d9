"""Run collection and report merging on hand-built run directories."""

import csv
import json
import os

import pytest

from counterfake import report as reportmod
from counterfake.errors import ConfigurationError, IngestionError
from counterfake.experiments import LOG_COLUMNS


def make_run(root, name, variant=None, setting=None, aggregates=None, log_rows=0):
    """Assemble a minimal run directory from raw files."""
    run = root / name
    run.mkdir()
    if variant is not None:
        (run / "provenance.json").write_text(json.dumps(
            {"variant": variant, "setting": setting, "seed": 1}))
    if aggregates is not None:
        (run / "reports").mkdir()
        (run / "reports" / "metrics.json").write_text(json.dumps(
            {"variant": variant, "aggregates": aggregates}))
    if log_rows:
        (run / "logs").mkdir()
        with open(run / "logs" / "train_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for step in range(log_rows):
                writer.writerow([step] + [float(step + k) for k in range(len(LOG_COLUMNS) - 1)])
    return run


AGG = {"count": 4, "aih_mean": 50.0, "aih_std": 2.0, "ati_mean": None, "ati_std": None}


class TestCollectRun:
    def test_not_a_directory(self, tmp_path):
        with pytest.raises(IngestionError, match="not a run directory"):
            reportmod.collect_run(str(tmp_path / "ghost"))

    def test_variant_from_provenance(self, tmp_path):
        run = make_run(tmp_path, "a", variant="Original", aggregates=AGG)
        got = reportmod.collect_run(str(run))
        assert got["variant"] == "Original"
        assert got["setting"] == "white-box"
        assert got["aggregates"]["aih_mean"] == 50.0

    def test_variant_from_metrics_when_no_provenance(self, tmp_path):
        run = make_run(tmp_path, "b", aggregates=AGG)
        (run / "reports" / "metrics.json").write_text(json.dumps(
            {"variant": "Random", "aggregates": AGG}))
        got = reportmod.collect_run(str(run))
        assert got["variant"] == "Random"

    def test_nothing_naming_a_variant(self, tmp_path):
        run = make_run(tmp_path, "c", log_rows=3)
        with pytest.raises(IngestionError, match="variant"):
            reportmod.collect_run(str(run))

    def test_tail_means_last_tenth(self, tmp_path):
        # 20 rows -> ceil(0.1 * 20) = 2 rows averaged; adv column is step + 0
        run = make_run(tmp_path, "d", variant="Original", log_rows=20)
        got = reportmod.collect_run(str(run))
        assert got["tail"]["adv"] == pytest.approx((18 + 19) / 2)
        assert got["curve"]["step"] == [float(s) for s in range(20)]

    def test_single_row_log(self, tmp_path):
        run = make_run(tmp_path, "e", variant="Original", log_rows=1)
        got = reportmod.collect_run(str(run))
        assert got["tail"]["adv"] == 0.0

    def test_custom_variant_setting_fallback(self, tmp_path):
        run = make_run(tmp_path, "f", variant="MyThing", aggregates=AGG)
        assert reportmod.collect_run(str(run))["setting"] == "custom"


class TestMergeReports:
    def test_rows_follow_variant_table_order(self, tmp_path):
        runs = [make_run(tmp_path, "r1", variant="Random", aggregates=AGG, log_rows=10),
                make_run(tmp_path, "r2", variant="Original", aggregates=AGG, log_rows=10),
                make_run(tmp_path, "r3", variant="PGD-01", aggregates=AGG, log_rows=10)]
        out = tmp_path / "cmp"
        merged = reportmod.merge_reports([str(r) for r in runs], str(out))
        assert [r["variant"] for r in merged["rows"]] == ["Original", "PGD-01", "Random"]

    def test_unknown_variants_sort_after_known(self, tmp_path):
        runs = [make_run(tmp_path, "r1", variant="Zeta", aggregates=AGG),
                make_run(tmp_path, "r2", variant="Alpha", aggregates=AGG),
                make_run(tmp_path, "r3", variant="Lite", aggregates=AGG)]
        merged = reportmod.merge_reports([str(r) for r in runs], str(tmp_path / "cmp"))
        assert [r["variant"] for r in merged["rows"]] == ["Lite", "Alpha", "Zeta"]

    def test_duplicate_variant_rejected(self, tmp_path):
        r1 = make_run(tmp_path, "r1", variant="Original", aggregates=AGG)
        r2 = make_run(tmp_path, "r2", variant="Original", aggregates=AGG)
        with pytest.raises(ConfigurationError, match="duplicate variant"):
            reportmod.merge_reports([str(r1), str(r2)], str(tmp_path / "cmp"))

    def test_csv_formats_none_as_empty(self, tmp_path):
        run = make_run(tmp_path, "r1", variant="Original", aggregates=AGG)
        merged = reportmod.merge_reports([str(run)], str(tmp_path / "cmp"))
        with open(merged["csv"], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["ati_mean"] == ""
        assert rows[0]["aih_mean"] == "50"
        assert rows[0]["total_G_tail"] == ""  # no training log in this run

    def test_metrics_only_run_gets_no_curve_plot(self, tmp_path):
        run = make_run(tmp_path, "r1", variant="Original", aggregates=AGG)
        out = tmp_path / "cmp"
        reportmod.merge_reports([str(run)], str(out))
        assert (out / "aih_by_variant.png").exists()
        assert not (out / "total_G_by_variant.png").exists()

    def test_log_only_run_gets_no_bar_chart(self, tmp_path):
        run = make_run(tmp_path, "r1", variant="Original", log_rows=10)
        out = tmp_path / "cmp"
        merged = reportmod.merge_reports([str(run)], str(out))
        assert merged["rows"][0]["aih_mean"] is None
        assert not (out / "aih_by_variant.png").exists()
        assert (out / "total_G_by_variant.png").exists()

    def test_merge_twice_is_byte_identical(self, tmp_path):
        runs = [make_run(tmp_path, "r1", variant="Original", aggregates=AGG, log_rows=10),
                make_run(tmp_path, "r2", variant="Random", aggregates=AGG, log_rows=10)]
        out1, out2 = tmp_path / "cmp1", tmp_path / "cmp2"
        reportmod.merge_reports([str(r) for r in runs], str(out1))
        reportmod.merge_reports([str(r) for r in runs], str(out2))
        for name in ("comparison.csv", "comparison.json",
                     "aih_by_variant.png", "total_G_by_variant.png"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
