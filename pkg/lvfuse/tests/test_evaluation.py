from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

import evaluation as ev


def _records() -> list[ev.PredictionRecord]:
    return [
        ev.PredictionRecord("a", 150.0, 60.0, 140.0, 62.0, 5.0),
        ev.PredictionRecord("b", 110.0, 48.0, 120.0, 50.0, 34.0),
        ev.PredictionRecord("c", 95.0, 40.0, 100.0, 35.0, 38.0),
        ev.PredictionRecord("d", 180.0, 90.0, 170.0, 85.0, None),
    ]


@pytest.mark.parametrize(
    ("edv", "esv", "percent"),
    [(140, 60, 57.1), (150, 67, 55.3), (130, 67, 48.5), (150, 53, 64.7), (130, 53, 59.2)],
)
def test_ef_values(edv, esv, percent):
    assert ev.ef(edv, esv) * 100 == pytest.approx(percent, abs=0.1)


def test_ef_error_grows_when_volume_errors_diverge():
    true_ef = ev.ef(140, 60) * 100
    diffs = [abs(ev.ef(e, s) * 100 - true_ef) for e, s in ((150, 67), (130, 67), (150, 53), (130, 53))]
    assert diffs == pytest.approx([1.8, 8.6, 7.6, 2.1], abs=0.1)


def test_ef_rejects_non_positive_edv():
    with pytest.raises(ValueError, match="positive"):
        ev.ef(0.0, 10.0)


def test_rmse_and_mrmse():
    assert ev.rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert ev.rmse([3.0, -1.0], [0.0, 3.0]) == pytest.approx(np.sqrt(12.5))
    assert ev.mrmse(8.1, 6.9) == pytest.approx(7.5)


def test_pairing_errors():
    with pytest.raises(ValueError, match="lengths differ"):
        ev.rmse([1.0, 2.0], [1.0])
    with pytest.raises(ValueError, match="at least 1"):
        ev.rmse([], [])
    with pytest.raises(ValueError, match="at least 2"):
        ev.bland_altman([1.0], [2.0])


def test_aesd_is_population_sd():
    ae, sd = ev.ae_and_aesd([1.0, 5.0], [0.0, 2.0])
    np.testing.assert_allclose(ae, [1.0, 3.0])
    assert sd == pytest.approx(1.0)


def test_correlation_matches_perfect_line_and_rejects_constants():
    assert ev.correlation([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero-variance"):
        ev.correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_bland_altman_limits_from_mean_and_sd():
    sd = 5.918
    truth = [100.0, 100.0]
    preds = [100.0 - 2.5 + sd, 100.0 - 2.5 - sd]
    mean, lo, hi = ev.bland_altman(preds, truth)
    assert mean == pytest.approx(-2.5)
    assert lo == pytest.approx(-14.1, abs=0.05)
    assert hi == pytest.approx(9.1, abs=0.05)


def test_prediction_record_rejects_non_positive_volumes():
    with pytest.raises(ValueError, match="positive"):
        ev.PredictionRecord("x", 100.0, 0.0, 100.0, 40.0)


def test_default_age_bins_cover_all_ages():
    labels = [b.label for b in ev.DEFAULT_AGE_BINS]
    assert labels == ["<10", "10-20", "20-30", "30-40", "40-50", "50-60", "60-70", ">70"]
    for age in (0.0, 9.99, 10.0, 45.5, 69.9, 70.0, 99.0):
        assert sum(b.contains(age) for b in ev.DEFAULT_AGE_BINS) == 1


def test_build_report_groups_by_age():
    report = ev.build_report(_records())
    overall = report.get("edv")
    assert overall.n == 4
    assert overall.rmse == pytest.approx(np.sqrt((100 + 100 + 25 + 100) / 4))
    assert report.get("esv", "30-40").n == 2
    assert report.get("esv", "30-40").rmse == pytest.approx(np.sqrt((4 + 25) / 2))
    single = report.get("edv", "<10")
    assert single.n == 1 and single.rmse is None and single.r is None
    with pytest.raises(KeyError):
        report.get("edv", "60-70")
    assert report.pooled_r is not None and report.pooled_r > 0.9


def test_build_report_needs_records():
    with pytest.raises(ValueError, match="zero records"):
        ev.build_report([])


def test_write_report_files(tmp_path):
    records = _records()
    report = ev.build_report(records)
    written = ev.write_report(report, records, tmp_path)
    names = sorted(p.name for p in written)
    assert "report.csv" in names and "report_summary.json" in names
    assert {f"scatter_{q}.csv" for q in ev.QUANTITIES} <= set(names)
    table = pd.read_csv(tmp_path / "report.csv")
    assert list(table.columns) == list(ev.REPORT_COLUMNS)
    ef_row = table[(table["quantity"] == "ef") & (table["group"] == "all")].iloc[0]
    assert ef_row["rmse"] == pytest.approx(report.get("ef").rmse * 100, abs=1e-5)
    summary = json.loads((tmp_path / "report_summary.json").read_text())
    assert summary["n"] == 4 and summary["ef_unit"] == "percent"
    ba = pd.read_csv(tmp_path / "bland_altman_edv.csv")
    assert ba.loc[0, "diff"] == pytest.approx(10.0)
    assert ba.loc[0, "mean"] == pytest.approx(145.0)


def test_records_from_tables_joins_on_id():
    preds = {"a": {"edv_ml": 120.0, "esv_ml": 50.0, "age_years": 30.0}, "b": {"edv_ml": 1.0, "esv_ml": 1.0}}
    truths = {"a": {"edv_ml": 125.0, "esv_ml": 45.0, "age_years": None}, "c": {"edv_ml": 1.0, "esv_ml": 1.0}}
    records = ev.records_from_tables(preds, truths)
    assert records == [ev.PredictionRecord("a", 120.0, 50.0, 125.0, 45.0, 30.0)]


@pytest.mark.parametrize("seed", range(10))
def test_rmse_symmetric_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(20.0, 200.0, 12)
    t = rng.uniform(20.0, 200.0, 12)
    order = rng.permutation(12)
    assert ev.rmse(p, t) == pytest.approx(ev.rmse(t, p), rel=1e-12)
    assert ev.rmse(p[order], t[order]) == pytest.approx(ev.rmse(p, t), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mrmse_lies_between_its_inputs(seed):
    a, b = np.random.default_rng(seed).uniform(0.0, 50.0, 2)
    assert min(a, b) <= ev.mrmse(a, b) <= max(a, b)


def test_records_from_tables_skips_non_positive_predictions(caplog):
    preds = {"a": {"edv_ml": 0.0, "esv_ml": 40.0}, "b": {"edv_ml": 110.0, "esv_ml": 45.0}}
    truths = {"a": {"edv_ml": 120.0, "esv_ml": 50.0}, "b": {"edv_ml": 115.0, "esv_ml": 48.0}}
    records = ev.records_from_tables(preds, truths)
    assert [r.study_id for r in records] == ["b"]
    assert "study=a has a non-positive predicted volume" in caplog.text
