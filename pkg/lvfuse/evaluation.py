"""
Volume and EF agreement statistics: RMSE, MRMSE, absolute errors with their SD, Pearson R and
Bland-Altman limits, aggregated overall and per age group.

All SDs are population SDs (divide by n). EF is a fraction internally and percent on disk.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from services.json_store import write_json_atomic
from services.tables import write_rows

log = logging.getLogger(__name__)

BA_Z = 1.96
QUANTITIES = ("edv", "esv", "ef")
REPORT_COLUMNS = ("quantity", "group", "n", "rmse", "aesd", "r", "ba_mean", "ba_lo", "ba_hi")
OVERALL = "all"


@dataclass(frozen=True)
class AgeBin:
    label: str
    lo: float
    hi: float

    def contains(self, age: float) -> bool:
        return self.lo <= age < self.hi


DEFAULT_AGE_BINS: tuple[AgeBin, ...] = (
    AgeBin("<10", -math.inf, 10),
    *(AgeBin(f"{a}-{a + 10}", a, a + 10) for a in range(10, 70, 10)),
    AgeBin(">70", 70, math.inf),
)


def ef(edv: float, esv: float) -> float:
    if edv <= 0:
        raise ValueError(f"EDV must be positive to compute EF, got {edv}")
    return (edv - esv) / edv


@dataclass(frozen=True)
class PredictionRecord:
    study_id: str
    pred_edv: float
    pred_esv: float
    true_edv: float
    true_esv: float
    age_years: float | None = None

    def __post_init__(self) -> None:
        if min(self.pred_edv, self.pred_esv, self.true_edv, self.true_esv) <= 0:
            raise ValueError(f"{self.study_id}: volumes must be positive")

    @property
    def pred_ef(self) -> float:
        return ef(self.pred_edv, self.pred_esv)

    @property
    def true_ef(self) -> float:
        return ef(self.true_edv, self.true_esv)

    def pair(self, quantity: str) -> tuple[float, float]:
        if quantity == "edv":
            return self.pred_edv, self.true_edv
        if quantity == "esv":
            return self.pred_esv, self.true_esv
        if quantity == "ef":
            return self.pred_ef, self.true_ef
        raise ValueError(f"unknown quantity {quantity!r}")


def _pair(preds: Sequence[float], truths: Sequence[float], minimum: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"prediction and truth lengths differ ({p.size} vs {t.size})")
    if p.size < minimum:
        raise ValueError(f"need at least {minimum} value pair(s), got {p.size}")
    return p, t


def rmse(preds: Sequence[float], truths: Sequence[float]) -> float:
    p, t = _pair(preds, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mrmse(rmse_edv: float, rmse_esv: float) -> float:
    return (rmse_edv + rmse_esv) / 2.0


def ae_and_aesd(preds: Sequence[float], truths: Sequence[float]) -> tuple[np.ndarray, float]:
    p, t = _pair(preds, truths)
    ae = np.abs(p - t)
    return ae, float(ae.std())


def correlation(preds: Sequence[float], truths: Sequence[float]) -> float:
    p, t = _pair(preds, truths, minimum=2)
    if p.std() == 0 or t.std() == 0:
        raise ValueError("correlation is undefined for zero-variance input")
    return float(stats.pearsonr(p, t).statistic)


def bland_altman(preds: Sequence[float], truths: Sequence[float]) -> tuple[float, float, float]:
    """(mean difference, lower limit, upper limit) with limits at mean -/+ 1.96 SD of pred - truth."""
    p, t = _pair(preds, truths, minimum=2)
    diff = p - t
    mean = float(diff.mean())
    half = BA_Z * float(diff.std())
    return mean, mean - half, mean + half


@dataclass(frozen=True)
class QuantityStats:
    quantity: str
    group: str
    n: int
    rmse: float | None = None
    aesd: float | None = None
    r: float | None = None
    ba_mean: float | None = None
    ba_lo: float | None = None
    ba_hi: float | None = None

    @property
    def agreement(self) -> float | None:
        """Half-width of the Bland-Altman band (1.96 SD of differences)."""
        if self.ba_hi is None or self.ba_mean is None:
            return None
        return self.ba_hi - self.ba_mean

    @property
    def correlation_defined(self) -> bool:
        return self.r is not None


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[QuantityStats, ...]
    pooled_r: float | None

    def get(self, quantity: str, group: str = OVERALL) -> QuantityStats:
        for row in self.rows:
            if row.quantity == quantity and row.group == group:
                return row
        raise KeyError(f"no report row for {quantity}/{group}")


def _quantity_stats(quantity: str, group: str, records: Sequence[PredictionRecord], full: bool) -> QuantityStats:
    n = len(records)
    if not full:
        return QuantityStats(quantity, group, n)
    pairs = [r.pair(quantity) for r in records]
    preds = [p for p, _ in pairs]
    truths = [t for _, t in pairs]
    _, aesd = ae_and_aesd(preds, truths)
    r_value: float | None = None
    ba: tuple[float | None, float | None, float | None] = (None, None, None)
    if n >= 2:
        try:
            r_value = correlation(preds, truths)
        except ValueError:
            r_value = None
        ba = bland_altman(preds, truths)
    return QuantityStats(quantity, group, n, rmse(preds, truths), aesd, r_value, *ba)


def pooled_volume_correlation(records: Sequence[PredictionRecord]) -> float | None:
    preds = [r.pred_edv for r in records] + [r.pred_esv for r in records]
    truths = [r.true_edv for r in records] + [r.true_esv for r in records]
    try:
        return correlation(preds, truths)
    except ValueError:
        return None


def build_report(records: Sequence[PredictionRecord], age_bins: Sequence[AgeBin] = DEFAULT_AGE_BINS) -> EvalReport:
    if not records:
        raise ValueError("cannot build a report from zero records")
    rows = [_quantity_stats(q, OVERALL, records, full=True) for q in QUANTITIES]
    for b in age_bins:
        members = [r for r in records if r.age_years is not None and b.contains(r.age_years)]
        if not members:
            continue
        rows += [_quantity_stats(q, b.label, members, full=len(members) >= 2) for q in QUANTITIES]
    report = EvalReport(tuple(rows), pooled_volume_correlation(records))
    overall = report.get("edv")
    log.info("evaluation: n=%d edv_rmse=%.3f esv_rmse=%.3f", overall.n, overall.rmse or 0.0, report.get("esv").rmse or 0.0)
    return report


def _scale(quantity: str) -> float:
    return 100.0 if quantity == "ef" else 1.0


def _scaled(value: float | None, factor: float) -> float | None:
    return None if value is None else value * factor


def write_report(report: EvalReport, records: Sequence[PredictionRecord], out_dir: Path) -> list[Path]:
    """report.csv, report_summary.json and per-quantity scatter / Bland-Altman plot data."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    table = []
    for row in report.rows:
        k = _scale(row.quantity)
        table.append(
            (
                row.quantity,
                row.group,
                row.n,
                _scaled(row.rmse, k),
                _scaled(row.aesd, k),
                row.r,
                _scaled(row.ba_mean, k),
                _scaled(row.ba_lo, k),
                _scaled(row.ba_hi, k),
            )
        )
    path = out_dir / "report.csv"
    write_rows(path, REPORT_COLUMNS, table)
    written.append(path)

    summary = {
        "n": len(records),
        "pooled_volume_r": report.pooled_r,
        "agreement": {q: _scaled(report.get(q).agreement, _scale(q)) for q in QUANTITIES},
        "ef_unit": "percent",
    }
    path = out_dir / "report_summary.json"
    write_json_atomic(path, summary)
    written.append(path)

    for q in QUANTITIES:
        k = _scale(q)
        pairs = [(r.study_id, *r.pair(q)) for r in records]
        path = out_dir / f"scatter_{q}.csv"
        write_rows(path, ("study_id", "predicted", "true"), [(sid, p * k, t * k) for sid, p, t in pairs])
        written.append(path)
        path = out_dir / f"bland_altman_{q}.csv"
        write_rows(path, ("study_id", "mean", "diff"), [(sid, (p + t) / 2 * k, (p - t) * k) for sid, p, t in pairs])
        written.append(path)
    log.info("evaluation: wrote %d report files to %s", len(written), out_dir)
    return written


def records_from_tables(
    predictions: dict[str, dict[str, float | None]],
    truths: dict[str, dict[str, float | None]],
) -> list[PredictionRecord]:
    """Join prediction and truth tables on study id; ids missing from either side are dropped."""
    common = sorted(set(predictions) & set(truths))
    dropped = len(set(predictions) ^ set(truths))
    if dropped:
        log.warning("evaluation: %d study ids present in only one table; ignored", dropped)
    out: list[PredictionRecord] = []
    for sid in common:
        p, t = predictions[sid], truths[sid]
        if min(float(p["edv_ml"]), float(p["esv_ml"])) <= 0:  # type: ignore[arg-type]
            log.warning("evaluation: study=%s has a non-positive predicted volume; skipped", sid)
            continue
        age = t.get("age_years") if t.get("age_years") is not None else p.get("age_years")
        out.append(
            PredictionRecord(
                sid,
                float(p["edv_ml"]),  # type: ignore[arg-type]
                float(p["esv_ml"]),  # type: ignore[arg-type]
                float(t["edv_ml"]),  # type: ignore[arg-type]
                float(t["esv_ml"]),  # type: ignore[arg-type]
                age,
            )
        )
    return out
