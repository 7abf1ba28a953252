"""CSV tables shared by predict/evaluate/fusion-search. Fixed float format keeps reruns byte-identical."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd

FLOAT_FORMAT = "%.6f"


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_table(path: Path, required: Sequence[str], text_columns: Sequence[str] = ("study_id",)) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={c: str for c in text_columns})
    except FileNotFoundError:
        raise ValueError(f"{path} not found") from None
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ValueError(f"{path} is not a readable CSV table: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns: {', '.join(missing)}")
    return frame


def read_volume_table(path: Path) -> dict[str, dict[str, float | None]]:
    """Read `study_id,edv_ml,esv_ml[,age_years]` into a dict keyed by study id."""
    frame = read_table(path, ("study_id", "edv_ml", "esv_ml"))
    out: dict[str, dict[str, float | None]] = {}
    has_age = "age_years" in frame.columns
    for row in frame.itertuples(index=False):
        sid = str(row.study_id)
        if sid in out:
            raise ValueError(f"{path}: duplicate study_id {sid}")
        age = getattr(row, "age_years", None) if has_age else None
        out[sid] = {
            "edv_ml": float(row.edv_ml),
            "esv_ml": float(row.esv_ml),
            "age_years": None if age is None or pd.isna(age) else float(age),
        }
    return out


def append_rows(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Append rows to a CSV log, writing the header only when the file is new."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    new = not path.exists()
    frame.to_csv(path, mode="a", header=new, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
