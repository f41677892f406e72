"""CSV ingestion and export for the country-year panel schema."""

import io
import logging
import os
from typing import List, Tuple, Union

import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, field_validator

from cffe.errors import IoFailure, MalformedCsv, SchemaMismatch
from cffe.panel.panel_core import BASE_COLUMNS, PanelDataset, build_dataset, compute_event_time

log = logging.getLogger(__name__)

Source = Union[bytes, str, os.PathLike, io.IOBase]


def _split_list(raw):
    if raw is None:
        return []
    if isinstance(raw, str):
        return [t.strip() for t in raw.split(",") if t.strip()]
    return [str(t).strip() for t in raw if str(t).strip()]


class PanelSchema(BaseModel):
    """Which CSV columns are pre-treatment features and which are extra outcomes."""

    features: Tuple[str, ...] = ()
    extra_outcomes: Tuple[str, ...] = ()

    @field_validator("features", "extra_outcomes", mode="before")
    @classmethod
    def _listify(cls, v):
        return tuple(_split_list(v))

    @classmethod
    def from_config_file(cls, path) -> "PanelSchema":
        """Read a key=value sidecar: FEATURES=a,b,c and EXTRA_OUTCOMES=d,e."""
        try:
            values = dotenv_values(path)
        except OSError as e:
            raise IoFailure(f"cannot read schema file {path}: {e}") from e
        if not values:
            raise SchemaMismatch(f"schema file {path} is empty or missing")
        return cls(features=values.get("FEATURES") or "", extra_outcomes=values.get("EXTRA_OUTCOMES") or "")

    def to_config_text(self) -> str:
        return f"FEATURES={','.join(self.features)}\nEXTRA_OUTCOMES={','.join(self.extra_outcomes)}\n"


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, io.IOBase):
        data = source.read()
        return data.encode("utf-8") if isinstance(data, str) else data
    try:
        with open(source, "rb") as f:
            return f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {source}: {e}") from e


def _parse_numeric(raw: pd.DataFrame, column: str, integer: bool = False) -> pd.Series:
    """Empty cells become NaN; any other unparseable cell raises with its CSV line number."""
    cells = raw[column].str.strip()
    parsed = pd.to_numeric(cells.where(cells != ""), errors="coerce")
    bad = cells.ne("") & parsed.isna()
    if integer:
        bad |= parsed.notna() & (parsed != parsed.round())
    if bad.any():
        pos = int(bad.to_numpy().nonzero()[0][0])
        raise MalformedCsv(
            f"cannot parse {cells.iloc[pos]!r} in column {column} at line {pos + 2}",
            row=pos + 2,
            column=column,
        )
    # correctly rounded conversion so exported floats load back bit-identical
    return cells.where(parsed.notna()).astype(float)


def load_panel(source: Source, schema: PanelSchema) -> PanelDataset:
    data = _read_bytes(source)
    try:
        raw = pd.read_csv(io.BytesIO(data), dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise MalformedCsv(f"unreadable CSV: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise SchemaMismatch("CSV has no header row") from e

    declared = [*BASE_COLUMNS, *schema.features, *schema.extra_outcomes]
    missing = [c for c in declared if c not in raw.columns]
    if missing:
        raise SchemaMismatch(f"missing declared columns: {', '.join(missing)}", columns=missing)

    year = _parse_numeric(raw, "year", integer=True)
    if year.isna().any():
        pos = int(year.isna().to_numpy().nonzero()[0][0])
        raise MalformedCsv(f"empty year at line {pos + 2}", row=pos + 2, column="year")

    frame = pd.DataFrame(
        {
            "country": raw["country"].str.strip(),
            "year": year.astype("int64"),
            "outcome": _parse_numeric(raw, "outcome"),
            "adoption_year": pd.array(_parse_numeric(raw, "adoption_year", integer=True), dtype="Int64"),
        }
    )
    blank = frame["country"] == ""
    if blank.any():
        pos = int(blank.to_numpy().nonzero()[0][0])
        raise MalformedCsv(f"empty country at line {pos + 2}", row=pos + 2, column="country")
    for col in (*schema.features, *schema.extra_outcomes):
        frame[col] = _parse_numeric(raw, col)

    dup = frame.duplicated(["country", "year"])
    if dup.any():
        # reported before dropping so a repeated key is never masked by a blank outcome
        build_dataset(frame, schema.features, schema.extra_outcomes)

    missing_outcome = frame["outcome"].isna()
    dropped = int(missing_outcome.sum())
    if dropped:
        log.info(f"dropped {dropped} rows with missing outcome")
    frame = frame.loc[~missing_outcome]

    ds = build_dataset(frame, schema.features, schema.extra_outcomes, dropped_missing_outcome=dropped)
    log.info(f"loaded {len(ds)} rows, {len(ds.countries)} countries, years {ds.year_range[0]}-{ds.year_range[1]}")
    return compute_event_time(ds)


def export_panel(dataset: PanelDataset) -> bytes:
    """Serialize in the ingestion schema; floats use shortest round-trip repr."""
    cols: List[str] = [*BASE_COLUMNS, *dataset.feature_names, *dataset.extra_outcome_names]
    try:
        text = dataset.frame[cols].to_csv(index=False, lineterminator="\n", na_rep="")
    except (ValueError, TypeError) as e:
        raise IoFailure(f"cannot serialize panel: {e}") from e
    return text.encode("utf-8")
