"""
Canonical country-year panel.

A PanelDataset wraps one pandas frame sorted by (country, year) with columns

    country, year, outcome, adoption_year, treated, event_time, <features>, <extra outcomes>

adoption_year and event_time are nullable Int64: never-treated rows carry pd.NA,
never a numeric placeholder. Datasets are immutable once built; every transform
returns a new validated dataset.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cffe.errors import AdoptionOutOfRange, DuplicateKey, EmptyGroup, SchemaMismatch, YearOutOfRange

log = logging.getLogger(__name__)

BASE_COLUMNS = ("country", "year", "outcome", "adoption_year")


@dataclass(frozen=True)
class EventTime:
    value: Optional[int] = None

    @property
    def defined(self):
        return self.value is not None


@dataclass(frozen=True)
class Observation:
    country_id: str
    year: int
    outcome: float
    treated: bool
    adoption_year: Optional[int]
    features: Tuple[float, ...]
    extra_outcomes: Dict[str, Optional[float]]
    event_time: EventTime


@dataclass(frozen=True, eq=False)
class PanelDataset:
    frame: pd.DataFrame
    feature_names: Tuple[str, ...]
    extra_outcome_names: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = ()
    dropped_missing_outcome: int = 0

    def __len__(self):
        return len(self.frame)

    @cached_property
    def country_index(self) -> Dict[str, np.ndarray]:
        return {c: np.asarray(ix) for c, ix in self.frame.groupby("country", sort=True).indices.items()}

    @property
    def year_range(self) -> Tuple[int, int]:
        years = self.frame["year"]
        return int(years.min()), int(years.max())

    @cached_property
    def countries(self) -> Tuple[str, ...]:
        return tuple(sorted(self.country_index))

    @cached_property
    def adoption_by_country(self) -> Dict[str, Optional[int]]:
        first = self.frame.groupby("country", sort=True)["adoption_year"].first()
        return {c: (None if pd.isna(v) else int(v)) for c, v in first.items()}

    @property
    def treated_countries(self) -> Tuple[str, ...]:
        return tuple(c for c, a in self.adoption_by_country.items() if a is not None)

    @property
    def control_countries(self) -> Tuple[str, ...]:
        return tuple(c for c, a in self.adoption_by_country.items() if a is None)

    # --- numpy views used by the estimators ---
    @cached_property
    def y(self) -> np.ndarray:
        return self.frame["outcome"].to_numpy(dtype=float)

    @cached_property
    def d(self) -> np.ndarray:
        return self.frame["treated"].to_numpy(dtype=float)

    @cached_property
    def k(self) -> np.ndarray:
        """Event time as float with NaN for never-treated rows."""
        return self.frame["event_time"].astype("Float64").to_numpy(dtype=float, na_value=np.nan)

    @cached_property
    def x(self) -> np.ndarray:
        if not self.feature_names:
            return np.zeros((len(self.frame), 0))
        return self.frame[list(self.feature_names)].to_numpy(dtype=float)

    @cached_property
    def country_codes(self) -> np.ndarray:
        return pd.Categorical(self.frame["country"], categories=self.countries).codes.astype(np.intp)

    @cached_property
    def year_codes(self) -> np.ndarray:
        years = np.sort(self.frame["year"].unique())
        return np.searchsorted(years, self.frame["year"].to_numpy()).astype(np.intp)

    @cached_property
    def ever_treated(self) -> np.ndarray:
        return self.frame["adoption_year"].notna().to_numpy()

    def country_features(self) -> pd.DataFrame:
        """One row per country (features are constant within a country)."""
        cols = ["adoption_year", *self.feature_names]
        return self.frame.groupby("country", sort=True)[cols].first()

    def observations(self) -> Iterator[Observation]:
        feats = list(self.feature_names)
        extras = list(self.extra_outcome_names)
        for r in self.frame.itertuples(index=False):
            row = r._asdict()
            adopt = row["adoption_year"]
            k = row["event_time"]
            yield Observation(
                country_id=row["country"],
                year=int(row["year"]),
                outcome=float(row["outcome"]),
                treated=bool(row["treated"]),
                adoption_year=None if pd.isna(adopt) else int(adopt),
                features=tuple(float(row[f]) for f in feats),
                extra_outcomes={e: (None if pd.isna(row[e]) else float(row[e])) for e in extras},
                event_time=EventTime(None if pd.isna(k) else int(k)),
            )

    def with_outcome(self, column: str) -> "PanelDataset":
        """Swap in an extra outcome column as the outcome; rows where it is missing are dropped."""
        if column == "outcome":
            return self
        if column not in self.extra_outcome_names:
            raise SchemaMismatch(f"unknown outcome column {column!r}")
        frame = self.frame.copy()
        missing = frame[column].isna()
        frame = frame.loc[~missing]
        frame["outcome"] = frame[column].astype(float)
        return build_dataset(
            frame,
            self.feature_names,
            self.extra_outcome_names,
            warnings=self.warnings,
            dropped_missing_outcome=self.dropped_missing_outcome + int(missing.sum()),
        )


def build_dataset(
    frame: pd.DataFrame,
    feature_names: Sequence[str],
    extra_outcome_names: Sequence[str] = (),
    warnings: Sequence[str] = (),
    dropped_missing_outcome: int = 0,
) -> PanelDataset:
    """Validate and normalize a raw frame into a PanelDataset."""
    feature_names = tuple(feature_names)
    extra_outcome_names = tuple(extra_outcome_names)
    needed = [*BASE_COLUMNS, *feature_names, *extra_outcome_names]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise SchemaMismatch(f"missing declared columns: {', '.join(missing)}", columns=missing)
    if frame.empty:
        raise EmptyGroup("panel has no rows")

    out = pd.DataFrame(
        {
            "country": frame["country"].astype(str).to_numpy(),
            "year": frame["year"].astype("int64").to_numpy(),
            "outcome": frame["outcome"].astype(float).to_numpy(),
            "adoption_year": pd.array(frame["adoption_year"], dtype="Int64"),
        }
    )
    for f in feature_names:
        out[f] = frame[f].astype(float).to_numpy()
    for e in extra_outcome_names:
        out[e] = frame[e].astype(float).to_numpy()

    dup = out.duplicated(["country", "year"], keep="first")
    if dup.any():
        r = out.loc[dup].iloc[0]
        raise DuplicateKey(r["country"], int(r["year"]))

    out = out.sort_values(["country", "year"], kind="mergesort").reset_index(drop=True)

    adopt_per_country = out.groupby("country")["adoption_year"].nunique(dropna=True)
    if (adopt_per_country > 1).any():
        bad = adopt_per_country[adopt_per_country > 1].index[0]
        raise SchemaMismatch(f"country {bad} has more than one adoption_year", country=bad)
    # a country's adoption year applies to all of its rows
    out["adoption_year"] = pd.array(
        out["country"].map(out.groupby("country")["adoption_year"].first()), dtype="Int64"
    )

    year_max = int(out["year"].max())
    late = out["adoption_year"].notna() & (out["adoption_year"] > year_max)
    if late.any():
        c = out.loc[late, "country"].iloc[0]
        raise AdoptionOutOfRange(f"{c} adopts after the last panel year {year_max}", country=c)

    warnings = list(warnings)
    if feature_names:
        grouped = out.groupby("country", sort=True)[list(feature_names)]
        nunique = grouped.nunique(dropna=True)
        for country, row in nunique.iterrows():
            for f in feature_names:
                if row[f] > 1:
                    msg = f"feature {f} varies within {country}; first non-missing value kept"
                    if msg not in warnings:
                        warnings.append(msg)
                        log.warning(msg)
        first = grouped.first()
        for f in feature_names:
            out[f] = out["country"].map(first[f]).astype(float)

    out["treated"] = (out["adoption_year"].notna() & (out["year"] >= out["adoption_year"])).fillna(False).astype(bool)
    out["event_time"] = _event_time_column(out)
    cols = ["country", "year", "outcome", "adoption_year", "treated", "event_time", *feature_names, *extra_outcome_names]
    return PanelDataset(
        frame=out[cols],
        feature_names=feature_names,
        extra_outcome_names=extra_outcome_names,
        warnings=tuple(warnings),
        dropped_missing_outcome=int(dropped_missing_outcome),
    )


def _event_time_column(frame: pd.DataFrame) -> pd.arrays.IntegerArray:
    return pd.array(frame["year"].astype("Int64") - frame["adoption_year"], dtype="Int64")


def compute_event_time(dataset: PanelDataset) -> PanelDataset:
    """k = year - adoption_year for treated-country rows, absent otherwise. Idempotent."""
    frame = dataset.frame.copy()
    frame["event_time"] = _event_time_column(frame)
    frame["treated"] = (frame["adoption_year"].notna() & (frame["year"] >= frame["adoption_year"])).fillna(False).astype(bool)
    return PanelDataset(
        frame=frame,
        feature_names=dataset.feature_names,
        extra_outcome_names=dataset.extra_outcome_names,
        warnings=dataset.warnings,
        dropped_missing_outcome=dataset.dropped_missing_outcome,
    )


# --- derived datasets ---

def restrict(
    dataset: PanelDataset,
    countries: Optional[Sequence[str]] = None,
    year_max: Optional[int] = None,
    exclude_years: Optional[Tuple[int, int]] = None,
    drop_countries: Sequence[str] = (),
) -> PanelDataset:
    frame = dataset.frame
    mask = pd.Series(True, index=frame.index)
    if countries is not None:
        mask &= frame["country"].isin(list(countries))
    if drop_countries:
        mask &= ~frame["country"].isin(list(drop_countries))
    if year_max is not None:
        mask &= frame["year"] <= year_max
    if exclude_years is not None:
        lo, hi = exclude_years
        mask &= ~frame["year"].between(lo, hi)
    sub = frame.loc[mask]
    if sub.empty:
        raise EmptyGroup("restriction leaves no rows")
    if year_max is not None:
        # cohorts adopting after the cut behave as never treated in the shortened panel
        sub = sub.copy()
        late = sub["adoption_year"].notna() & (sub["adoption_year"] > int(sub["year"].max()))
        sub.loc[late, "adoption_year"] = pd.NA
    return build_dataset(sub, dataset.feature_names, dataset.extra_outcome_names, warnings=dataset.warnings)


def redate(dataset: PanelDataset, adoption_map: Dict[str, Optional[int]]) -> PanelDataset:
    """Replace adoption years for the countries named in adoption_map (None = never treated)."""
    frame = dataset.frame.copy()
    for country, year in adoption_map.items():
        frame.loc[frame["country"] == country, "adoption_year"] = pd.NA if year is None else int(year)
    return build_dataset(frame, dataset.feature_names, dataset.extra_outcome_names, warnings=dataset.warnings)


# --- descriptive tables ---

@dataclass(frozen=True)
class SummaryTable:
    rows: list
    counts: Dict[str, Dict[str, int]] = field(default_factory=dict)


def _variables(dataset: PanelDataset):
    return ["outcome", *dataset.feature_names, *dataset.extra_outcome_names]


def summary_stats(dataset: PanelDataset) -> SummaryTable:
    """Mean and sample std per variable for ever-treated, control and full samples."""
    frame = dataset.frame
    if frame.empty:
        raise EmptyGroup("dataset is empty")
    ever = frame["adoption_year"].notna()
    groups = {"treated": frame.loc[ever], "control": frame.loc[~ever], "full": frame}
    for name in ("treated", "control"):
        if groups[name].empty:
            raise EmptyGroup(f"{name} group has zero rows", group=name)

    rows = []
    for var in _variables(dataset):
        row = {"variable": var}
        for name, g in groups.items():
            col = g[var].astype(float)
            row[f"{name}_mean"] = float(col.mean())
            row[f"{name}_std"] = float(col.std(ddof=1))
            row[f"{name}_n"] = int(col.notna().sum())
        rows.append(row)
    counts = {name: {"obs": int(len(g)), "countries": int(g["country"].nunique())} for name, g in groups.items()}
    return SummaryTable(rows=rows, counts=counts)


def balance_table(dataset: PanelDataset, left: Sequence[str], right: Sequence[str], as_of: int) -> list:
    """Cross-section at ``as_of``: per-variable group means, stds and left-minus-right difference."""
    if not left or not right:
        raise EmptyGroup("balance groups must be non-empty")
    lo, hi = dataset.year_range
    if not lo <= as_of <= hi:
        raise YearOutOfRange(f"as_of {as_of} outside panel years {lo}-{hi}", year=as_of)
    cross = dataset.frame.loc[dataset.frame["year"] == as_of]
    lg = cross.loc[cross["country"].isin(list(left))]
    rg = cross.loc[cross["country"].isin(list(right))]
    if lg.empty or rg.empty:
        raise EmptyGroup(f"no observations for one of the groups in {as_of}", year=as_of)

    rows = []
    for var in _variables(dataset):
        lc = lg[var].astype(float)
        rc = rg[var].astype(float)
        rows.append(
            {
                "variable": var,
                "left_mean": float(lc.mean()),
                "left_std": float(lc.std(ddof=1)),
                "right_mean": float(rc.mean()),
                "right_std": float(rc.std(ddof=1)),
                "diff": float(lc.mean() - rc.mean()),
                "left_n": int(lc.notna().sum()),
                "right_n": int(rc.notna().sum()),
            }
        )
    return rows
