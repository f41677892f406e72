"""
Synthetic staggered-adoption panels with a known CATE.

Outcome equation (one row per country-year, balanced):

    Y_it = alpha_i + gamma_t + tau(k_it, X_i) * D_it
           + pretrend_slope * k_it            (treated countries, k < 0)
           + anticipation_effect              (treated countries, -anticipation_years <= k < 0)
           + lambda_i' f_t                    (optional factor confounding)
           + eps_it

Draw order is fixed (alpha, gamma, X, factors, eps, extra outcomes) so that a
given seed reproduces bit-identical panels and the CATE never depends on noise.
"""

import logging
from dataclasses import dataclass, field
from typing import Annotated, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cffe.errors import InvalidSpec, IoFailure, NoObservationsAtK
from cffe.panel.panel_core import PanelDataset, build_dataset

log = logging.getLogger(__name__)

FOUNDERS = ("AUT", "BEL", "FIN", "FRA", "DEU", "IRL", "ITA", "LUX", "NLD", "PRT", "ESP")
LATE_ADOPTERS = {
    "GRC": 2001,
    "SVN": 2007,
    "CYP": 2008,
    "MLT": 2008,
    "SVK": 2009,
    "EST": 2011,
    "LVA": 2014,
    "LTU": 2015,
    "HRV": 2023,
}
EU_OPT_OUTS = ("DNK", "SWE", "GBR")
OTHER_OECD = (
    "AUS", "CAN", "CHE", "ISL", "ISR", "JPN", "KOR", "NOR", "NZL", "USA",
    "MEX", "TUR", "CHL", "CZE", "HUN", "POL", "COL", "CRI",
)

# Full euro-area calendar: founders in 1999 plus the later entrants
EURO_SCHEDULE = {**{c: 1999 for c in FOUNDERS}, **LATE_ADOPTERS}

DEFAULT_FEATURES = ("gdp_per_capita", "trade_openness", "investment_share", "human_capital")


# --- CATE kinds ---

class ConstantCate(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["constant"] = "constant"
    tau0: float = -0.35


class TwoGroupCate(BaseModel):
    """tau_low below the threshold on ``feature``, tau_high at or above it."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["two_group"] = "two_group"
    tau_low: float = -0.53
    tau_high: float = -0.31
    threshold: Optional[float] = None  # None: median over treated countries
    feature: int = Field(0, ge=0)


class RampCate(BaseModel):
    """Linear ramp-in over event times 0..ramp_years, flat at ``level`` afterwards."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["ramp"] = "ramp"
    level: float = -0.4
    ramp_years: int = Field(4, ge=0)


class LinearInXCate(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["linear_in_x"] = "linear_in_x"
    coefficients: Tuple[float, ...] = (-0.1,)
    intercept: float = -0.35


CateKind = Annotated[
    Union[ConstantCate, TwoGroupCate, RampCate, LinearInXCate],
    Field(discriminator="kind"),
]


class FactorConfounding(BaseModel):
    model_config = ConfigDict(frozen=True)
    n_factors: int = Field(1, ge=1)
    corr: float = Field(0.8, ge=-1.0, le=1.0)
    scale: float = Field(1.0, ge=0.0)


class DgpSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_treated: int = Field(11, ge=1)
    n_control: int = Field(24, ge=1)
    year_range: Tuple[int, int] = (1970, 2023)
    adoption_schedule: Optional[Dict[str, int]] = None
    default_adoption_year: int = 1999
    cate: CateKind = Field(default_factory=ConstantCate)
    sigma_alpha: float = Field(1.0, ge=0.0)
    sigma_gamma: float = Field(1.0, ge=0.0)
    sigma_eps: float = Field(2.0, ge=0.0)
    mean_growth: float = 3.0
    factor_confounding: Optional[FactorConfounding] = None
    pretrend_slope: float = 0.0
    anticipation_years: int = Field(0, ge=0)
    anticipation_effect: float = 0.0
    extra_outcomes: Dict[str, float] = Field(default_factory=dict)
    n_features: int = Field(4, ge=1)
    seed: int = 0

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise InvalidSpec(f"invalid DGP spec: {e}") from e

    @model_validator(mode="after")
    def _check(self):
        start, end = self.year_range
        if end <= start:
            raise ValueError(f"year_range must be increasing, got {self.year_range}")
        for c, g in self.schedule().items():
            if not start <= g <= end:
                raise ValueError(f"adoption year {g} for {c} outside year_range {self.year_range}")
        if isinstance(self.cate, TwoGroupCate) and self.cate.feature >= self.n_features:
            raise ValueError("two_group feature index beyond n_features")
        if isinstance(self.cate, LinearInXCate) and len(self.cate.coefficients) > self.n_features:
            raise ValueError("linear_in_x has more coefficients than features")
        if self.adoption_schedule:
            unknown = set(self.adoption_schedule) - set(self.treated_codes())
            if unknown:
                raise ValueError(f"adoption_schedule names non-treated countries: {sorted(unknown)}")
        return self

    def treated_codes(self) -> List[str]:
        pool = list(FOUNDERS) + list(LATE_ADOPTERS)
        return [pool[i] if i < len(pool) else f"T{i:03d}" for i in range(self.n_treated)]

    def control_codes(self) -> List[str]:
        pool = list(EU_OPT_OUTS) + list(OTHER_OECD)
        return [pool[i] if i < len(pool) else f"C{i:03d}" for i in range(self.n_control)]

    def feature_names(self) -> Tuple[str, ...]:
        return tuple(DEFAULT_FEATURES[j] if j < len(DEFAULT_FEATURES) else f"x{j + 1}" for j in range(self.n_features))

    def schedule(self) -> Dict[str, int]:
        given = self.adoption_schedule or {}
        return {c: int(given.get(c, self.default_adoption_year)) for c in self.treated_codes()}

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "DgpSpec":
        """Build from flat string key=value pairs, raising InvalidSpec on any problem."""
        v = {str(k).lower(): val for k, val in values.items() if val not in (None, "")}
        try:
            kw: Dict[str, object] = {}
            for key in ("n_treated", "n_control", "default_adoption_year", "n_features", "anticipation_years", "seed"):
                if key in v:
                    kw[key] = int(v.pop(key))
            for key in ("sigma_alpha", "sigma_gamma", "sigma_eps", "mean_growth", "pretrend_slope", "anticipation_effect"):
                if key in v:
                    kw[key] = float(v.pop(key))
            if "year_start" in v or "year_end" in v:
                kw["year_range"] = (int(v.pop("year_start", 1970)), int(v.pop("year_end", 2023)))
            if "adoption_schedule" in v:
                kw["adoption_schedule"] = _parse_pairs(v.pop("adoption_schedule"), int)
            if "extra_outcomes" in v:
                kw["extra_outcomes"] = _parse_pairs(v.pop("extra_outcomes"), float)
            if "factor_n" in v or "factor_corr" in v:
                kw["factor_confounding"] = FactorConfounding(
                    n_factors=int(v.pop("factor_n", 1)),
                    corr=float(v.pop("factor_corr", 0.8)),
                    scale=float(v.pop("factor_scale", 1.0)),
                )
            kind = str(v.pop("cate_kind", "constant"))
            cate: Dict[str, object] = {"kind": kind}
            for key in ("tau0", "tau_low", "tau_high", "threshold", "level", "intercept"):
                if key in v:
                    cate[key] = float(v.pop(key))
            for key in ("ramp_years", "feature"):
                if key in v:
                    cate[key] = int(v.pop(key))
            if "coefficients" in v:
                cate["coefficients"] = tuple(float(t) for t in str(v.pop("coefficients")).split(","))
            kw["cate"] = cate
            if v:
                raise ValueError(f"unknown keys: {', '.join(sorted(v))}")
            return cls(**kw)
        except (ValidationError, ValueError, TypeError) as e:
            raise InvalidSpec(f"invalid DGP spec: {e}") from e

    @classmethod
    def from_config_file(cls, path) -> "DgpSpec":
        try:
            values = dotenv_values(path)
        except OSError as e:
            raise IoFailure(f"cannot read {path}: {e}") from e
        return cls.from_mapping(values)


def _parse_pairs(raw, cast):
    out = {}
    for item in str(raw).split(","):
        item = item.strip()
        if not item:
            continue
        key, _, val = item.partition(":")
        out[key.strip()] = cast(val.strip())
    return out


@dataclass(frozen=True)
class DgpGroundTruth:
    cate: Callable[[int, np.ndarray], float]
    cate_description: Dict[str, object]
    alpha: Dict[str, float]
    gamma: Dict[int, float]
    true_att_by_k: Dict[int, float]
    features: Dict[str, Tuple[float, ...]] = field(default_factory=dict)

    def to_json(self) -> bytes:
        doc = {
            "cate": self.cate_description,
            "alpha": self.alpha,
            "gamma": {str(t): v for t, v in self.gamma.items()},
            "true_att_by_k": {str(k): v for k, v in sorted(self.true_att_by_k.items())},
            "features": {c: list(v) for c, v in self.features.items()},
        }
        return orjson.dumps(doc, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)


def make_cate(cate, x_treated: np.ndarray) -> Tuple[Callable[[int, np.ndarray], float], Dict[str, object]]:
    """Resolve a CATE kind into a closure (k, x) -> tau; data-dependent thresholds are fixed here."""
    if isinstance(cate, ConstantCate):
        tau0 = cate.tau0
        return (lambda k, x: tau0), cate.model_dump()
    if isinstance(cate, TwoGroupCate):
        j = cate.feature
        thr = float(np.median(x_treated[:, j])) if cate.threshold is None else float(cate.threshold)
        lo, hi = cate.tau_low, cate.tau_high
        desc = {**cate.model_dump(), "threshold": thr}
        return (lambda k, x: lo if x[j] < thr else hi), desc
    if isinstance(cate, RampCate):
        level, r = cate.level, cate.ramp_years
        return (lambda k, x: level * min(k + 1, r + 1) / (r + 1)), cate.model_dump()
    if isinstance(cate, LinearInXCate):
        coef = np.asarray(cate.coefficients, dtype=float)
        b0 = cate.intercept
        return (lambda k, x: b0 + float(np.dot(np.asarray(x)[: len(coef)], coef))), cate.model_dump()
    raise InvalidSpec(f"unknown cate kind {cate!r}")


def generate_panel(spec: DgpSpec) -> Tuple[PanelDataset, DgpGroundTruth]:
    rng = np.random.default_rng(spec.seed)
    treated = spec.treated_codes()
    controls = spec.control_codes()
    countries = treated + controls
    n_c = len(countries)
    start, end = spec.year_range
    years = np.arange(start, end + 1)
    n_t = len(years)
    schedule = spec.schedule()

    alpha = spec.mean_growth + spec.sigma_alpha * rng.standard_normal(n_c)
    gamma = spec.sigma_gamma * rng.standard_normal(n_t)

    raw_x = rng.standard_normal((n_c, spec.n_features))
    sd = raw_x.std(axis=0)
    x = (raw_x - raw_x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)

    ci = np.repeat(np.arange(n_c), n_t)
    ti = np.tile(np.arange(n_t), n_c)
    year = years[ti]
    adopt = np.array([schedule.get(c, -1) for c in countries])[ci]
    ever = adopt >= 0
    k = np.where(ever, year - adopt, 0)
    d = ever & (k >= 0)

    factor = np.zeros(n_c * n_t)
    if spec.factor_confounding is not None:
        fc = spec.factor_confounding
        r = fc.n_factors
        f = rng.standard_normal((n_t, r))
        trend = (years - years.mean()) / years.std()
        f[:, 0] = trend + 0.25 * f[:, 0]
        status = np.r_[np.ones(len(treated)), np.zeros(len(controls))]
        status = (status - status.mean()) / status.std()
        lam = rng.standard_normal((n_c, r))
        lam[:, 0] = fc.corr * status + np.sqrt(1.0 - fc.corr ** 2) * lam[:, 0]
        factor = fc.scale * np.einsum("ir,ir->i", lam[ci], f[ti])

    eps = spec.sigma_eps * rng.standard_normal(n_c * n_t)

    cate_fn, cate_desc = make_cate(spec.cate, x[: len(treated)])
    tau = np.zeros(n_c * n_t)
    rows_d = np.flatnonzero(d)
    for i in rows_d:
        tau[i] = cate_fn(int(k[i]), x[ci[i]])

    pre = ever & (k < 0)
    pretrend = np.where(pre, spec.pretrend_slope * k, 0.0)
    antic = np.where(pre & (k >= -spec.anticipation_years), spec.anticipation_effect, 0.0)

    outcome = alpha[ci] + gamma[ti] + tau + pretrend + antic + factor + eps

    feature_names = spec.feature_names()
    frame = pd.DataFrame(
        {
            "country": np.asarray(countries)[ci],
            "year": year.astype("int64"),
            "outcome": outcome,
            "adoption_year": pd.array(np.where(ever, adopt, 0), dtype="Int64"),
        }
    )
    frame.loc[~ever, "adoption_year"] = pd.NA
    for j, name in enumerate(feature_names):
        frame[name] = x[ci, j]

    for name, mult in spec.extra_outcomes.items():
        a_e = spec.mean_growth + spec.sigma_alpha * rng.standard_normal(n_c)
        g_e = spec.sigma_gamma * rng.standard_normal(n_t)
        e_e = spec.sigma_eps * rng.standard_normal(n_c * n_t)
        frame[name] = a_e[ci] + g_e[ti] + mult * tau + e_e

    dataset = build_dataset(frame, feature_names, tuple(spec.extra_outcomes))

    att: Dict[int, list] = {}
    for i in rows_d:
        att.setdefault(int(k[i]), []).append(tau[i])
    truth = DgpGroundTruth(
        cate=cate_fn,
        cate_description=cate_desc,
        alpha={c: float(alpha[j]) for j, c in enumerate(countries)},
        gamma={int(t): float(gamma[j]) for j, t in enumerate(years)},
        true_att_by_k={kk: float(np.mean(v)) for kk, v in sorted(att.items())},
        features={c: tuple(float(v) for v in x[j]) for j, c in enumerate(countries)},
    )
    log.info(
        f"generated {len(dataset)} rows: {len(treated)} treated, {len(controls)} control, "
        f"cate={cate_desc['kind']}, seed={spec.seed}"
    )
    return dataset, truth


def true_att(ground_truth: DgpGroundTruth, k: int) -> float:
    if k not in ground_truth.true_att_by_k:
        raise NoObservationsAtK(f"no treated rows at event time {k}", k=k)
    return ground_truth.true_att_by_k[k]
