"""
Two-country New Keynesian model with output scarring, solved as a truncated
perfect-foresight linear system stacked over t = 0..H-1.

Each equation is a list of (variable, offset, coefficient) terms with offset
-1 (lag), 0 or +1 (lead) plus an optional exogenous driver. Lags before t = 0
are zero; leads past the horizon are zero except the float-regime exchange
rate, which is tied to the terminal real exchange rate q_H = 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from dotenv import dotenv_values
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.sparse.linalg import splu

from cffe import settings
from cffe.errors import (
    HorizonTooShort,
    InvalidCalibration,
    InvalidSpec,
    IoFailure,
    SingularSystem,
    WindowExceedsHorizon,
)

log = logging.getLogger(__name__)

UNION = "union"
FLOAT = "float"
REGIMES = (UNION, FLOAT)
COUNTRIES = ("H", "F")
MIN_HORIZON = 100
TERMINAL_TOL = 1e-6
PIVOT_TOL = 1e-14
REFERENCE_LOSS_RATIO = 1.4
SHOCK_VARIABLES = ("g_H", "g_F", "u_H", "u_F", "zrn_H", "zrn_F", "eps_a_H", "eps_a_F")

Term = Tuple[str, int, float]


class DsgeCalibration(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: float = 0.99
    sigma: float = 1.0
    kappa: float = 0.10
    rho_i: float = 0.80
    phi_pi: float = 1.50
    phi_x: float = 0.20
    rho_a: float = 0.95
    chi: float = 0.03
    psi_a: float = 1.0
    omega: float = 0.60
    rho_rn: float = 0.80
    rho_u: float = 0.50
    nu: float = 0.15
    # persistence of the demand wedge g_j in the IS curves
    rho_g: float = 0.80

    def check(self) -> None:
        problems = []
        if not 0.0 < self.beta < 1.0:
            problems.append(f"beta={self.beta} must lie in (0, 1)")
        if self.phi_pi <= 1.0:
            problems.append(f"phi_pi={self.phi_pi} violates the Taylor principle")
        for name in ("rho_i", "rho_a", "rho_rn", "rho_u", "rho_g"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                problems.append(f"{name}={v} must lie in [0, 1)")
        if self.chi < 0:
            problems.append(f"chi={self.chi} must be >= 0")
        if self.sigma <= 0:
            problems.append(f"sigma={self.sigma} must be > 0")
        if not 0.0 <= self.omega <= 1.0:
            problems.append(f"omega={self.omega} must lie in [0, 1]")
        if problems:
            raise InvalidCalibration("; ".join(problems))

    def persistence(self, variable: str) -> float:
        kind = variable.rsplit("_", 1)[0]
        return {"g": self.rho_g, "u": self.rho_u, "zrn": self.rho_rn, "eps_a": 0.0}[kind]

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "DsgeCalibration":
        v = {str(k).lower(): val for k, val in values.items() if val not in (None, "")}
        unknown = set(v) - set(cls.model_fields)
        if unknown:
            raise InvalidCalibration(f"unknown calibration keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**{k: float(val) for k, val in v.items()})
        except (ValidationError, ValueError, TypeError) as e:
            raise InvalidCalibration(f"invalid calibration: {e}") from e

    @classmethod
    def from_config_file(cls, path) -> "DsgeCalibration":
        try:
            values = dotenv_values(path)
        except OSError as e:
            raise IoFailure(f"cannot read {path}: {e}") from e
        return cls.from_mapping(values)


class ShockSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    variable: str = "g_F"
    size: float = -0.01
    persistence: Optional[float] = None  # None: the calibrated persistence of the driver


@dataclass(frozen=True)
class Equation:
    name: str
    terms: Tuple[Term, ...]
    shock: Optional[str] = None


@dataclass(frozen=True)
class LinearSystem:
    regime: str
    calibration: DsgeCalibration
    variables: Tuple[str, ...]
    equations: Tuple[Equation, ...]
    terminal: Dict[str, Tuple[Tuple[str, float], ...]] = field(default_factory=dict)

    def index(self, variable: str) -> int:
        return self.variables.index(variable)


@dataclass
class IrfResult:
    horizon: int
    paths: Dict[str, np.ndarray]
    regime: str
    shocks: Tuple[ShockSpec, ...]
    residual_norm: float
    exogenous: Dict[str, np.ndarray] = field(default_factory=dict)


# --- system ---

def _country_block(cal: DsgeCalibration, j: str, regime: str) -> List[Equation]:
    s = 1.0 if j == "H" else -1.0
    x, pi, a, rn, p = f"x_{j}", f"pi_{j}", f"a_{j}", f"rn_{j}", f"p_{j}"
    rate = "i" if regime == UNION else f"i_{j}"
    inv_sigma = 1.0 / cal.sigma
    return [
        Equation(
            f"is_{j}",
            ((x, 0, 1.0), (x, 1, -1.0), (rate, 0, inv_sigma), (pi, 1, -inv_sigma), (rn, 0, -inv_sigma), ("q", 0, -s * cal.nu)),
            f"g_{j}",
        ),
        Equation(f"nkpc_{j}", ((pi, 0, 1.0), (pi, 1, -cal.beta), (x, 0, -cal.kappa)), f"u_{j}"),
        Equation(f"scar_{j}", ((a, 0, 1.0), (a, -1, -cal.rho_a), (x, -1, -cal.chi)), f"eps_a_{j}"),
        Equation(f"rn_{j}", ((rn, 0, 1.0), (a, 0, -cal.psi_a)), f"zrn_{j}"),
        Equation(f"price_{j}", ((p, 0, 1.0), (p, -1, -1.0), (pi, 0, -1.0))),
    ]


def _taylor(cal: DsgeCalibration, rate: str, weights: Dict[str, float]) -> Equation:
    gap = 1.0 - cal.rho_i
    terms: List[Term] = [(rate, 0, 1.0), (rate, -1, -cal.rho_i)]
    for j, w in weights.items():
        terms.append((f"pi_{j}", 0, -gap * cal.phi_pi * w))
        terms.append((f"x_{j}", 0, -gap * cal.phi_x * w))
    return Equation(f"taylor_{rate}", tuple(terms))


def build_system(cal: DsgeCalibration, regime: str) -> LinearSystem:
    cal.check()
    if regime not in REGIMES:
        raise InvalidSpec(f"unknown regime {regime!r}; expected union or float")
    core = [f"{v}_{j}" for j in COUNTRIES for v in ("x", "pi", "a", "rn", "p")]
    equations = [eq for j in COUNTRIES for eq in _country_block(cal, j, regime)]
    if regime == UNION:
        variables = (*core, "i", "q")
        equations.append(_taylor(cal, "i", {"H": cal.omega, "F": 1.0 - cal.omega}))
        equations.append(Equation("rer", (("q", 0, 1.0), ("p_F", 0, -1.0), ("p_H", 0, 1.0))))
        terminal = {}
    else:
        variables = (*core, "i_H", "i_F", "e", "q")
        equations.append(_taylor(cal, "i_H", {"H": 1.0}))
        equations.append(_taylor(cal, "i_F", {"F": 1.0}))
        equations.append(Equation("uip", (("i_H", 0, 1.0), ("i_F", 0, -1.0), ("e", 1, -1.0), ("e", 0, 1.0))))
        equations.append(Equation("rer", (("q", 0, 1.0), ("e", 0, -1.0), ("p_F", 0, -1.0), ("p_H", 0, 1.0))))
        # q_H = 0 and pi_H = 0 give e_H = p_H - p_F at the last solved period
        terminal = {"e": (("p_H", 1.0), ("p_F", -1.0))}
    return LinearSystem(regime, cal, variables, tuple(equations), terminal)


def exogenous_paths(cal: DsgeCalibration, shocks: Sequence[ShockSpec], horizon: int) -> Dict[str, np.ndarray]:
    paths = {v: np.zeros(horizon) for v in SHOCK_VARIABLES}
    t = np.arange(horizon)
    for s in shocks:
        if s.variable not in SHOCK_VARIABLES:
            raise InvalidSpec(f"unknown shock variable {s.variable!r}; expected one of {', '.join(SHOCK_VARIABLES)}")
        rho = cal.persistence(s.variable) if s.persistence is None else s.persistence
        paths[s.variable] = paths[s.variable] + s.size * np.power(rho, t)
    return paths


def _assemble(system: LinearSystem, exog: Dict[str, np.ndarray], horizon: int):
    n_var = len(system.variables)
    n_eq = len(system.equations)
    rows, cols, vals = [], [], []
    b = np.zeros(n_eq * horizon)
    pos = {v: i for i, v in enumerate(system.variables)}
    for t in range(horizon):
        for e_idx, eq in enumerate(system.equations):
            r = t * n_eq + e_idx
            for var, off, coef in eq.terms:
                tt = t + off
                if tt < 0:
                    continue
                if tt >= horizon:
                    for v2, c2 in system.terminal.get(var, ()):
                        rows.append(r)
                        cols.append((horizon - 1) * n_var + pos[v2])
                        vals.append(coef * c2)
                    continue
                rows.append(r)
                cols.append(tt * n_var + pos[var])
                vals.append(coef)
            if eq.shock is not None:
                b[r] = exog[eq.shock][t]
    size = n_var * horizon
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_eq * horizon, size)).tocsc(), b


def _solve(system: LinearSystem, exog: Dict[str, np.ndarray], horizon: int) -> Dict[str, np.ndarray]:
    a, b = _assemble(system, exog, horizon)
    try:
        lu = splu(a)
    except RuntimeError as e:
        raise SingularSystem(f"stacked system is singular: {e}", pivot=0.0) from e
    diag = np.abs(lu.U.diagonal())
    pivot = float(diag.min())
    if pivot < PIVOT_TOL * float(diag.max()):
        raise SingularSystem(f"near-zero pivot {pivot:.3e} in the stacked system", pivot=pivot)
    sol = lu.solve(b).reshape(horizon, len(system.variables))
    return {v: sol[:, i].copy() for i, v in enumerate(system.variables)}


def _shifted(system: LinearSystem, paths: Dict[str, np.ndarray], var: str, off: int) -> np.ndarray:
    arr = paths[var]
    if off == 0:
        return arr
    if off < 0:
        return np.r_[0.0, arr[:-1]]
    tail = sum(c * paths[v][-1] for v, c in system.terminal.get(var, ()))
    return np.r_[arr[1:], tail]


def equation_residuals(system: LinearSystem, paths: Dict[str, np.ndarray], exog: Dict[str, np.ndarray]) -> np.ndarray:
    """(n_equations, H) residuals of the model equations at the given paths."""
    out = []
    for eq in system.equations:
        r = -exog[eq.shock] if eq.shock is not None else np.zeros_like(paths[system.variables[0]])
        for var, off, coef in eq.terms:
            r = r + coef * _shifted(system, paths, var, off)
        out.append(r)
    return np.vstack(out)


def _as_shocks(shock: Union[ShockSpec, Sequence[ShockSpec], None]) -> Tuple[ShockSpec, ...]:
    if shock is None:
        return (ShockSpec(),)
    if isinstance(shock, ShockSpec):
        return (shock,)
    return tuple(shock)


def solve_irf(
    system: LinearSystem,
    shock: Union[ShockSpec, Sequence[ShockSpec], None] = None,
    horizon: int = settings.DSGE_HORIZON,
    check_terminal: bool = True,
) -> IrfResult:
    if horizon < MIN_HORIZON:
        raise HorizonTooShort(f"horizon {horizon} below the minimum {MIN_HORIZON}", horizon=horizon)
    shocks = _as_shocks(shock)
    cal = system.calibration
    exog = exogenous_paths(cal, shocks, horizon)
    paths = _solve(system, exog, horizon)

    if check_terminal:
        long = _solve(system, exogenous_paths(cal, shocks, 2 * horizon), 2 * horizon)
        half = horizon // 2
        gap = max(float(np.max(np.abs(paths[v][:half] - long[v][:half]))) for v in system.variables)
        if gap > TERMINAL_TOL:
            raise HorizonTooShort(f"paths move by {gap:.2e} when the horizon doubles from {horizon}", gap=gap)

    residual = float(np.max(np.abs(equation_residuals(system, paths, exog))))
    if system.regime == UNION:
        paths["i_H"] = paths["i"].copy()
        paths["i_F"] = paths["i"].copy()
        paths["e"] = np.zeros(horizon)
    log.info(f"{system.regime} IRF: H={horizon}, shocks={[s.variable for s in shocks]}, residual={residual:.2e}")
    return IrfResult(horizon, paths, system.regime, shocks, residual, exog)


# --- experiments ---

def cumulative_loss(irf: IrfResult, country: str, window: int = 20) -> float:
    if country not in COUNTRIES:
        raise InvalidSpec(f"country must be H or F, got {country!r}")
    if window > irf.horizon:
        raise WindowExceedsHorizon(f"window {window} exceeds horizon {irf.horizon}")
    return float(np.sum(irf.paths[f"x_{country}"][:window]))


def persistence_quarters(path: np.ndarray, share: float = 0.10) -> int:
    """First quarter after the peak at which |path| falls below share * |peak|."""
    mag = np.abs(path)
    peak = int(np.argmax(mag))
    if mag[peak] == 0:
        return 0
    below = np.flatnonzero(mag[peak:] < share * mag[peak])
    return int(peak + below[0]) if below.size else len(path)


def _peak(path: np.ndarray) -> float:
    return float(path[int(np.argmax(np.abs(path)))])


@dataclass
class RegimeComparison:
    union: IrfResult
    float_: IrfResult
    loss_union: float
    loss_float: float
    ratio: float
    reference_ratio: float = REFERENCE_LOSS_RATIO
    country: str = "F"
    window: int = 20
    peaks: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def to_rows(self) -> List[dict]:
        rows = [
            {"metric": f"cumulative_loss_{self.country}", "union": self.loss_union, "float": self.loss_float},
            {"metric": "loss_ratio", "union": self.ratio, "float": None},
            {"metric": "reference_ratio", "union": self.reference_ratio, "float": None},
        ]
        rows.extend({"metric": f"peak_{v}", "union": u, "float": f} for v, (u, f) in sorted(self.peaks.items()))
        return rows


def compare_regimes(
    cal: DsgeCalibration,
    shock: Union[ShockSpec, Sequence[ShockSpec], None] = None,
    horizon: int = settings.DSGE_HORIZON,
    country: str = "F",
    window: int = 20,
) -> RegimeComparison:
    union = solve_irf(build_system(cal, UNION), shock, horizon)
    flt = solve_irf(build_system(cal, FLOAT), shock, horizon)
    lu = cumulative_loss(union, country, window)
    lf = cumulative_loss(flt, country, window)
    ratio = lu / lf if lf != 0 else float("inf")
    peaks = {v: (_peak(union.paths[v]), _peak(flt.paths[v])) for v in flt.paths}
    log.info(f"union/float cumulative {country} loss over {window}q: {lu:.5f} / {lf:.5f} = {ratio:.3f} (reference {REFERENCE_LOSS_RATIO})")
    return RegimeComparison(union, flt, lu, lf, ratio, country=country, window=window, peaks=peaks)


@dataclass(frozen=True)
class ScarringRun:
    chi: float
    irf: IrfResult
    persistence: int
    cumulative_loss: float


def _scarring_run(cal, chi, shock, regime, horizon, window):
    irf = solve_irf(build_system(cal.model_copy(update={"chi": chi}), regime), shock, horizon)
    return ScarringRun(chi, irf, persistence_quarters(irf.paths["x_F"]), cumulative_loss(irf, "F", window))


def scarring_sensitivity(
    cal: DsgeCalibration,
    chi_values: Sequence[float] = (0.01, 0.03, 0.06),
    shock: Union[ShockSpec, Sequence[ShockSpec], None] = None,
    regime: str = UNION,
    horizon: int = settings.DSGE_HORIZON,
    window: int = 20,
    n_jobs: int = 1,
) -> List[ScarringRun]:
    bad = [c for c in chi_values if c < 0]
    if bad:
        raise InvalidCalibration(f"chi must be >= 0, got {bad}")
    runs = Parallel(n_jobs=n_jobs)(delayed(_scarring_run)(cal, c, shock, regime, horizon, window) for c in chi_values)
    for r in runs:
        log.info(f"chi={r.chi}: persistence={r.persistence}q, loss={r.cumulative_loss:.5f}")
    return list(runs)


def irf_rows(irf: IrfResult) -> List[dict]:
    """Long format: regime, variable, quarter, value."""
    return [
        {"regime": irf.regime, "variable": v, "quarter": t, "value": float(val)}
        for v in sorted(irf.paths)
        for t, val in enumerate(irf.paths[v])
    ]
