"""
Command-line entry point.

    python3 -m cffe.cffe_cli <command> [flags]

Commands: simulate, estimate, bootstrap, placebo, loo, pretrends, dsge-irf,
dsge-compare, summary, robustness, compare, report. Failures print one line
``error=<Code> message="..."`` on stderr and exit with status 2.
"""

import argparse
import logging
import sys
import zlib
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from cffe import settings
from cffe.analysis import effects_aggregation as agg
from cffe.analysis import inference_suite as inf
from cffe.analysis import robustness as rob
from cffe.dsge import dsge_lab as dsge
from cffe.errors import CffeError, EmptyGroup, InvalidSpec, NoSplits
from cffe.estimators import classic_estimators as ce
from cffe.estimators.cffe_forest import ForestConfig, feature_importance, fit_forest
from cffe.panel.panel_core import PanelDataset, balance_table, restrict, summary_stats
from cffe.panel.panel_csv import PanelSchema, export_panel, load_panel
from cffe.panel.synth_dgp import EU_OPT_OUTS, DgpSpec, generate_panel
from cffe.reporting import Bundle, fmt_pct, fmt_pp, print_table

log = logging.getLogger(__name__)

INTERNAL_ERROR = "Internal"

# fields that change how a run executes, not what it produces
RUNTIME_ONLY = frozenset({"n_jobs", "out_dir"})

COMMANDS = (
    "simulate",
    "estimate",
    "bootstrap",
    "placebo",
    "loo",
    "pretrends",
    "dsge-irf",
    "dsge-compare",
    "summary",
    "robustness",
    "compare",
    "report",
)


def sub_seed(seed: int, task: str) -> int:
    """Deterministic per-task seed derived from the global seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(task.encode("utf-8"))]).generate_state(1)[0])


def _csv_list(raw: Optional[str]) -> Tuple[str, ...]:
    return tuple(t.strip() for t in (raw or "").split(",") if t.strip())


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    seed: int = settings.SEED
    out_dir: str = settings.OUT_DIR
    input: Optional[str] = None
    schema_file: Optional[str] = None
    features: Tuple[str, ...] = ()
    config_file: Optional[str] = None
    trees: int = settings.TREES
    min_leaf: int = settings.MIN_LEAF
    max_depth: int = settings.MAX_DEPTH
    k_min: int = settings.K_MIN
    k_max: int = settings.K_MAX
    bootstrap_reps: int = settings.BOOTSTRAP_REPS
    estimator: str = "cffe"
    outcome: str = "outcome"
    controls: str = "all"
    fake_year: Optional[int] = None
    drop_countries: Tuple[str, ...] = ()
    regime: str = dsge.UNION
    chi: Tuple[float, ...] = ()
    horizon: int = settings.DSGE_HORIZON
    shock: str = "g_F"
    shock_size: float = -0.01
    k: int = 10
    left: Tuple[str, ...] = ()
    right: Tuple[str, ...] = ()
    as_of: Optional[int] = None
    n_jobs: int = settings.N_JOBS

    @field_validator("n_jobs")
    @classmethod
    def _workers(cls, v: int) -> int:
        if v == 0 or v < -1:
            raise ValueError(f"n_jobs must be >= 1 or -1 (all cores), got {v}")
        return v

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        try:
            return cls(
                command=args.command,
                seed=args.seed,
                out_dir=args.out_dir,
                input=args.input,
                schema_file=args.schema,
                features=_csv_list(args.features),
                config_file=args.config,
                trees=args.trees,
                min_leaf=args.min_leaf,
                max_depth=args.max_depth,
                k_min=args.k_min,
                k_max=args.k_max,
                bootstrap_reps=args.bootstrap_reps,
                estimator=args.estimator,
                outcome=args.outcome,
                controls=args.controls,
                fake_year=args.fake_year,
                drop_countries=tuple(args.drop_country or ()),
                regime=args.regime,
                chi=tuple(args.chi or ()),
                horizon=args.horizon,
                shock=args.shock,
                shock_size=args.shock_size,
                k=args.k,
                left=_csv_list(args.left),
                right=_csv_list(args.right),
                as_of=args.as_of,
                n_jobs=args.n_jobs,
            )
        except ValidationError as e:
            raise InvalidSpec(f"invalid run configuration: {e.errors()[0]['msg']}") from e

    @property
    def k_range(self) -> Tuple[int, int]:
        return self.k_min, self.k_max

    def forest_config(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.trees,
            min_leaf=self.min_leaf,
            max_depth=self.max_depth,
            seed=sub_seed(self.seed, "forest"),
        )

    def calibration(self) -> dsge.DsgeCalibration:
        cal = dsge.DsgeCalibration.from_config_file(self.config_file) if self.config_file else dsge.DsgeCalibration()
        if len(self.chi) == 1:
            cal = cal.model_copy(update={"chi": self.chi[0]})
        return cal

    def shock_spec(self) -> dsge.ShockSpec:
        return dsge.ShockSpec(variable=self.shock, size=self.shock_size)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cffe", description="Causal forests with fixed effects: estimation, inference and DSGE experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", help="panel CSV (country, year, outcome, adoption_year, features...)")
    p.add_argument("--schema", help="key=value file with FEATURES= and EXTRA_OUTCOMES=")
    p.add_argument("--features", help="comma-separated feature columns (overrides --schema features)")
    p.add_argument("--config", help="key=value file: DGP spec for simulate, calibration for dsge-*")
    p.add_argument("--out-dir", default=settings.OUT_DIR)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--trees", type=int, default=settings.TREES)
    p.add_argument("--min-leaf", type=int, default=settings.MIN_LEAF)
    p.add_argument("--max-depth", type=int, default=settings.MAX_DEPTH)
    p.add_argument("--k-min", type=int, default=settings.K_MIN)
    p.add_argument("--k-max", type=int, default=settings.K_MAX)
    p.add_argument("--k", type=int, default=10, help="horizon for the estimator comparison")
    p.add_argument("--bootstrap-reps", type=int, default=settings.BOOTSTRAP_REPS)
    p.add_argument("--estimator", choices=inf.ESTIMATORS, default="cffe")
    p.add_argument("--outcome", default="outcome", help="outcome column (extra outcomes for mechanism runs)")
    p.add_argument("--controls", choices=("all", "eu-only"), default="all")
    p.add_argument("--fake-year", type=int)
    p.add_argument("--drop-country", action="append")
    p.add_argument("--regime", choices=dsge.REGIMES, default=dsge.UNION)
    p.add_argument("--chi", type=float, action="append", help="scarring intensity; repeat for a sweep")
    p.add_argument("--horizon", type=int, default=settings.DSGE_HORIZON)
    p.add_argument("--shock", choices=dsge.SHOCK_VARIABLES, default="g_F")
    p.add_argument("--shock-size", type=float, default=-0.01)
    p.add_argument("--left", help="comma-separated countries for the balance table")
    p.add_argument("--right", help="comma-separated countries for the balance table")
    p.add_argument("--as-of", type=int)
    p.add_argument("--n-jobs", type=int, default=settings.N_JOBS)
    return p


# --- data ---

def load_dataset(cfg: RunConfig, bundle: Optional[Bundle] = None) -> PanelDataset:
    if cfg.input:
        schema = PanelSchema.from_config_file(cfg.schema_file) if cfg.schema_file else PanelSchema()
        if cfg.features:
            schema = PanelSchema(features=cfg.features, extra_outcomes=schema.extra_outcomes)
        ds = load_panel(cfg.input, schema)
    else:
        seed = sub_seed(cfg.seed, "dgp")
        if bundle is not None:
            bundle.seeds["dgp"] = seed
        log.info(f"no --input given; using the baseline synthetic panel (seed {seed})")
        ds, _ = generate_panel(DgpSpec(seed=seed))
    if cfg.outcome != "outcome":
        ds = ds.with_outcome(cfg.outcome)
    if cfg.drop_countries:
        ds = restrict(ds, drop_countries=cfg.drop_countries)
    if cfg.controls == "eu-only":
        eu = [c for c in EU_OPT_OUTS if c in ds.control_countries]
        if not eu:
            raise EmptyGroup("no EU opt-out countries among the controls")
        ds = restrict(ds, countries=[*ds.treated_countries, *eu])
    return ds


def _horizons(curve: agg.AttCurve) -> List[int]:
    run = 0
    while run in curve.by_k:
        run += 1
    return [h for h in agg.CUMULATIVE_HORIZONS if h < run]


# --- commands ---

def cmd_simulate(cfg: RunConfig, bundle: Bundle) -> None:
    spec = DgpSpec.from_config_file(cfg.config_file) if cfg.config_file else DgpSpec(seed=sub_seed(cfg.seed, "dgp"))
    bundle.seeds["dgp"] = spec.seed
    ds, truth = generate_panel(spec)
    bundle.write_bytes("panel.csv", export_panel(ds))
    bundle.write_bytes("ground_truth.json", truth.to_json())
    bundle.write_bytes("schema.env", PanelSchema(features=ds.feature_names, extra_outcomes=ds.extra_outcome_names).to_config_text().encode())
    print("\n=== Simulated panel ===")
    print(f"Rows       : {len(ds)}")
    print(f"Treated    : {len(ds.treated_countries)}")
    print(f"Controls   : {len(ds.control_countries)}")
    print(f"Years      : {ds.year_range[0]}-{ds.year_range[1]}")
    print(f"CATE       : {truth.cate_description['kind']}")


def _estimate_cffe(cfg: RunConfig, ds: PanelDataset, bundle: Bundle):
    model = fit_forest(ds, cfg.forest_config(), n_jobs=cfg.n_jobs)
    bundle.seeds["forest"] = model.config.seed
    bundle.write_bytes("model.json", model.to_json())
    curve = agg.dynamic_att(model, ds, (max(0, cfg.k_min), cfg.k_max))
    bundle.write_csv("att_curve.csv", curve.to_rows())
    print_table("ATT curve (cffe)", curve.to_rows(), ("k", "att", "se", "ci_low", "ci_high", "n"))

    horizons = _horizons(curve)
    if horizons:
        cum = agg.cumulative_effects(curve, horizons)
        bundle.write_csv("cumulative.csv", cum.to_rows())
        print("\n=== Cumulative effects ===")
        for r in cum.to_rows():
            print(f"K={r['horizon']:>2} | simple {fmt_pp(r['simple_sum'])} pp | compounded {fmt_pct(r['compounded'])}")
    else:
        bundle.skip("cumulative.csv", "curve has no contiguous support from k=0 to 5")

    try:
        importance = feature_importance(model)
        bundle.write_csv("importance.csv", importance)
        print_table("Feature importance", importance, ("feature", "importance", "split_count"), {"feature": 16})
    except NoSplits as e:
        bundle.skip("importance.csv", str(e))
    return model, curve


def cmd_estimate(cfg: RunConfig, bundle: Bundle) -> None:
    ds = load_dataset(cfg, bundle)
    if cfg.estimator == "cffe":
        _estimate_cffe(cfg, ds, bundle)
        return
    if cfg.estimator == "ife":
        r = ce.interactive_fe(ds)
        row = {"estimator": "ife", "att": r.tau_hat, "se": r.std_error, "ci_low": r.ci_low, "ci_high": r.ci_high, "iterations": r.iterations, "converged": r.converged}
        bundle.write_csv("att_curve.csv", [row])
        print_table("Interactive fixed effects", [row], ("att", "se", "ci_low", "ci_high", "iterations"))
        return
    result = _event_study(cfg, ds)
    bundle.write_csv("att_curve.csv", result.to_rows())
    bundle.write_bytes(f"{cfg.estimator}_result.json", result.to_json())
    print_table(f"Event study ({cfg.estimator})", result.to_rows(), ("k", "estimate", "se", "ci_low", "ci_high", "n"))


def _event_study(cfg: RunConfig, ds: PanelDataset) -> ce.EventStudyResult:
    if cfg.estimator == "twfe":
        return ce.twfe_event_study(ds, cfg.k_range)
    if cfg.estimator == "sa":
        return ce.sun_abraham(ds, cfg.k_range)
    if cfg.estimator == "cs":
        return ce.callaway_santanna(
            ds, cfg.k_range, bootstrap_reps=cfg.bootstrap_reps, seed=sub_seed(cfg.seed, "cs"), n_jobs=cfg.n_jobs
        ).event_study
    raise InvalidSpec(f"{cfg.estimator} has no event-study form")


def cmd_bootstrap(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None, curve=None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    seed = sub_seed(cfg.seed, f"bootstrap-{cfg.estimator}")
    bundle.seeds["bootstrap"] = seed
    boot = inf.block_bootstrap(ds, cfg.estimator, cfg.bootstrap_reps, seed, cfg.n_jobs, cfg.forest_config(), cfg.k_range)
    bundle.write_csv("bootstrap.csv", boot.to_rows())
    print(f"\n[BOOT] {boot.n_replicates} replicates, {boot.n_failed} discarded")
    if cfg.estimator != "cffe":
        return
    if curve is None:
        model = fit_forest(ds, cfg.forest_config(), n_jobs=cfg.n_jobs)
        curve = agg.dynamic_att(model, ds, (max(0, cfg.k_min), cfg.k_max))
    rows = inf.compare_inference(curve, boot)
    bundle.write_csv("inference_compare.csv", rows)
    print_table("Forest vs bootstrap CI width", rows, ("k", "att", "forest_width", "boot_width", "ratio"))
    horizons = [h for h in _horizons(curve) if all(k in boot.keys for k in range(h + 1))]
    if horizons:
        bundle.write_csv("cumulative_bootstrap.csv", agg.cumulative_effects_bootstrap(curve, boot, horizons).to_rows())


def cmd_placebo(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    rows = []
    adoption_years = [a for a in ds.adoption_by_country.values() if a is not None]
    if not adoption_years:
        raise EmptyGroup("placebos need at least one treated country")
    first = min(adoption_years)
    fake = cfg.fake_year if cfg.fake_year is not None else first - 4
    est = cfg.estimator if cfg.estimator in ("cffe", "twfe", "sa", "ife") else "twfe"
    dates = inf.placebo_fake_dates(ds, fake, est, cfg.forest_config())
    rows.append(dates.to_row())
    assignment = {c: first for c in EU_OPT_OUTS if c in ds.control_countries}
    if assignment:
        nt = inf.placebo_nontreated(ds, assignment, cfg.forest_config(), cfg.n_jobs)
        rows.extend({"design": "nontreated", **r} for r in nt.to_rows())
    else:
        bundle.skip("placebo_nontreated", "no EU opt-out countries among the controls")
    bundle.write_csv("placebo.csv", rows)
    print_table("Placebos", rows, ("design", "country", "att", "se", "p_value"), {"design": 10})


def cmd_loo(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    est = cfg.estimator if cfg.estimator in ("cffe", "twfe", "sa", "ife") else "twfe"
    rows = inf.leave_one_out(ds, est, cfg.forest_config(), cfg.n_jobs)
    bundle.write_csv("loo.csv", rows)
    print_table(f"Leave-one-out ({est})", rows, ("dropped", "att", "se", "ci_low", "ci_high", "within_full_ci"))


def cmd_pretrends(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    rows = []
    estimators = ("twfe", "sa") if cfg.estimator in ("cffe", "ife") else (cfg.estimator,)
    for name in estimators:
        result = _event_study(cfg.model_copy(update={"estimator": name}), ds)
        t = inf.pretrends_test(result)
        rows.append({"estimator": name, **t.to_row()})
    bundle.write_csv("pretrends.csv", rows)
    print_table("Pre-trends joint test", rows, ("estimator", "f_stat", "p_value", "df_num", "df_den", "avg_pre_effect"), {"estimator": 10})


def cmd_dsge_irf(cfg: RunConfig, bundle: Bundle) -> None:
    cal = cfg.calibration()
    irf = dsge.solve_irf(dsge.build_system(cal, cfg.regime), cfg.shock_spec(), cfg.horizon)
    bundle.write_csv(f"irf_{cfg.regime}.csv", dsge.irf_rows(irf))
    print(f"\n=== IRF ({cfg.regime}, {cfg.shock} {cfg.shock_size:+}) ===")
    print(f"Residual norm     : {irf.residual_norm:.2e}")
    print(f"Cumulative loss H : {fmt_pp(dsge.cumulative_loss(irf, 'H'), 5)}")
    print(f"Cumulative loss F : {fmt_pp(dsge.cumulative_loss(irf, 'F'), 5)}")


def cmd_dsge_compare(cfg: RunConfig, bundle: Bundle) -> None:
    cal = cfg.calibration()
    comp = dsge.compare_regimes(cal, cfg.shock_spec(), cfg.horizon)
    bundle.write_csv("irf_union.csv", dsge.irf_rows(comp.union))
    bundle.write_csv("irf_float.csv", dsge.irf_rows(comp.float_))
    bundle.write_csv("dsge_compare.csv", comp.to_rows())
    chis = cfg.chi if len(cfg.chi) > 1 else (0.01, 0.03, 0.06)
    runs = dsge.scarring_sensitivity(cal, chis, cfg.shock_spec(), cfg.regime, cfg.horizon, n_jobs=cfg.n_jobs)
    rows = [{"chi": r.chi, "persistence_quarters": r.persistence, "cumulative_loss_F": r.cumulative_loss} for r in runs]
    bundle.write_csv("scarring.csv", rows)
    print("\n=== Union vs float ===")
    print(f"Loss F union : {fmt_pp(comp.loss_union, 5)}")
    print(f"Loss F float : {fmt_pp(comp.loss_float, 5)}")
    print(f"Ratio        : {comp.ratio:.3f} (reference {comp.reference_ratio})")
    print_table("Scarring sensitivity", rows, ("chi", "persistence_quarters", "cumulative_loss_F"), {"persistence_quarters": 20, "cumulative_loss_F": 18})


def cmd_summary(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    table = summary_stats(ds)
    bundle.write_csv("summary.csv", table.rows)
    print_table("Summary statistics", table.rows, ("variable", "treated_mean", "control_mean", "full_mean"), {"variable": 16, "treated_mean": 12, "control_mean": 12})
    for name, c in table.counts.items():
        print(f"{name:8} : {c['obs']} obs, {c['countries']} countries")
    if cfg.left and cfg.right and cfg.as_of is not None:
        rows = balance_table(ds, cfg.left, cfg.right, cfg.as_of)
        bundle.write_csv("balance.csv", rows)
        print_table(f"Balance {cfg.as_of}", rows, ("variable", "left_mean", "right_mean", "diff"), {"variable": 16})


def cmd_robustness(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    fc = cfg.forest_config()
    procedures: Dict[str, Callable[[], List[dict]]] = {
        "time_stability": lambda: rob.time_stability(ds, config=fc, n_jobs=cfg.n_jobs),
        "control_group": lambda: rob.control_group_sensitivity(ds, config=fc, n_jobs=cfg.n_jobs),
        "crisis": lambda: rob.crisis_split(ds, config=fc, n_jobs=cfg.n_jobs),
        "hyperparameters": lambda: rob.hyperparameter_grid(ds, seed=fc.seed, n_jobs=cfg.n_jobs),
        "anticipation": lambda: rob.anticipation_timing(ds, config=fc, n_jobs=cfg.n_jobs),
        "sample_restrictions": lambda: rob.sample_restrictions(ds, config=fc, n_jobs=cfg.n_jobs),
        "adopter_timing": lambda: rob.adopter_timing(ds, config=fc, n_jobs=cfg.n_jobs),
    }
    for name, run in procedures.items():
        try:
            rows = run()
        except EmptyGroup as e:
            bundle.skip(f"robustness/{name}.csv", str(e))
            continue
        bundle.write_csv(f"robustness/{name}.csv", rows)
        print_table(f"Robustness: {name}", rows, ("label", "att", "se", "ci_low", "ci_high"), {"label": 28})


def cmd_compare(cfg: RunConfig, bundle: Bundle, ds: Optional[PanelDataset] = None) -> None:
    ds = ds if ds is not None else load_dataset(cfg, bundle)
    seed = sub_seed(cfg.seed, "cs")
    bundle.seeds["cs"] = seed
    rows = inf.estimator_comparison(ds, cfg.k, cfg.forest_config(), cfg.bootstrap_reps, seed, cfg.n_jobs)
    bundle.write_csv("estimators.csv", rows)
    print_table(f"Estimators at k={cfg.k}", rows, ("estimator", "estimate", "se", "ci_low", "ci_high", "ci_width"), {"estimator": 9})


def cmd_report(cfg: RunConfig, bundle: Bundle) -> None:
    ds = load_dataset(cfg, bundle)
    cmd_summary(cfg, bundle, ds)
    cffe_cfg = cfg.model_copy(update={"estimator": "cffe"})
    model, curve = _estimate_cffe(cffe_cfg, ds, bundle)

    groups = []
    for feature in ds.feature_names[:1]:
        for label, c in agg.group_att(model, ds, agg.median_split(ds, feature)).items():
            groups.append((f"{feature}_{label}", c))
    try:
        for label, c in agg.group_att(model, ds, agg.cohort_split(ds)).items():
            groups.append((f"cohort_{label}", c))
    except EmptyGroup as e:
        bundle.skip("groups/cohort_*.csv", str(e))
    for name, c in groups:
        bundle.write_csv(f"groups/{name}.csv", c.to_rows())

    trajectories = agg.country_trajectories(model, ds)
    bundle.write_csv("trajectories.csv", [dict(r, country=t.country, post_average=t.post_average) for t in trajectories for r in t.curve.to_rows()])

    cmd_bootstrap(cffe_cfg, bundle, ds, curve)
    cmd_loo(cfg.model_copy(update={"estimator": "twfe"}), bundle, ds)
    cmd_placebo(cfg.model_copy(update={"estimator": "twfe"}), bundle, ds)
    cmd_pretrends(cfg.model_copy(update={"estimator": "twfe"}), bundle, ds)
    cmd_compare(cfg, bundle, ds)
    cmd_robustness(cfg, bundle, ds)
    cmd_dsge_compare(cfg, bundle)


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bootstrap": cmd_bootstrap,
    "placebo": cmd_placebo,
    "loo": cmd_loo,
    "pretrends": cmd_pretrends,
    "dsge-irf": cmd_dsge_irf,
    "dsge-compare": cmd_dsge_compare,
    "summary": cmd_summary,
    "robustness": cmd_robustness,
    "compare": cmd_compare,
    "report": cmd_report,
}


def run(cfg: RunConfig) -> int:
    bundle = Bundle(cfg.out_dir, cfg.command, cfg.seed, cfg.model_dump(mode="json", exclude=set(RUNTIME_ONLY)))
    try:
        HANDLERS[cfg.command](cfg, bundle)
    except CffeError as e:
        bundle.finalize(complete=False, error=e.code)
        raise
    except Exception:
        bundle.finalize(complete=False, error=INTERNAL_ERROR)
        raise
    bundle.finalize(complete=True)
    return 0


def _error_line(code: str, message: str) -> None:
    msg = message.replace('"', "'").replace("\n", " ")
    print(f'error={code} message="{msg}"', file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    settings.configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return run(RunConfig.from_args(args))
    except CffeError as e:
        _error_line(e.code, str(e))
        return 2
    except Exception as e:
        log.debug("unhandled failure", exc_info=True)
        _error_line(INTERNAL_ERROR, f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
