"""
Causal forest with node-level two-way fixed effects.

Each tree is grown on a row subsample. Under honesty the subsample is split
into a structure half (chooses splits) and an estimation half (fills leaves).
Inside every node the outcome and the treatment are residualized on country
and year effects fitted on that node's rows alone; split scores and leaf
effects are residual-on-residual ratios sum(D~ Y~) / sum(D~^2).

Feature 0 is event time k. Rows with D = 0 (never-treated and not-yet-treated)
have no post-adoption event time to route on, so an event-time split sends
them down BOTH children; thresholds come from treated rows only.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import orjson
from joblib import Parallel, cpu_count, delayed
from pydantic import BaseModel, ConfigDict, Field

from cffe.errors import DimensionMismatch, InsufficientData, IoFailure, NoSplits, TooFewTrees
from cffe.estimators.fixed_effects import demean_one_way, demean_two_way
from cffe.panel.panel_core import PanelDataset
from cffe import settings

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
EVENT_TIME = "event_time"
MIN_GAIN = 1e-16
_DD_EPS = 1e-12
MIN_TREES_FOR_VARIANCE = 50


class ForestConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_trees: int = Field(500, ge=1)
    min_leaf: int = Field(30, ge=1)
    max_depth: Optional[int] = Field(5, ge=0)
    honesty: bool = True
    honesty_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    subsample_fraction: float = Field(0.5, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    min_treated_per_leaf: int = Field(5, ge=1)
    min_control_per_leaf: int = Field(5, ge=1)


@dataclass
class TreeNode:
    split_feature: Optional[int] = None
    split_threshold: Optional[float] = None
    children: Optional[Tuple["TreeNode", "TreeNode"]] = None
    leaf_effect: Optional[float] = None
    n_treated: int = 0
    n_control: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"effect": self.leaf_effect, "n_treated": self.n_treated, "n_control": self.n_control}
        return {
            "feature": self.split_feature,
            "threshold": self.split_threshold,
            "left": self.children[0].to_dict(),
            "right": self.children[1].to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeNode":
        if "feature" not in doc:
            return cls(leaf_effect=doc["effect"], n_treated=doc.get("n_treated", 0), n_control=doc.get("n_control", 0))
        return cls(
            split_feature=int(doc["feature"]),
            split_threshold=float(doc["threshold"]),
            children=(cls.from_dict(doc["left"]), cls.from_dict(doc["right"])),
        )


class NodeResiduals(NamedTuple):
    y: np.ndarray
    d: np.ndarray
    degenerate: bool


class _ForestData(NamedTuple):
    y: np.ndarray
    d: np.ndarray
    country: np.ndarray
    year: np.ndarray
    z: np.ndarray  # (n, 1 + p): event time (NaN for never-treated) then features


@dataclass
class ForestModel:
    trees: List[TreeNode]
    config: ForestConfig
    feature_names: Tuple[str, ...]
    split_counts: List[int]
    event_time_support: Tuple[int, int]
    feature_ranges: List[Tuple[float, float]] = field(default_factory=list)
    degenerate_nodes: int = 0
    _flat: Optional[list] = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names) - 1

    def flat_trees(self) -> list:
        if self._flat is None:
            self._flat = [_flatten(t) for t in self.trees]
        return self._flat

    def to_json(self) -> bytes:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "config": self.config.model_dump(),
            "feature_names": list(self.feature_names),
            "split_counts": list(self.split_counts),
            "event_time_support": list(self.event_time_support),
            "feature_ranges": [list(r) for r in self.feature_ranges],
            "degenerate_nodes": self.degenerate_nodes,
            "trees": [t.to_dict() for t in self.trees],
        }
        return orjson.dumps(doc, option=orjson.OPT_SORT_KEYS)

    @classmethod
    def from_json(cls, data: bytes) -> "ForestModel":
        doc = orjson.loads(data)
        version = doc.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise IoFailure(f"unsupported model format_version {version}")
        return cls(
            trees=[TreeNode.from_dict(t) for t in doc["trees"]],
            config=ForestConfig(**doc["config"]),
            feature_names=tuple(doc["feature_names"]),
            split_counts=list(doc["split_counts"]),
            event_time_support=tuple(doc["event_time_support"]),
            feature_ranges=[tuple(r) for r in doc.get("feature_ranges", [])],
            degenerate_nodes=int(doc.get("degenerate_nodes", 0)),
        )


def save_model(model: ForestModel, path) -> None:
    try:
        with open(path, "wb") as f:
            f.write(model.to_json())
    except OSError as e:
        raise IoFailure(f"cannot write model to {path}: {e}") from e


def load_model(path) -> ForestModel:
    try:
        with open(path, "rb") as f:
            return ForestModel.from_json(f.read())
    except OSError as e:
        raise IoFailure(f"cannot read model from {path}: {e}") from e


# --- residualization ---

def residualize_node(y: np.ndarray, d: np.ndarray, country: np.ndarray, year: np.ndarray) -> NodeResiduals:
    """
    Y~ and D~ after country and year effects fitted on these rows only.
    A single country (or single year) falls back to one-way demeaning on the
    other dimension and is flagged degenerate.
    """
    stacked = np.column_stack([np.asarray(y, dtype=float), np.asarray(d, dtype=float)])
    multi_country = np.unique(country).size >= 2
    multi_year = np.unique(year).size >= 2
    if multi_country and multi_year:
        r = demean_two_way(stacked, country, year)
        return NodeResiduals(r[:, 0], r[:, 1], False)
    if multi_year:
        r = demean_one_way(stacked, year)
    elif multi_country:
        r = demean_one_way(stacked, country)
    else:
        r = stacked - stacked.mean(axis=0)
    return NodeResiduals(r[:, 0], r[:, 1], True)


def _local_effect(data: _ForestData, rows: np.ndarray):
    """Residual-on-residual effect on ``rows``; None when it is not identified."""
    if rows.size == 0:
        return None, 0, 0
    d = data.d[rows]
    n_t = int(d.sum())
    n_c = int(rows.size - n_t)
    if n_t == 0 or n_c == 0:
        return None, n_t, n_c
    res = residualize_node(data.y[rows], d, data.country[rows], data.year[rows])
    dd = float(res.d @ res.d)
    if dd <= _DD_EPS:
        return None, n_t, n_c
    return float(res.d @ res.y) / dd, n_t, n_c


# --- splitting ---

def _route(data: _ForestData, rows: np.ndarray, feature: int, threshold: float):
    v = data.z[rows, feature]
    if feature == 0:
        control = data.d[rows] == 0
        return rows[control | (v <= threshold)], rows[control | (v > threshold)]
    return rows[v <= threshold], rows[v > threshold]


def _prefix_candidates(v, treated, dy, dd):
    order = np.argsort(v, kind="mergesort")
    vs = v[order]
    cut = np.flatnonzero(vs[1:] > vs[:-1]) + 1
    if cut.size == 0:
        return None
    ct = np.cumsum(treated[order])
    cdy = np.cumsum(dy[order])
    cdd = np.cumsum(dd[order])
    return {
        "threshold": (vs[cut - 1] + vs[cut]) / 2.0,
        "n_left": cut.astype(float),
        "t_left": ct[cut - 1].astype(float),
        "dy_left": cdy[cut - 1],
        "dd_left": cdd[cut - 1],
        "n": float(v.size),
        "t": float(ct[-1]),
        "dy": float(cdy[-1]),
        "dd": float(cdd[-1]),
    }


def _candidate_stats(z_col, feature, treated, dy, dd):
    """Child sizes, treated/control counts and residual sums for every threshold."""
    if feature == 0:
        ctrl = ~treated
        c = _prefix_candidates(z_col[treated], np.ones(int(treated.sum()), dtype=bool), dy[treated], dd[treated])
        if c is None:
            return None
        n0 = float(ctrl.sum())
        dy0 = float(dy[ctrl].sum())
        dd0 = float(dd[ctrl].sum())
        t_l = c["t_left"]
        t_r = c["t"] - t_l
        return (
            c["threshold"],
            n0 + t_l, n0 + t_r,
            t_l, t_r,
            np.full_like(t_l, n0), np.full_like(t_l, n0),
            dy0 + c["dy_left"], dd0 + c["dd_left"],
            dy0 + (c["dy"] - c["dy_left"]), dd0 + (c["dd"] - c["dd_left"]),
        )
    c = _prefix_candidates(z_col, treated, dy, dd)
    if c is None:
        return None
    n_l, t_l = c["n_left"], c["t_left"]
    n_r = c["n"] - n_l
    t_r = c["t"] - t_l
    return (
        c["threshold"],
        n_l, n_r,
        t_l, t_r,
        n_l - t_l, n_r - t_r,
        c["dy_left"], c["dd_left"],
        c["dy"] - c["dy_left"], c["dd"] - c["dd_left"],
    )


def _best_split(data: _ForestData, rows: np.ndarray, res: NodeResiduals, cfg: ForestConfig):
    treated = data.d[rows] > 0.5
    dy = res.d * res.y
    dd = res.d * res.d
    best_score, best = MIN_GAIN, None
    # strict improvement keeps the lowest feature index, then the lowest threshold
    for j in range(data.z.shape[1]):
        cand = _candidate_stats(data.z[rows, j], j, treated, dy, dd)
        if cand is None:
            continue
        thr, n_l, n_r, t_l, t_r, c_l, c_r, dy_l, dd_l, dy_r, dd_r = cand
        valid = (
            (n_l >= cfg.min_leaf) & (n_r >= cfg.min_leaf)
            & (t_l >= cfg.min_treated_per_leaf) & (t_r >= cfg.min_treated_per_leaf)
            & (c_l >= cfg.min_control_per_leaf) & (c_r >= cfg.min_control_per_leaf)
            & (dd_l > _DD_EPS) & (dd_r > _DD_EPS)
        )
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = dy_l / dd_l - dy_r / dd_r
            score = n_l * n_r / (n_l + n_r) ** 2 * gap * gap
        score = np.where(valid, score, -np.inf)
        i = int(np.argmax(score))
        if score[i] > best_score:
            best_score, best = float(score[i]), (j, float(thr[i]))
    return best


def _grow(data: _ForestData, rows: np.ndarray, depth: int, cfg: ForestConfig, tally: Dict[str, int]) -> TreeNode:
    res = residualize_node(data.y[rows], data.d[rows], data.country[rows], data.year[rows])
    tally["degenerate"] += int(res.degenerate)
    if cfg.max_depth is not None and depth >= cfg.max_depth:
        return TreeNode()
    best = _best_split(data, rows, res, cfg)
    if best is None:
        return TreeNode()
    feature, threshold = best
    left, right = _route(data, rows, feature, threshold)
    return TreeNode(
        split_feature=feature,
        split_threshold=threshold,
        children=(_grow(data, left, depth + 1, cfg, tally), _grow(data, right, depth + 1, cfg, tally)),
    )


def _estimate(node: TreeNode, data: _ForestData, rows: np.ndarray, fallback: float) -> None:
    """Fill leaves from the estimation rows; unidentified leaves inherit the nearest identified ancestor."""
    effect, n_t, n_c = _local_effect(data, rows)
    if effect is not None:
        fallback = effect
    if node.is_leaf:
        node.leaf_effect = fallback
        node.n_treated = n_t
        node.n_control = n_c
        return
    left, right = _route(data, rows, node.split_feature, node.split_threshold)
    _estimate(node.children[0], data, left, fallback)
    _estimate(node.children[1], data, right, fallback)


def honest_halves(n: int, tree_index: int, cfg: ForestConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Row indices a tree splits on and fills its leaves from; disjoint under honesty."""
    rng = np.random.default_rng([cfg.seed, tree_index])
    m = min(n, max(2, int(round(cfg.subsample_fraction * n))))
    sample = np.sort(rng.choice(n, size=m, replace=False))
    if not cfg.honesty:
        return sample, sample
    perm = rng.permutation(sample)
    n_split = min(m - 1, max(1, int(round(cfg.honesty_fraction * m))))
    return np.sort(perm[:n_split]), np.sort(perm[n_split:])


def _grow_tree(data: _ForestData, tree_index: int, cfg: ForestConfig, root_effect: float):
    split_rows, est_rows = honest_halves(data.y.size, tree_index, cfg)
    tally = {"degenerate": 0}
    root = _grow(data, split_rows, 0, cfg, tally)
    _estimate(root, data, est_rows, root_effect)
    return root, tally["degenerate"]


def _grow_batch(data: _ForestData, indices: Sequence[int], cfg: ForestConfig, root_effect: float):
    return [_grow_tree(data, int(i), cfg, root_effect) for i in indices]


def _count_splits(node: TreeNode, counts: List[int]) -> None:
    if node.is_leaf:
        return
    counts[node.split_feature] += 1
    _count_splits(node.children[0], counts)
    _count_splits(node.children[1], counts)


def forest_data(dataset: PanelDataset) -> _ForestData:
    z = np.column_stack([dataset.k, dataset.x]) if dataset.x.size else dataset.k[:, None]
    return _ForestData(
        y=dataset.y,
        d=dataset.d,
        country=dataset.country_codes,
        year=dataset.year_codes,
        z=z,
    )


def fit_forest(dataset: PanelDataset, config: Optional[ForestConfig] = None, n_jobs: Optional[int] = None) -> ForestModel:
    cfg = config or ForestConfig()
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    data = forest_data(dataset)
    n_treated = int(data.d.sum())
    if n_treated == 0 or n_treated == data.d.size:
        raise InsufficientData(f"need treated and control rows, got {n_treated} treated of {data.d.size}")
    root_effect, _, _ = _local_effect(data, np.arange(data.y.size))
    if root_effect is None:
        raise InsufficientData("treatment has no variation left after two-way fixed effects")

    workers = cpu_count() if n_jobs < 0 else max(1, n_jobs)
    batches = [b for b in np.array_split(np.arange(cfg.n_trees), min(workers, cfg.n_trees)) if b.size]
    results = Parallel(n_jobs=n_jobs)(delayed(_grow_batch)(data, b, cfg, root_effect) for b in batches)
    grown = [r for batch in results for r in batch]
    trees = [t for t, _ in grown]

    counts = [0] * data.z.shape[1]
    for t in trees:
        _count_splits(t, counts)
    k_post = dataset.k[dataset.d > 0]
    ranges = [(float(dataset.x[:, j].min()), float(dataset.x[:, j].max())) for j in range(dataset.x.shape[1])]
    model = ForestModel(
        trees=trees,
        config=cfg,
        feature_names=(EVENT_TIME, *dataset.feature_names),
        split_counts=counts,
        event_time_support=(int(k_post.min()), int(k_post.max())),
        feature_ranges=ranges,
        degenerate_nodes=sum(g for _, g in grown),
    )
    log.info(
        f"grew {cfg.n_trees} trees (depth<={cfg.max_depth}, leaf>={cfg.min_leaf}, honesty={cfg.honesty}); "
        f"internal nodes={sum(counts)}, degenerate nodes={model.degenerate_nodes}"
    )
    return model


# --- prediction ---

def _flatten(root: TreeNode):
    feature, threshold, left, right, value = [], [], [], [], []
    stack = [(root, -1, 0)]
    while stack:
        node, parent, side = stack.pop()
        idx = len(feature)
        if parent >= 0:
            (left if side == 0 else right)[parent] = idx
        if node.is_leaf:
            feature.append(-1)
            threshold.append(0.0)
            value.append(node.leaf_effect)
        else:
            feature.append(node.split_feature)
            threshold.append(node.split_threshold)
            value.append(np.nan)
            stack.append((node.children[1], idx, 1))
            stack.append((node.children[0], idx, 0))
        left.append(-1)
        right.append(-1)
    return (
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.asarray(value, dtype=float),
    )


def _query_matrix(model: ForestModel, k, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {x.shape[1]}")
    k = np.broadcast_to(np.asarray(k, dtype=float), (x.shape[0],))
    return np.column_stack([k, x])


def tree_predictions(model: ForestModel, k, x) -> np.ndarray:
    """(n_trees, n_queries) matrix of per-tree leaf effects."""
    z = _query_matrix(model, k, x)
    q = z.shape[0]
    rows = np.arange(q)
    out = np.empty((len(model.trees), q))
    for i, (feat, thr, left, right, value) in enumerate(model.flat_trees()):
        idx = np.zeros(q, dtype=np.intp)
        while True:
            f = feat[idx]
            internal = f >= 0
            if not internal.any():
                break
            zval = z[rows, np.where(internal, f, 0)]
            nxt = np.where(zval <= thr[idx], left[idx], right[idx])
            idx = np.where(internal, nxt, idx)
        out[i] = value[idx]
    return out


def predict_rows(model: ForestModel, k, x) -> np.ndarray:
    return tree_predictions(model, k, x).mean(axis=0)


def predict_cate(model: ForestModel, k: int, x: Sequence[float]) -> float:
    return float(predict_rows(model, k, x)[0])


def check_variance(model: ForestModel) -> None:
    if not model.config.honesty:
        raise TooFewTrees("forest variance requires an honest forest")
    if len(model.trees) < MIN_TREES_FOR_VARIANCE:
        raise TooFewTrees(f"forest variance needs >= {MIN_TREES_FOR_VARIANCE} trees, model has {len(model.trees)}")


def forest_variance(model: ForestModel, k, x) -> float:
    """
    Variance of the forest prediction from disjoint pairs of trees:
    var(pair means, ddof=1) / n_pairs. With several query points the variance
    of their averaged prediction is returned.
    """
    check_variance(model)
    per_tree = tree_predictions(model, k, x).mean(axis=1)
    return float(pair_variance(per_tree))


def pair_variance(per_tree: np.ndarray) -> np.ndarray:
    """Column-wise disjoint-pair variance of an (n_trees,) or (n_trees, q) prediction matrix."""
    n_pairs = per_tree.shape[0] // 2
    pairs = per_tree[: 2 * n_pairs].reshape(n_pairs, 2, *per_tree.shape[1:]).mean(axis=1)
    return np.maximum(0.0, pairs.var(axis=0, ddof=1) / n_pairs)


def feature_importance(model: ForestModel) -> List[dict]:
    total = sum(model.split_counts)
    if total == 0:
        raise NoSplits("every tree is a single leaf")
    return [
        {"feature": name, "importance": count / total, "split_count": count}
        for name, count in zip(model.feature_names, model.split_counts)
    ]
