"""From-scratch classifiers (kNN, decision tree, random forest), stratified
splitting, grid search with k-fold cross-validation, and metrics.

Everything is deterministic for a given (data, spec, seed): tie-breaking is
lexicographic on class labels, first-encountered on split costs and grid
order, and forest tree seeds derive from the training seed by tree index.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

FAMILIES = ("knn", "decision-tree", "random-forest")

# Table of hyper-parameter grids used for grid-search optimization.
DEFAULT_GRIDS = {
    "random-forest": {"n_estimators": [5, 10, 15, 20, 30, 50],
                      "max_depth": [None, 3, 5, 10, 15, 25]},
    "knn": {"n_neighbors": [3, 5, 7, 9, 11, 13, 15],
            "metric": ["euclidean", "manhattan", "cosine"],
            "weights": ["uniform", "distance"]},
    "decision-tree": {"criterion": ["gini", "entropy"],
                      "max_depth": [None, 6, 10, 18]},
}

_LEGAL_PARAMS = {
    "knn": {"n_neighbors", "metric", "weights"},
    "decision-tree": {"criterion", "max_depth"},
    "random-forest": {"n_estimators", "max_depth"},
}


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        unknown = set(self.hyperparameters) - _LEGAL_PARAMS[self.family]
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        hp = self.hyperparameters
        if self.family == "knn":
            if hp.get("n_neighbors", 5) < 1:
                raise ValueError("n_neighbors must be >= 1")
            if hp.get("metric", "euclidean") not in ("euclidean", "manhattan", "cosine"):
                raise ValueError("bad knn metric")
            if hp.get("weights", "uniform") not in ("uniform", "distance"):
                raise ValueError("bad knn weights")
        else:
            if hp.get("criterion", "gini") not in ("gini", "entropy"):
                raise ValueError("bad criterion")
            depth = hp.get("max_depth")
            if depth is not None and depth < 1:
                raise ValueError("max_depth must be None or >= 1")
            if self.family == "random-forest" and hp.get("n_estimators", 10) < 1:
                raise ValueError("n_estimators must be >= 1")

    def key(self) -> str:
        return json.dumps({"family": self.family, **self.hyperparameters}, sort_keys=True)


# ---------------------------------------------------------------------------
# decision tree

_LEAF = -1


def _entropy(counts: np.ndarray, total: np.ndarray) -> np.ndarray:
    p = counts / total[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -np.sum(terms, axis=-1)


def _cumcount(codes: np.ndarray) -> np.ndarray:
    """Per-position count of earlier occurrences of the same code."""
    m = codes.size
    order = np.argsort(codes, kind="stable")
    grouped = codes[order]
    starts = np.flatnonzero(np.r_[True, grouped[1:] != grouped[:-1]])
    lengths = np.diff(np.r_[starts, m])
    within = np.arange(m) - np.repeat(starts, lengths)
    out = np.empty(m, dtype=np.int64)
    out[order] = within
    return out


def _gini_cut_costs(y_sorted: np.ndarray, cut: np.ndarray, m: int) -> np.ndarray:
    # weighted gini = (m - sum_c l_c^2/p - sum_c r_c^2/(m-p)) / m, built from
    # prefix identities: adding a class-c sample bumps sum l^2 by 2*count+1.
    totals = np.bincount(y_sorted)
    left_sq = np.cumsum(2 * _cumcount(y_sorted) + 1)
    left_dot = np.cumsum(totals[y_sorted])  # sum_c total_c * left_c
    t2 = float(np.sum(totals.astype(np.float64) ** 2))
    p = (cut + 1).astype(np.float64)
    a = left_sq[cut].astype(np.float64)
    right_sq = t2 - 2.0 * left_dot[cut] + a
    return (m - a / p - right_sq / (m - p)) / m


def _entropy_cut_costs(y_sorted: np.ndarray, cut: np.ndarray, m: int,
                       n_classes: int) -> np.ndarray:
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y_sorted] = 1.0
    total_counts = onehot.sum(axis=0)
    left_counts = np.cumsum(onehot, axis=0)[cut]
    left_n = (cut + 1).astype(np.float64)
    right_n = m - left_n
    return (left_n * _entropy(left_counts, left_n)
            + right_n * _entropy(total_counts - left_counts, right_n)) / m


def _best_split(x: np.ndarray, y: np.ndarray, feature_ids: np.ndarray,
                n_classes: int, criterion: str):
    """Lowest weighted child impurity over midpoint thresholds.

    Returns (feature, threshold) or None; ties keep the earliest feature in
    ``feature_ids`` order and the smallest threshold.
    """
    m = y.size
    best = None
    best_cost = np.inf
    for f in feature_ids:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        col_sorted = col[order]
        cut = np.nonzero(col_sorted[1:] != col_sorted[:-1])[0]
        if cut.size == 0:
            continue
        if criterion == "gini":
            cost = _gini_cut_costs(y[order], cut, m)
        else:
            cost = _entropy_cut_costs(y[order], cut, m, n_classes)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = cost[j]
            i = cut[j]
            best = (int(f), float((col_sorted[i] + col_sorted[i + 1]) / 2.0))
    return best


@dataclass
class _TreeNode:
    feature: int = _LEAF
    threshold: float = 0.0
    label: int = 0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None


def _grow_tree(x: np.ndarray, y: np.ndarray, n_classes: int, criterion: str,
               max_depth: Optional[int], rng: Optional[np.random.Generator],
               n_candidates: Optional[int]) -> _TreeNode:
    root = _TreeNode()
    # explicit stack instead of recursion: unlimited-depth trees can exceed
    # the interpreter recursion limit on large nodes
    stack: list[tuple[_TreeNode, np.ndarray, np.ndarray, int]] = [(root, x, y, 0)]
    while stack:
        node, nx, ny, depth = stack.pop()
        counts = np.bincount(ny, minlength=n_classes)
        node.label = int(np.argmax(counts))
        if (np.count_nonzero(counts) <= 1 or ny.size < 2
                or (max_depth is not None and depth >= max_depth)):
            continue
        d = nx.shape[1]
        if n_candidates is not None and n_candidates < d:
            feature_ids = np.sort(rng.choice(d, size=n_candidates, replace=False))
        else:
            feature_ids = np.arange(d)
        split = _best_split(nx, ny, feature_ids, n_classes, criterion)
        if split is None:
            continue
        node.feature, node.threshold = split
        mask = nx[:, node.feature] <= node.threshold
        node.left, node.right = _TreeNode(), _TreeNode()
        stack.append((node.left, nx[mask], ny[mask], depth + 1))
        stack.append((node.right, nx[~mask], ny[~mask], depth + 1))
    return root


def _tree_predict(node: _TreeNode, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.int64)
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        cur, idx = stack.pop()
        if idx.size == 0:
            continue
        if cur.feature == _LEAF:
            out[idx] = cur.label
            continue
        mask = x[idx, cur.feature] <= cur.threshold
        stack.append((cur.left, idx[mask]))
        stack.append((cur.right, idx[~mask]))
    return out


# ---------------------------------------------------------------------------
# trained model

@dataclass
class TrainedModel:
    spec: ClassifierSpec
    classes: tuple[str, ...]
    seed: int
    # exactly one of the following is populated, per family
    knn_x: Optional[np.ndarray] = None
    knn_y: Optional[np.ndarray] = None
    tree: Optional[_TreeNode] = None
    forest: Optional[list] = None
    selection: Optional[object] = None  # features.SelectionModel, when bundled


def train(spec: ClassifierSpec, x: np.ndarray, labels: Sequence[str],
          seed: int = 0, rf_max_features: Union[str, None] = "sqrt") -> TrainedModel:
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    if x.ndim != 2 or x.shape[0] != len(labels) or x.shape[0] == 0:
        raise TrainingError("matrix must be rectangular with one label per row")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise TrainingError("need at least two classes")
    if x.shape[0] < len(classes):
        raise TrainingError("need at least as many rows as classes")
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.array([lookup[l] for l in labels])
    model = TrainedModel(spec=spec, classes=classes, seed=seed)
    hp = spec.hyperparameters
    if spec.family == "knn":
        model.knn_x = x.copy()
        model.knn_y = y
    elif spec.family == "decision-tree":
        model.tree = _grow_tree(x, y, len(classes), hp.get("criterion", "gini"),
                                hp.get("max_depth"), None, None)
    else:
        n_estimators = hp.get("n_estimators", 10)
        n_candidates = None
        if rf_max_features == "sqrt":
            n_candidates = int(np.ceil(np.sqrt(x.shape[1])))
        seeds = np.random.SeedSequence(seed).spawn(n_estimators)
        model.forest = []
        for tree_seed in seeds:
            rng = np.random.default_rng(tree_seed)
            rows = rng.integers(0, x.shape[0], size=x.shape[0])
            model.forest.append(_grow_tree(
                x[rows], y[rows], len(classes), hp.get("criterion", "gini"),
                hp.get("max_depth"), rng, n_candidates))
    return model


def _distances(metric: str, queries: np.ndarray, train_x: np.ndarray) -> np.ndarray:
    if metric == "euclidean":
        sq = (np.sum(queries ** 2, axis=1)[:, None]
              + np.sum(train_x ** 2, axis=1)[None, :]
              - 2.0 * queries @ train_x.T)
        return np.sqrt(np.maximum(sq, 0.0))
    if metric == "manhattan":
        out = np.empty((queries.shape[0], train_x.shape[0]))
        for i, row in enumerate(queries):
            out[i] = np.sum(np.abs(train_x - row), axis=1)
        return out
    # cosine distance = 1 - cosine similarity; zero vectors are distance 1
    qn = np.linalg.norm(queries, axis=1)
    tn = np.linalg.norm(train_x, axis=1)
    sim = queries @ train_x.T
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = sim / (qn[:, None] * tn[None, :])
    sim[~np.isfinite(sim)] = 0.0
    return 1.0 - sim


def predict(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    """Predicted labels for each row; deterministic tie-breaking throughout."""
    x = np.asarray(x, dtype=np.float64)
    n_classes = len(model.classes)
    if model.spec.family == "knn":
        if x.shape[1] != model.knn_x.shape[1]:
            raise ValueError("query columns do not match the training matrix")
        hp = model.spec.hyperparameters
        k = min(hp.get("n_neighbors", 5), model.knn_x.shape[0])
        dist = _distances(hp.get("metric", "euclidean"), x, model.knn_x)
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        codes = np.empty(x.shape[0], dtype=np.int64)
        weighted = hp.get("weights", "uniform") == "distance"
        for i in range(x.shape[0]):
            nd = dist[i, nearest[i]]
            ny = model.knn_y[nearest[i]]
            if weighted:
                exact = nd == 0.0
                if exact.any():
                    votes = np.bincount(ny[exact], minlength=n_classes).astype(float)
                else:
                    votes = np.bincount(ny, weights=1.0 / nd, minlength=n_classes)
            else:
                votes = np.bincount(ny, minlength=n_classes).astype(float)
            codes[i] = int(np.argmax(votes))
        return np.array([model.classes[c] for c in codes])
    if model.spec.family == "decision-tree":
        codes = _tree_predict(model.tree, x)
        return np.array([model.classes[c] for c in codes])
    votes = np.zeros((x.shape[0], n_classes), dtype=np.int64)
    for tree in model.forest:
        codes = _tree_predict(tree, x)
        votes[np.arange(x.shape[0]), codes] += 1
    return np.array([model.classes[c] for c in np.argmax(votes, axis=1)])


# ---------------------------------------------------------------------------
# splits and folds

class SplitError(ValueError):
    pass


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def stratified_split(labels: Sequence[str], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; test count = round(n * fraction), at least 1."""
    labels = list(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F11]))
    train_idx, test_idx = [], []
    for cls in sorted(set(labels)):
        idx = np.array([i for i, l in enumerate(labels) if l == cls])
        if idx.size < 2:
            raise SplitError(f"class {cls!r} has fewer than 2 rows")
        rng.shuffle(idx)
        n_test = min(max(1, _round_half_up(idx.size * test_fraction)), idx.size - 1)
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return np.array(sorted(train_idx)), np.array(sorted(test_idx))


def stratified_kfold(labels: Sequence[str], k: int = 5,
                     seed: int = 0) -> list[np.ndarray]:
    """k disjoint folds; per-class counts across folds differ by at most 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    labels = list(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in sorted(set(labels)):
        idx = np.array([i for i, l in enumerate(labels) if l == cls])
        if idx.size < k:
            warnings.warn(f"class {cls!r} has fewer rows ({idx.size}) than folds ({k})")
        rng.shuffle(idx)
        for j, row in enumerate(idx):
            folds[j % k].append(int(row))
    return [np.array(sorted(f)) for f in folds]


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsReport:
    labels: tuple[str, ...]
    confusion: np.ndarray  # rows true, columns predicted
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    macro_f1: float
    positive_f1: Optional[float] = None


def evaluate(model: TrainedModel, x_test: np.ndarray, y_test: Sequence[str],
             mode: str = "multiclass",
             positive_label: Optional[str] = None) -> MetricsReport:
    if len(y_test) == 0:
        raise ValueError("test set must be non-empty")
    if mode not in ("binary", "multiclass"):
        raise ValueError(f"unknown mode {mode!r}")
    predicted = predict(model, np.asarray(x_test, dtype=np.float64))
    return score_predictions(list(y_test), list(predicted), mode, positive_label)


def score_predictions(y_true: Sequence[str], y_pred: Sequence[str],
                      mode: str = "multiclass",
                      positive_label: Optional[str] = None) -> MetricsReport:
    labels = tuple(sorted(set(y_true) | set(y_pred)))
    lookup = {l: i for i, l in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[lookup[t], lookup[p]] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    precision, recall, f1 = {}, {}, {}
    for i, lab in enumerate(labels):
        tp = confusion[i, i]
        p_den = confusion[:, i].sum()
        r_den = confusion[i, :].sum()
        p = tp / p_den if p_den else 0.0
        r = tp / r_den if r_den else 0.0
        precision[lab], recall[lab] = float(p), float(r)
        f1[lab] = float(2 * p * r / (p + r)) if (p + r) else 0.0
    macro = float(np.mean([f1[l] for l in labels]))
    positive = None
    if mode == "binary":
        if positive_label is None:
            raise ValueError("binary mode needs a positive_label")
        positive = f1.get(positive_label, 0.0)
    return MetricsReport(labels, confusion, accuracy, precision, recall,
                         f1, macro, positive)


# ---------------------------------------------------------------------------
# grid search

@dataclass(frozen=True)
class CvCell:
    spec: ClassifierSpec
    fold: int
    score: float
    error: str = ""


@dataclass(frozen=True)
class GridSearchResult:
    best_spec: ClassifierSpec
    model: TrainedModel
    best_score: float
    table: tuple[CvCell, ...]


def expand_grid(family: str, grid: dict) -> list[ClassifierSpec]:
    """Cartesian product in the grid's key order (first key varies slowest)."""
    keys = list(grid)
    combos = itertools.product(*(grid[k] for k in keys))
    return [ClassifierSpec(family, dict(zip(keys, values))) for values in combos]


def grid_search(family: str, grid: dict, x: np.ndarray, labels: Sequence[str],
                k: int = 5, scoring: str = "accuracy", seed: int = 0,
                positive_label: Optional[str] = None) -> GridSearchResult:
    """Best grid combination by mean k-fold CV score, refitted on all rows.

    A combination whose training fails scores -inf instead of aborting the
    search; ties keep the earliest grid combination.
    """
    if scoring not in ("accuracy", "f1-positive"):
        raise ValueError(f"unknown scoring {scoring!r}")
    if scoring == "f1-positive" and positive_label is None:
        raise ValueError("f1-positive scoring needs a positive_label")
    if not grid:
        raise ValueError("empty grid")
    specs = expand_grid(family, grid)
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        folds = stratified_kfold(labels, k, seed)
    all_rows = np.arange(len(labels))
    table: list[CvCell] = []
    best_spec, best_mean = None, -np.inf
    for spec in specs:
        scores = []
        failed = False
        for fold_id, fold in enumerate(folds):
            if fold.size == 0:
                continue
            train_rows = np.setdiff1d(all_rows, fold)
            try:
                model = train(spec, x[train_rows],
                              [labels[i] for i in train_rows], seed)
                report = evaluate(model, x[fold], [labels[i] for i in fold],
                                  "binary" if scoring == "f1-positive" else "multiclass",
                                  positive_label)
                score = (report.positive_f1 if scoring == "f1-positive"
                         else report.accuracy)
                table.append(CvCell(spec, fold_id, score))
                scores.append(score)
            except (TrainingError, ValueError) as exc:
                table.append(CvCell(spec, fold_id, -np.inf, str(exc)))
                failed = True
                break
        mean = -np.inf if failed or not scores else float(np.mean(scores))
        if mean > best_mean:
            best_mean, best_spec = mean, spec
    if best_spec is None or not np.isfinite(best_mean):
        best_spec = specs[0]
    model = train(best_spec, x, labels, seed)
    return GridSearchResult(best_spec, model, best_mean, tuple(table))


def write_cv_table(result: GridSearchResult, path: str) -> None:
    """CV table as CSV: family,params,fold,score."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("family,params,fold,score\n")
        for cell in result.table:
            params = json.dumps(cell.spec.hyperparameters, sort_keys=True)
            fh.write(f'{cell.spec.family},"{params}",{cell.fold},'
                     f'{repr(cell.score)}\n')


# ---------------------------------------------------------------------------
# persistence

def _node_to_dict(node: _TreeNode) -> dict:
    if node.feature == _LEAF:
        return {"label": node.label}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(doc: dict) -> _TreeNode:
    if "feature" not in doc:
        return _TreeNode(label=doc["label"])
    return _TreeNode(feature=doc["feature"], threshold=doc["threshold"],
                     left=_node_from_dict(doc["left"]),
                     right=_node_from_dict(doc["right"]))


def model_to_document(model: TrainedModel) -> dict:
    doc = {
        "family": model.spec.family,
        "hyperparameters": model.spec.hyperparameters,
        "classes": list(model.classes),
        "seed": model.seed,
    }
    if model.knn_x is not None:
        doc["neighbors"] = {"x": model.knn_x.tolist(),
                            "y": model.knn_y.tolist()}
    if model.tree is not None:
        doc["tree"] = _node_to_dict(model.tree)
    if model.forest is not None:
        doc["forest"] = [_node_to_dict(t) for t in model.forest]
    if model.selection is not None:
        sel = model.selection
        doc["selection"] = {
            "names": list(sel.selected_names),
            "indices": list(sel.selected_idx),
            "scaler_low": sel.scaler.low.tolist(),
            "scaler_high": sel.scaler.high.tolist(),
            "scorer": sel.scorer,
        }
    return doc


def model_from_document(doc: dict) -> TrainedModel:
    from .features import MinMaxScaler, SelectionModel

    spec = ClassifierSpec(doc["family"], dict(doc["hyperparameters"]))
    model = TrainedModel(spec=spec, classes=tuple(doc["classes"]), seed=doc["seed"])
    if "neighbors" in doc:
        model.knn_x = np.array(doc["neighbors"]["x"], dtype=np.float64)
        model.knn_y = np.array(doc["neighbors"]["y"], dtype=np.int64)
    if "tree" in doc:
        model.tree = _node_from_dict(doc["tree"])
    if "forest" in doc:
        model.forest = [_node_from_dict(t) for t in doc["forest"]]
    if "selection" in doc:
        sel = doc["selection"]
        model.selection = SelectionModel(
            tuple(sel["names"]), tuple(sel["indices"]),
            MinMaxScaler(np.array(sel["scaler_low"]), np.array(sel["scaler_high"])),
            sel["scorer"], np.zeros(len(sel["scaler_low"])))
    return model
