"""Supervised classification of sensor patterns.

Implements the two classifiers used for failure detection, from scratch on
numpy: an exact k-nearest-neighbor classifier with cosine (or Euclidean)
distance, and a one-hidden-layer feed-forward neural network with sigmoid
activations on both layers trained by plain mini-batch gradient descent on
a cross-entropy loss.  Also provides the train/validation/test splitting
conventions, k-fold cross-validation, accuracy, and confusion matrices.

Splits are stratified by default.  'Comb' presets fix the train+validation
fraction: comb 1..5 keep 0.65, 0.70, 0.75, 0.80, 0.85 of the rows for
training and validation, the rest for test; the validation slice is taken
as a fraction (default 0.15) of the train+validation pool.
"""

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, SplitError, TrainingError
from .geometry import _atomic_write_text

__all__ = [
    "COMB_FRACTIONS",
    "SplitSpec",
    "split",
    "cosine_distance",
    "KnnModel",
    "fit_knn",
    "knn_predict",
    "knn_cross_validate",
    "AnnConfig",
    "AnnModel",
    "ann_train",
    "ann_predict",
    "accuracy",
    "ConfusionMatrix",
    "confusion",
    "write_confusion",
    "save_knn_model",
    "save_ann_model",
    "load_ann_model",
]

# Train+validation fraction per comb preset; the complement is the test set.
COMB_FRACTIONS = {1: 0.65, 2: 0.70, 3: 0.75, 4: 0.80, 5: 0.85}


# =====================================================================
# Splitting
# =====================================================================

@dataclass(frozen=True)
class SplitSpec:
    """Specification of one train/validation/test split."""

    comb: int = 2
    val_fraction: float = 0.15
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if self.comb not in COMB_FRACTIONS:
            raise ConfigurationError(f"comb must be 1..5, got {self.comb!r}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must lie in [0, 1)")


def _largest_remainder(quotas, total):
    """Integer allocation matching ``total`` with largest-remainder rounding."""
    base = np.floor(quotas).astype(np.int64)
    remainder = quotas - base
    deficit = int(total - base.sum())
    if deficit > 0:
        order = np.argsort(-remainder, kind="stable")
        base[order[:deficit]] += 1
    elif deficit < 0:
        order = np.argsort(remainder, kind="stable")
        take = np.flatnonzero(base[order] > 0)[: -deficit]
        base[order[take]] -= 1
    return base


def split(labels, spec):
    """Partition row indices into (train, validation, test).

    Parameters
    ----------
    labels : array_like or int
        Per-row class labels (required for stratified splits).  A bare
        integer row count is accepted when ``spec.stratified`` is False.
    spec : SplitSpec

    Returns
    -------
    (train_idx, val_idx, test_idx) : ndarray triple
        Disjoint, covering, sorted index arrays.  The test set size is
        ``round(m * (1 - comb_fraction))`` exactly.
    """
    if np.isscalar(labels):
        if spec.stratified:
            raise SplitError("stratified split needs labels, not a row count")
        m = int(labels)
        labels = None
    else:
        labels = np.asarray(labels)
        m = labels.shape[0]
    if m < 10:
        raise SplitError(f"need at least 10 rows to split, got {m}")

    tv_frac = COMB_FRACTIONS[spec.comb]
    n_test = int(round(m * (1.0 - tv_frac)))
    rng = np.random.default_rng(spec.seed)

    if not spec.stratified:
        perm = rng.permutation(m)
        test = perm[:n_test]
        pool = perm[n_test:]
        n_val = int(round(pool.size * spec.val_fraction))
        val = pool[:n_val]
        train = pool[n_val:]
        return np.sort(train), np.sort(val), np.sort(test)

    classes, inverse = np.unique(labels, return_inverse=True)
    counts = np.bincount(inverse)
    if counts.min() < 3:
        lacking = classes[np.argmin(counts)]
        raise SplitError(
            f"class {lacking!r} has only {counts.min()} rows; stratification needs >= 3"
        )
    per_class = [rng.permutation(np.flatnonzero(inverse == c)) for c in range(classes.size)]

    test_counts = _largest_remainder(counts * (1.0 - tv_frac), n_test)
    pool_counts = counts - test_counts
    n_val = int(round(pool_counts.sum() * spec.val_fraction))
    val_counts = _largest_remainder(pool_counts * spec.val_fraction, n_val)

    test, val, train = [], [], []
    for idx, nt, nv in zip(per_class, test_counts, val_counts):
        test.append(idx[:nt])
        val.append(idx[nt : nt + nv])
        train.append(idx[nt + nv :])
    return (
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(val)),
        np.sort(np.concatenate(test)),
    )


# =====================================================================
# k-nearest neighbors
# =====================================================================

def cosine_distance(x, y):
    """Cosine distance ``1 - x.y / (|x||y|)``, in [0, 2]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DataError("cosine distance undefined for zero-norm vector")
    return float(1.0 - (x @ y) / (nx * ny))


def _sanitize_rows(X):
    """Shift all-zero rows by 1e-12 so cosine distance stays defined."""
    X = np.array(X, dtype=float)
    zero = np.linalg.norm(X, axis=1) == 0.0
    if np.any(zero):
        X[zero] += 1.0e-12
    return X


@dataclass
class KnnModel:
    """Exact k-NN classifier over stored training patterns."""

    k: int
    metric: str
    patterns: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.metric not in ("cosine", "euclidean"):
            raise ConfigurationError(f"metric must be cosine or euclidean, got {self.metric!r}")
        n = self.patterns.shape[0]
        if not (1 <= self.k <= n):
            raise ConfigurationError(f"k must lie in [1, {n}], got {self.k}")
        if self.labels.shape[0] != n:
            raise ConfigurationError("patterns and labels disagree in length")


def fit_knn(patterns, labels, k=2, metric="cosine"):
    """Store (sanitized) training data in a :class:`KnnModel`."""
    patterns = np.asarray(patterns, dtype=float)
    if metric == "cosine":
        patterns = _sanitize_rows(patterns)
    return KnnModel(k=k, metric=metric, patterns=patterns, labels=np.asarray(labels).copy())


def _distance_matrix(queries, patterns, metric):
    if metric == "cosine":
        qn = np.linalg.norm(queries, axis=1, keepdims=True)
        pn = np.linalg.norm(patterns, axis=1, keepdims=True)
        return 1.0 - (queries @ patterns.T) / (qn * pn.T)
    diff2 = (
        np.sum(queries**2, axis=1)[:, None]
        - 2.0 * queries @ patterns.T
        + np.sum(patterns**2, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(diff2, 0.0))


def _neighbor_order(model, queries):
    """Training indices sorted by distance per query (stable on ties)."""
    queries = np.asarray(queries, dtype=float)
    if model.metric == "cosine":
        queries = _sanitize_rows(queries)
    dist = _distance_matrix(queries, model.patterns, model.metric)
    return np.argsort(dist, axis=1, kind="stable")


def _vote(ordered_labels, k):
    nearest = ordered_labels[:k]
    votes = Counter(nearest.tolist())
    top = max(votes.values())
    tied = {lab for lab, cnt in votes.items() if cnt == top}
    if len(tied) == 1:
        return tied.pop()
    for lab in nearest:
        if lab in tied:
            return lab
    raise AssertionError("unreachable: tie set drawn from the vote itself")


def knn_predict(model, query):
    """Classify one query vector or a batch of query rows.

    Exhaustive exact search; vote ties go to the nearest neighbor whose
    label is among the tied classes.
    """
    query = np.asarray(query, dtype=float)
    single = query.ndim == 1
    order = _neighbor_order(model, query[None, :] if single else query)
    preds = np.array([_vote(model.labels[row], model.k) for row in order])
    return preds[0] if single else preds


def _stratified_folds(labels, folds, rng):
    classes, inverse = np.unique(labels, return_inverse=True)
    counts = np.bincount(inverse)
    if counts.min() < folds:
        lacking = classes[np.argmin(counts)]
        raise SplitError(
            f"fold underflow: class {lacking!r} has {counts.min()} rows for {folds} folds"
        )
    assignments = [[] for _ in range(folds)]
    for c in range(classes.size):
        idx = rng.permutation(np.flatnonzero(inverse == c))
        for j, i in enumerate(idx):
            assignments[j % folds].append(i)
    return [np.sort(np.array(a, dtype=np.int64)) for a in assignments]


def knn_cross_validate(data, labels, k_candidates, folds=10, seed=0, metric="cosine"):
    """Mean k-fold validation accuracy per candidate neighbor count.

    Folds are stratified by class.  Returns ``{k: mean_accuracy}``.
    """
    data = np.asarray(data, dtype=float)
    labels = np.asarray(labels)
    if folds < 2:
        raise SplitError("cross-validation needs at least 2 folds")
    rng = np.random.default_rng(seed)
    fold_sets = _stratified_folds(labels, folds, rng)
    k_candidates = list(k_candidates)
    if max(k_candidates) >= data.shape[0] - max(f.size for f in fold_sets):
        raise SplitError("k exceeds training size of a fold")

    sums = {k: 0.0 for k in k_candidates}
    for fold in fold_sets:
        mask = np.ones(data.shape[0], dtype=bool)
        mask[fold] = False
        model = fit_knn(data[mask], labels[mask], k=1, metric=metric)
        order = _neighbor_order(model, data[fold])
        actual = labels[fold]
        for k in k_candidates:
            preds = np.array([_vote(model.labels[row], k) for row in order])
            sums[k] += accuracy(preds, actual)
    return {k: sums[k] / folds for k in k_candidates}


# =====================================================================
# Neural network
# =====================================================================

def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class AnnConfig:
    """Training hyperparameters of the small feed-forward network."""

    hidden: int = 5
    learning_rate: float = 0.5
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 50

    def __post_init__(self):
        if self.hidden < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("hidden, batch_size and max_epochs must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class AnnModel:
    """One-hidden-layer network, sigmoid on hidden and output units."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    classes: tuple

    @property
    def layer_sizes(self):
        return (self.W1.shape[0], self.W1.shape[1], self.W2.shape[1])

    def forward(self, X):
        a1 = _sigmoid(X @ self.W1 + self.b1)
        return a1, _sigmoid(a1 @ self.W2 + self.b2)

    def predict_proba(self, X):
        return self.forward(np.atleast_2d(np.asarray(X, dtype=float)))[1]

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = self.predict_proba(X)
        idx = np.argmax(out, axis=1)  # first index on exact ties
        preds = np.array([self.classes[i] for i in idx])
        return preds[0] if single else preds

    def parameters(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def _one_hot(labels, classes):
    index = {c: j for j, c in enumerate(classes)}
    Y = np.zeros((len(labels), len(classes)))
    for i, lab in enumerate(labels):
        Y[i, index[lab]] = 1.0
    return Y


def loss_and_gradients(model, X, Y):
    """Cross-entropy loss and its exact gradients for a batch.

    Loss is the mean over the batch of the summed per-output binary
    cross-entropy; with sigmoid outputs the output-layer error simplifies
    to ``(out - Y) / batch``.
    """
    B = X.shape[0]
    a1, out = model.forward(X)
    safe = np.clip(out, 1.0e-12, 1.0 - 1.0e-12)
    loss = float(-np.sum(Y * np.log(safe) + (1.0 - Y) * np.log(1.0 - safe)) / B)

    delta2 = (out - Y) / B
    gW2 = a1.T @ delta2
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ model.W2.T) * a1 * (1.0 - a1)
    gW1 = X.T @ delta1
    gb1 = delta1.sum(axis=0)
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def ann_train(data, labels, val_data=None, val_labels=None, config=AnnConfig(), seed=0):
    """Train the network with mini-batch gradient descent.

    Weights start uniform in [-0.5, 0.5] under ``seed``.  When validation
    data is given, training stops once validation accuracy has not
    improved for ``config.patience`` epochs and the best-validation
    weights are restored.

    Returns
    -------
    AnnModel
    """
    X = np.asarray(data, dtype=float)
    labels = np.asarray(labels)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise TrainingError("training data contains fewer than two classes")
    Y = _one_hot(labels, classes)
    n_in = X.shape[1]
    n_out = len(classes)

    rng = np.random.default_rng(seed)
    model = AnnModel(
        W1=rng.uniform(-0.5, 0.5, size=(n_in, config.hidden)),
        b1=rng.uniform(-0.5, 0.5, size=config.hidden),
        W2=rng.uniform(-0.5, 0.5, size=(config.hidden, n_out)),
        b2=rng.uniform(-0.5, 0.5, size=n_out),
        classes=classes,
    )

    use_val = val_data is not None and len(val_data) > 0
    if use_val:
        val_X = np.asarray(val_data, dtype=float)
        val_y = np.asarray(val_labels)
    best_acc = -1.0
    best = None
    wait = 0
    m = X.shape[0]

    for epoch in range(config.max_epochs):
        order = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(model, X[batch], Y[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch}")
            for name, g in grads.items():
                setattr(model, name, getattr(model, name) - config.learning_rate * g)
        if use_val:
            acc = accuracy(model.predict(val_X), val_y)
            if acc > best_acc:
                best_acc = acc
                best = {k: v.copy() for k, v in model.parameters().items()}
                wait = 0
            else:
                wait += 1
                if wait >= config.patience:
                    break
    if use_val and best is not None:
        for name, value in best.items():
            setattr(model, name, value)
    return model


def ann_predict(model, query):
    """Class of a query vector (or batch): argmax of the output units."""
    return model.predict(query)


# =====================================================================
# Metrics
# =====================================================================

def accuracy(preds, labels):
    """Fraction of correct predictions."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError("predictions and labels disagree in shape")
    if preds.size == 0:
        raise DataError("accuracy of an empty prediction set is undefined")
    return float(np.mean(preds == labels))


@dataclass
class ConfusionMatrix:
    """Counts[actual, predicted] over a fixed class domain."""

    counts: np.ndarray
    classes: tuple

    @property
    def total_accuracy(self):
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    @property
    def per_class_recall(self):
        row_sums = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            recall = np.diag(self.counts) / row_sums
        return recall

    def to_dict(self):
        recall = self.per_class_recall
        return {
            "classes": [int(c) for c in self.classes],
            "counts": self.counts.tolist(),
            "per_class_recall": [None if np.isnan(r) else float(r) for r in recall],
            "total_accuracy": self.total_accuracy,
        }


def confusion(preds, labels, class_domain):
    """Build the confusion matrix of predictions against actual labels."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    classes = tuple(class_domain)
    index = {c: j for j, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for actual, pred in zip(labels.tolist(), preds.tolist()):
        if actual not in index or pred not in index:
            raise DataError(f"label outside class domain: actual={actual!r} pred={pred!r}")
        counts[index[actual], index[pred]] += 1
    return ConfusionMatrix(counts=counts, classes=classes)


def write_confusion(cm, path):
    """Write a confusion matrix as JSON."""
    _atomic_write_text(path, json.dumps(cm.to_dict(), indent=2) + "\n")


# =====================================================================
# Model persistence
# =====================================================================

def save_knn_model(model, path, data_ref=None):
    """Persist k-NN metadata; training data stays in the referenced files."""
    doc = {
        "type": "knn",
        "k": int(model.k),
        "metric": model.metric,
        "n_patterns": int(model.patterns.shape[0]),
        "n_features": int(model.patterns.shape[1]),
        "training_data": data_ref,
    }
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def save_ann_model(model, path):
    """Persist the full network (layer sizes, weights, class domain)."""
    doc = {
        "type": "ann",
        "layer_sizes": list(model.layer_sizes),
        "classes": [int(c) for c in model.classes],
        "W1": model.W1.tolist(),
        "b1": model.b1.tolist(),
        "W2": model.W2.tolist(),
        "b2": model.b2.tolist(),
    }
    _atomic_write_text(path, json.dumps(doc) + "\n")


def load_ann_model(path):
    """Load a network written by :func:`save_ann_model`."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("type") != "ann":
        raise DataError(f"{path}: not an ann model file")
    return AnnModel(
        W1=np.array(doc["W1"], dtype=float),
        b1=np.array(doc["b1"], dtype=float),
        W2=np.array(doc["W2"], dtype=float),
        b2=np.array(doc["b2"], dtype=float),
        classes=tuple(doc["classes"]),
    )
