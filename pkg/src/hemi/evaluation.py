"""Downstream evaluation of frozen embeddings.

Classification uses a multinomial logistic-regression probe trained with
Adam and early stopping on validation accuracy; clustering runs k-means
and scores agreement with labels; link prediction scores sigmoid dot
products of embedding pairs on held-out edges.  Agreement and ranking
metrics come from scikit-learn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.cluster import KMeans
from sklearn.metrics import (
    adjusted_rand_score,
    average_precision_score,
    f1_score,
    normalized_mutual_info_score,
    roc_auc_score,
)

from . import tensor as T
from .errors import DataError
from .graph import MetaPathGraph
from .tensor import AdamState, Tensor, adam_step, zero_grads

PROBE_MAX_EPOCHS = 1000
PROBE_PATIENCE = 20
PROBE_LR = 1e-3
DEFAULT_REPEATS = 10


@dataclass
class SplitSpec:
    """Node split either by fractions (may sum below 1) or explicit indices."""

    train: float | list[int] = 0.2
    val: float | list[int] = 0.1
    test: float | list[int] = 0.1
    seed: int = 0

    def draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        parts = (self.train, self.val, self.test)
        listy = [not isinstance(p, float) for p in parts]
        if any(listy):
            if not all(listy):
                raise DataError("give all three splits as fractions or all as index lists")
            idx = [np.asarray(p, dtype=np.int64) for p in parts]
            joint = np.concatenate(idx)
            if len(np.unique(joint)) != len(joint):
                raise DataError("split index lists overlap")
            return tuple(idx)
        fracs = [float(p) for p in parts]
        if any(f < 0 or f > 1 for f in fracs) or sum(fracs) > 1 + 1e-12:
            raise DataError(f"split fractions {fracs} invalid")
        perm = rng.permutation(n)
        n_train = int(round(fracs[0] * n))
        n_val = int(round(fracs[1] * n))
        n_test = int(round(fracs[2] * n))
        if min(n_train, n_test) < 1:
            raise DataError("split leaves an empty train or test set")
        train = perm[:n_train]
        val = perm[n_train : n_train + n_val]
        test = perm[n_train + n_val : n_train + n_val + n_test]
        return train, val, test


@dataclass
class ProbeResult:
    macro_f1: float
    micro_f1: float
    macro_std: float
    micro_std: float


def _train_probe(z, y, train_idx, val_idx, n_classes) -> tuple[np.ndarray, np.ndarray]:
    """Softmax regression on frozen rows; returns (weights, bias).

    Inputs are standardized with train-split statistics and weights start at
    zero, the usual logistic-regression setup; returned weights fold the
    standardization back in so they apply to raw embeddings.
    """
    d = z.shape[1]
    mu = z[train_idx].mean(axis=0)
    sd = z[train_idx].std(axis=0) + 1e-8
    z = (z - mu) / sd
    w = T.parameter(np.zeros((d, n_classes)))
    b = T.parameter(np.zeros(n_classes))
    params = [w, b]
    adam = AdamState.for_params(params, lr=PROBE_LR)
    x_train = Tensor(z[train_idx])
    onehot = Tensor(np.eye(n_classes)[y[train_idx]])
    x_val = z[val_idx] if len(val_idx) else None
    y_val = y[val_idx] if len(val_idx) else None

    best_acc = -1.0
    best = (w.data.copy(), b.data.copy())
    bad = 0
    for _ in range(PROBE_MAX_EPOCHS):
        logits = T.bias_add(T.matmul(x_train, w), b)
        logp = T.log_softmax_rows(logits)
        loss = T.neg(T.mean_all(T.row_sums(T.elementwise_mul(logp, onehot))))
        zero_grads(params)
        loss.backward()
        adam_step(adam, params)
        if x_val is not None:
            pred = (x_val @ w.data + b.data).argmax(axis=1)
            acc = float((pred == y_val).mean())
        else:
            pred = (z[train_idx] @ w.data + b.data).argmax(axis=1)
            acc = float((pred == y[train_idx]).mean())
        if acc > best_acc:
            best_acc = acc
            best = (w.data.copy(), b.data.copy())
            bad = 0
        else:
            bad += 1
            if bad >= PROBE_PATIENCE:
                break
    w_raw = best[0] / sd[:, None]
    b_raw = best[1] - mu @ (best[0] / sd[:, None])
    return w_raw, b_raw


def probe_classify(
    z: np.ndarray,
    labels: np.ndarray,
    split: SplitSpec | None = None,
    repeats: int = DEFAULT_REPEATS,
) -> ProbeResult:
    """Linear-probe classification; mean Macro/Micro-F1 over repeated splits.

    The embeddings are treated as frozen inputs: each repeat redraws the
    split, trains a fresh probe, and scores the test nodes.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if split is None:
        split = SplitSpec()
    if z.shape[0] != labels.shape[0]:
        raise DataError(f"{z.shape[0]} embeddings vs {labels.shape[0]} labels")
    classes = np.unique(labels)
    n_classes = len(classes)
    if n_classes < 2:
        raise DataError("need at least two classes to classify")
    labels = np.searchsorted(classes, labels)  # consecutive class ids
    macros, micros = [], []
    for rep in range(repeats):
        rng = np.random.default_rng([split.seed, rep])
        train_idx, val_idx, test_idx = split.draw(z.shape[0], rng)
        missing = set(range(n_classes)) - set(labels[train_idx].tolist())
        if missing:
            raise DataError(f"classes {sorted(classes[list(missing)])} absent from training split")
        w, b = _train_probe(z, labels, train_idx, val_idx, n_classes)
        pred = (z[test_idx] @ w + b).argmax(axis=1)
        macros.append(f1_score(labels[test_idx], pred, average="macro", zero_division=0))
        micros.append(f1_score(labels[test_idx], pred, average="micro", zero_division=0))
    return ProbeResult(
        macro_f1=float(np.mean(macros)),
        micro_f1=float(np.mean(micros)),
        macro_std=float(np.std(macros)),
        micro_std=float(np.std(micros)),
    )


@dataclass
class ClusterResult:
    nmi: float
    ari: float
    nmi_std: float
    ari_std: float


def cluster_eval(
    z: np.ndarray,
    labels: np.ndarray,
    k: int | None = None,
    runs: int = DEFAULT_REPEATS,
    seed: int = 0,
) -> ClusterResult:
    """k-means agreement with labels, averaged over repeated clusterings."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = len(np.unique(labels))
    if k < 2:
        raise DataError(f"need k >= 2 clusters, got {k}")
    if k > z.shape[0]:
        raise DataError(f"k={k} exceeds the {z.shape[0]} available nodes")
    nmis, aris = [], []
    for run in range(runs):
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=300, random_state=seed * runs + run)
        pred = km.fit_predict(z)
        nmis.append(normalized_mutual_info_score(labels, pred))
        aris.append(adjusted_rand_score(labels, pred))
    return ClusterResult(
        nmi=float(np.mean(nmis)),
        ari=float(np.mean(aris)),
        nmi_std=float(np.std(nmis)),
        ari_std=float(np.std(aris)),
    )


# ---------------------------------------------------------------------------
# Link prediction
# ---------------------------------------------------------------------------

@dataclass
class MetaPathMask:
    """Held-out positives/negatives and the residual training adjacency."""

    name: str
    test_pos: np.ndarray
    test_neg: np.ndarray
    val_pos: np.ndarray
    val_neg: np.ndarray
    residual: MetaPathGraph


@dataclass
class EdgeMask:
    per_path: dict[str, MetaPathMask]
    seed: int

    def residual_graphs(self) -> list[MetaPathGraph]:
        return [m.residual for m in self.per_path.values()]


def _pair_array(pairs) -> np.ndarray:
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def mask_edges(
    metapath_graphs,
    test_fraction: float = 0.45,
    val_fraction: float = 0.05,
    seed: int = 0,
    min_edges: int = 20,
) -> EdgeMask:
    """Per meta-path uniform split of the undirected edge set.

    Validation takes floor(val_fraction * E) edges, the rest of the held-out
    half goes to test; negatives of matching counts are drawn uniformly
    without replacement among off-diagonal non-edges and frozen in the mask.
    The residual adjacency keeps everything else (self-loops untouched).
    """
    if test_fraction < 0 or val_fraction < 0 or test_fraction + val_fraction >= 1:
        raise DataError("held-out fractions must be nonnegative and sum below 1")
    per_path: dict[str, MetaPathMask] = {}
    for order, mpg in enumerate(metapath_graphs):
        rng = np.random.default_rng([seed, order])
        edges = mpg.undirected_edges()
        n_edges = len(edges)
        if n_edges < min_edges:
            raise DataError(f"{mpg.name}: only {n_edges} edges, need at least {min_edges}")
        n = mpg.num_nodes
        n_held = int(np.floor(n_edges * (test_fraction + val_fraction)))
        n_val = int(np.floor(n_edges * val_fraction))
        n_test = n_held - n_val
        perm = rng.permutation(n_edges)
        test_pos = edges[perm[:n_test]]
        val_pos = edges[perm[n_test:n_held]]
        residual_edges = edges[perm[n_held:]]

        dense = mpg.adjacency.toarray().astype(bool)
        iu, ju = np.triu_indices(n, k=1)
        nonedge = ~dense[iu, ju]
        candidates = np.stack([iu[nonedge], ju[nonedge]], axis=1)
        if len(candidates) < n_held:
            raise DataError(f"{mpg.name}: not enough non-edges for {n_held} negatives")
        pick = rng.choice(len(candidates), size=n_held, replace=False)
        negs = candidates[pick]
        test_neg = negs[:n_test]
        val_neg = negs[n_test:]

        keep = np.zeros((n, n), dtype=np.int8)
        keep[residual_edges[:, 0], residual_edges[:, 1]] = 1
        keep[residual_edges[:, 1], residual_edges[:, 0]] = 1
        diag = dense.diagonal()
        np.fill_diagonal(keep, diag.astype(np.int8))
        residual = MetaPathGraph(metapath=mpg.metapath, adjacency=sp.csr_matrix(keep))
        per_path[mpg.name] = MetaPathMask(
            name=mpg.name,
            test_pos=_pair_array(test_pos),
            test_neg=_pair_array(test_neg),
            val_pos=_pair_array(val_pos),
            val_neg=_pair_array(val_neg),
            residual=residual,
        )
    return EdgeMask(per_path=per_path, seed=seed)


def edge_scores(z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Probability that two nodes link: sigmoid of the embedding dot product."""
    pairs = _pair_array(pairs)
    return expit(np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]]))


@dataclass
class LinkResult:
    per_path: dict[str, tuple[float, float]]  # name -> (auc, ap)
    auc: float = field(init=False)
    ap: float = field(init=False)

    def __post_init__(self):
        aucs = [a for a, _ in self.per_path.values()]
        aps = [p for _, p in self.per_path.values()]
        self.auc = float(np.mean(aucs))
        self.ap = float(np.mean(aps))


def link_eval(z: np.ndarray, mask: EdgeMask, use_validation: bool = False) -> LinkResult:
    """Ranking quality of edge scores per meta-path, plus the macro average."""
    z = np.asarray(z, dtype=np.float64)
    per_path: dict[str, tuple[float, float]] = {}
    for name, m in mask.per_path.items():
        pos = m.val_pos if use_validation else m.test_pos
        neg = m.val_neg if use_validation else m.test_neg
        if len(pos) == 0 or len(neg) == 0:
            raise DataError(f"{name}: empty positive or negative evaluation set")
        scores = np.concatenate([edge_scores(z, pos), edge_scores(z, neg)])
        y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        per_path[name] = (float(roc_auc_score(y, scores)), float(average_precision_score(y, scores)))
    return LinkResult(per_path=per_path)


# ---------------------------------------------------------------------------
# Metric reporting
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    task: str
    metric: str
    scope: str  # meta-path name or "all"
    value: float
    std: float = 0.0


def write_metrics_tsv(path, rows: list[MetricRow]) -> None:
    """`task<TAB>metric<TAB>metapath-or-all<TAB>value<TAB>stddev` lines."""
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(f"{r.task}\t{r.metric}\t{r.scope}\t{float(r.value)!r}\t{float(r.std)!r}\n")
