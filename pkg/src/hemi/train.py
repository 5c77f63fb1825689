"""Training loops: self-supervised, and task-augmented variants.

All loops are full-batch, resample the corruption permutation every epoch,
early-stop on the training loss, and return the parameters from the best
(lowest-loss) epoch.  Everything is deterministic given the config seed;
independent seed streams drive initialization, corruption, and negative
sampling so the loops stay reproducible when optional terms are disabled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericError
from .model import (
    EmbeddingSet,
    HemiConfig,
    ModelParams,
    corrupt,
    forward_embeddings,
    gcn_normalize,
    hemi_loss,
)
from .tensor import AdamState, Tensor, adam_step, clip_global_norm, zero_grads

STOP_PATIENCE = "patience"
STOP_MAX_EPOCHS = "max-epochs"


@dataclass
class TrainReport:
    """Loss curve and stopping bookkeeping for one run."""

    losses: list[float]
    best_epoch: int  # 1-based
    stop_reason: str
    seconds: float
    seed: int

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def write_tsv(self, path) -> None:
        """`epoch<TAB>loss` rows followed by one commented summary line."""
        with open(path, "w", encoding="utf-8") as f:
            for i, loss in enumerate(self.losses, start=1):
                f.write(f"{i}\t{loss!r}\n")
            f.write(
                f"# best_epoch={self.best_epoch}\tstop={self.stop_reason}"
                f"\tseconds={self.seconds:.3f}\tseed={self.seed}\n"
            )


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _check_finite(value: float, epoch: int, what: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} at epoch {epoch}")


def _corrupted_fused(norm_adjs, x: Tensor, params: ModelParams, cfg: HemiConfig, rng) -> Tensor:
    if cfg.shared_corruption:
        x_tilde = corrupt(x, rng)
    else:
        x_tilde = [corrupt(x, rng) for _ in range(params.num_views)]
    return forward_embeddings(norm_adjs, x_tilde, params).fused


class _Loop:
    """Shared epoch loop: loss closure in, best-snapshot parameters out."""

    def __init__(self, params: ModelParams, cfg: HemiConfig):
        self.params = params
        self.cfg = cfg
        self.adam = AdamState.for_params(params.all(), lr=cfg.lr)

    def run(self, loss_fn, log=None) -> TrainReport:
        cfg = self.cfg
        params = self.params
        losses: list[float] = []
        best = np.inf
        best_epoch = 0
        best_snap = None
        bad = 0
        reason = STOP_MAX_EPOCHS
        started = time.perf_counter()
        for epoch in range(1, cfg.epochs + 1):
            loss = loss_fn(epoch)
            value = loss.item()
            _check_finite(value, epoch, "loss")
            losses.append(value)
            if value < best:
                best = value
                best_epoch = epoch
                best_snap = params.snapshot()
                bad = 0
            else:
                bad += 1
            if log is not None:
                log(epoch, value)
            if bad >= cfg.patience:
                reason = STOP_PATIENCE
                break
            zero_grads(params.all())
            loss.backward()
            if cfg.grad_clip > 0:
                clip_global_norm(params.all(), cfg.grad_clip)
            adam_step(self.adam, params.all())
        params.restore(best_snap)
        seconds = time.perf_counter() - started
        return TrainReport(losses, best_epoch, reason, seconds, cfg.seed)


def train_selfsup(
    metapath_graphs,
    features: np.ndarray,
    cfg: HemiConfig,
    log=None,
) -> tuple[ModelParams, EmbeddingSet, TrainReport]:
    """Contrastive training on the meta-path views alone.

    Returns the parameters of the lowest-training-loss epoch, embeddings
    recomputed from clean inputs with those parameters, and the loss curve.
    """
    cfg.validate()
    if not metapath_graphs:
        raise DataError("at least one meta-path graph is required")
    features = np.asarray(features, dtype=np.float64)
    n = metapath_graphs[0].num_nodes if hasattr(metapath_graphs[0], "num_nodes") else features.shape[0]
    if features.shape[0] != n:
        raise DataError(f"features cover {features.shape[0]} nodes, graphs have {n}")
    norm_adjs = [gcn_normalize(g) for g in metapath_graphs]
    params = ModelParams.init(_rng(cfg.seed, 0), len(norm_adjs), features.shape[1], cfg)
    x = Tensor(features)
    rng_corrupt = _rng(cfg.seed, 1)

    def loss_fn(epoch):
        clean = forward_embeddings(norm_adjs, x, params)
        fused_tilde = _corrupted_fused(norm_adjs, x, params, cfg, rng_corrupt)
        return hemi_loss(clean, fused_tilde, params, cfg.lam)

    report = _Loop(params, cfg).run(loss_fn, log=log)
    embeddings = forward_embeddings(norm_adjs, x, params)
    return params, embeddings, report


def _classification_loss(fused: Tensor, task_w: Tensor, labeled_idx, labels_onehot) -> Tensor:
    logits = T.matmul(fused, task_w)
    logp = T.gather_rows(T.log_softmax_rows(logits), labeled_idx)
    picked = T.row_sums(T.elementwise_mul(logp, labels_onehot))
    return T.neg(T.mean_all(picked))


def train_augmented_nc(
    metapath_graphs,
    features: np.ndarray,
    labeled_idx,
    labels,
    cfg: HemiConfig,
    num_classes: int | None = None,
    log=None,
) -> tuple[ModelParams, EmbeddingSet, TrainReport]:
    """Cross-entropy on labeled nodes plus the contrastive term.

    The supervised head is a linear map to class logits with softmax rows;
    `cfg.hemi_weight` scales the contrastive term on the intermediate fused
    embeddings (0 recovers plain supervised training exactly).
    """
    cfg.validate()
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labeled_idx.size == 0:
        raise DataError("no labeled nodes given")
    if labeled_idx.size != labels.size:
        raise DataError("labeled_idx and labels lengths differ")
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if labeled_idx.min() < 0 or labeled_idx.max() >= n:
        raise DataError("label references an unknown node index")
    n_classes = int(num_classes) if num_classes else int(labels.max()) + 1
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")
    onehot = Tensor(np.eye(n_classes)[labels])

    norm_adjs = [gcn_normalize(g) for g in metapath_graphs]
    params = ModelParams.init(_rng(cfg.seed, 0), len(norm_adjs), features.shape[1], cfg, task_dim=n_classes)
    x = Tensor(features)
    rng_corrupt = _rng(cfg.seed, 1)

    def loss_fn(epoch):
        clean = forward_embeddings(norm_adjs, x, params)
        total = _classification_loss(clean.fused, params.task_w, labeled_idx, onehot)
        if cfg.hemi_weight != 0.0:
            fused_tilde = _corrupted_fused(norm_adjs, x, params, cfg, rng_corrupt)
            total = T.add(total, T.cmul(hemi_loss(clean, fused_tilde, params, cfg.lam), cfg.hemi_weight))
        return total

    report = _Loop(params, cfg).run(loss_fn, log=log)
    embeddings = forward_embeddings(norm_adjs, x, params)
    return params, embeddings, report


def _canonical_pairs(edges: np.ndarray) -> set[tuple[int, int]]:
    return {(min(int(u), int(v)), max(int(u), int(v))) for u, v in edges}


def sample_negative_pairs(
    num_nodes: int,
    positives: set[tuple[int, int]],
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform unobserved node pairs: no self-pairs, no positives, no repeats."""
    total_pairs = num_nodes * (num_nodes - 1) // 2
    if len(positives) > 0.95 * total_pairs:
        raise DataError("graph too dense to sample negative pairs (>95% observed)")
    if count > total_pairs - len(positives):
        raise DataError("not enough unobserved pairs for negative sampling")
    chosen: set[tuple[int, int]] = set()
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    while filled < count:
        u = int(rng.integers(num_nodes))
        v = int(rng.integers(num_nodes))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in positives or pair in chosen:
            continue
        chosen.add(pair)
        out[filled] = pair
        filled += 1
    return out


def _link_loss(h: Tensor, pos: np.ndarray, neg: np.ndarray) -> Tensor:
    def pair_logits(pairs):
        left = T.gather_rows(h, pairs[:, 0])
        right = T.gather_rows(h, pairs[:, 1])
        return T.row_sums(T.elementwise_mul(left, right))

    pos_term = T.mean_all(T.logsigmoid(pair_logits(pos)))
    neg_term = T.mean_all(T.logsigmoid(T.neg(pair_logits(neg))))
    return T.neg(T.add(pos_term, neg_term))


def train_augmented_lp(
    metapath_graphs,
    features: np.ndarray,
    positive_edges: np.ndarray,
    cfg: HemiConfig,
    log=None,
) -> tuple[ModelParams, EmbeddingSet, TrainReport]:
    """Edge BCE between positives and resampled negatives, plus contrastive term.

    Scores come from a linear head h = Z W; each epoch draws as many fresh
    uniform negative pairs as there are positives.  `cfg.hemi_weight` scales
    the contrastive term (0 trains on the edge loss alone).
    """
    cfg.validate()
    positive_edges = np.asarray(positive_edges, dtype=np.int64).reshape(-1, 2)
    if len(positive_edges) == 0:
        raise DataError("positive edge set is empty")
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    positives = _canonical_pairs(positive_edges)

    norm_adjs = [gcn_normalize(g) for g in metapath_graphs]
    params = ModelParams.init(_rng(cfg.seed, 0), len(norm_adjs), features.shape[1], cfg, task_dim=cfg.d)
    x = Tensor(features)
    rng_corrupt = _rng(cfg.seed, 1)
    rng_negative = _rng(cfg.seed, 2)

    def loss_fn(epoch):
        clean = forward_embeddings(norm_adjs, x, params)
        h = T.matmul(clean.fused, params.task_w)
        negatives = sample_negative_pairs(n, positives, len(positive_edges), rng_negative)
        total = _link_loss(h, positive_edges, negatives)
        if cfg.hemi_weight != 0.0:
            fused_tilde = _corrupted_fused(norm_adjs, x, params, cfg, rng_corrupt)
            total = T.add(total, T.cmul(hemi_loss(clean, fused_tilde, params, cfg.lam), cfg.hemi_weight))
        return total

    report = _Loop(params, cfg).run(loss_fn, log=log)
    embeddings = forward_embeddings(norm_adjs, x, params)
    return params, embeddings, report


def task_head(embeddings: EmbeddingSet, params: ModelParams) -> np.ndarray:
    """Apply the trained task head to the fused embeddings."""
    if params.task_w is None:
        raise ConfigError("model has no task head")
    return embeddings.fused.data @ params.task_w.data
