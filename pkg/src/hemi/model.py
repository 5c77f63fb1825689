"""Multi-view embedding model over meta-path graphs.

One graph-convolution encoder per meta-path view produces node embeddings;
a learned softmax attention fuses the views into one embedding per node.
Training scores (view, fused) pairs with bilinear discriminators against the
same pairs computed from row-shuffled features, and minimizes the resulting
binary cross-entropy.  A fine-grain term pairs per-node view embeddings with
the fused embedding; a coarse-grain term pairs each view's sigmoid-mean
summary with the fused embedding; ``lam`` in [0, 1] weighs fine vs coarse.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError
from .graph import MetaPathGraph
from .tensor import SparseMatrix, Tensor


@dataclass
class HemiConfig:
    """Knobs for model shape and training; defaults follow the report setup."""

    d: int = 256
    d_m: int = 16
    lam: float = 0.5
    lr: float = 1e-3
    epochs: int = 1000
    patience: int = 50
    seed: int = 0
    layers: int = 1
    shared_encoder: bool = False
    shared_discriminator: bool = False
    shared_corruption: bool = True
    grad_clip: float = 5.0  # global norm; <= 0 disables
    hemi_weight: float = 1.0  # multiplier on the self-supervised term in augmented modes

    def validate(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.d < 1 or self.d_m < 1:
            raise ConfigError("embedding dimensions must be positive")
        if self.layers not in (1, 2):
            raise ConfigError(f"encoder layers must be 1 or 2, got {self.layers}")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be positive")


@dataclass
class ModelParams:
    """All learnable weights.

    encoder_weights[j][l] is the layer-l weight of view j's encoder; with a
    shared encoder the inner lists alias the same tensors.  Discriminator
    lists alias one tensor per side when sharing is enabled.
    """

    encoder_weights: list[list[Tensor]]
    encoder_slopes: list[Tensor]
    attn_w: Tensor  # (d_m, d)
    attn_b: Tensor  # (d_m,)
    attn_q: Tensor  # (d_m,)
    disc_fine: list[Tensor]  # (d, d) per view
    disc_coarse: list[Tensor]  # (d, d) per view
    task_w: Tensor | None = None  # (d, out) head for augmented training

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        num_views: int,
        d_in: int,
        cfg: HemiConfig,
        task_dim: int | None = None,
    ) -> "ModelParams":
        if num_views < 1:
            raise ConfigError("at least one meta-path view is required")

        def encoder():
            dims = [d_in] + [cfg.d] * cfg.layers
            return [T.glorot_init(dims[i], dims[i + 1], rng) for i in range(cfg.layers)]

        if cfg.shared_encoder:
            shared_w = encoder()
            shared_slope = T.parameter(0.25)
            weights = [shared_w] * num_views
            slopes = [shared_slope] * num_views
        else:
            weights = [encoder() for _ in range(num_views)]
            slopes = [T.parameter(0.25) for _ in range(num_views)]
        attn_w = T.glorot_init(cfg.d_m, cfg.d, rng)
        attn_b = T.parameter(np.zeros(cfg.d_m))
        attn_q = T.parameter(rng.uniform(-1.0, 1.0, size=cfg.d_m) * np.sqrt(6.0 / (cfg.d_m + 1)))
        if cfg.shared_discriminator:
            fine = [T.glorot_init(cfg.d, cfg.d, rng)] * num_views
            coarse = [T.glorot_init(cfg.d, cfg.d, rng)] * num_views
        else:
            fine = [T.glorot_init(cfg.d, cfg.d, rng) for _ in range(num_views)]
            coarse = [T.glorot_init(cfg.d, cfg.d, rng) for _ in range(num_views)]
        task_w = T.glorot_init(cfg.d, task_dim, rng) if task_dim else None
        return cls(weights, slopes, attn_w, attn_b, attn_q, fine, coarse, task_w)

    @property
    def num_views(self) -> int:
        return len(self.encoder_weights)

    def named(self) -> list[tuple[str, Tensor]]:
        """Unique (name, tensor) pairs; aliased shared tensors appear once."""
        pairs: list[tuple[str, Tensor]] = []
        seen: set[int] = set()

        def push(name, t):
            if t is not None and id(t) not in seen:
                seen.add(id(t))
                pairs.append((name, t))

        for j, layer_ws in enumerate(self.encoder_weights):
            for l, w in enumerate(layer_ws):
                push(f"enc{j}_w{l}", w)
            push(f"enc{j}_slope", self.encoder_slopes[j])
        push("attn_w", self.attn_w)
        push("attn_b", self.attn_b)
        push("attn_q", self.attn_q)
        for j, w in enumerate(self.disc_fine):
            push(f"disc_fine{j}", w)
        for j, w in enumerate(self.disc_coarse):
            push(f"disc_coarse{j}", w)
        push("task_w", self.task_w)
        return pairs

    def all(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named():
            t.data = snap[name].copy()


@dataclass
class EmbeddingSet:
    """Per-view embeddings, their summaries, attention weights, fused result."""

    per_path: list[Tensor]  # each (n, d)
    summaries: list[Tensor]  # each (d,)
    beta: Tensor  # (num_views,)
    fused: Tensor  # (n, d)

    @property
    def num_views(self) -> int:
        return len(self.per_path)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def gcn_normalize(adjacency) -> SparseMatrix:
    """Symmetric degree normalization with self-loops added to every node.

    Returns D^-1/2 (A + I) D^-1/2; the self-loop guarantees degree >= 1, so
    the division is always defined.
    """
    if isinstance(adjacency, MetaPathGraph):
        adj = adjacency.adjacency
    elif isinstance(adjacency, SparseMatrix):
        adj = adjacency.matrix
    else:
        adj = sp.csr_matrix(np.asarray(adjacency))
    if adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"gcn_normalize: square adjacency expected, got {adj.shape}")
    a_bar = adj.astype(np.float64).tolil()
    a_bar.setdiag(1.0)
    a_bar = a_bar.tocsr()
    a_bar.data[:] = np.minimum(a_bar.data, 1.0)
    deg = np.asarray(a_bar.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return SparseMatrix(d_inv_sqrt @ a_bar @ d_inv_sqrt)


def encode_metapath(norm_adj: SparseMatrix, x, weights, slope) -> Tensor:
    """Graph-convolution encoder: prelu(norm_adj @ x @ W) per layer."""
    if isinstance(weights, Tensor):
        weights = [weights]
    h = x if isinstance(x, Tensor) else Tensor(x)
    for w in weights:
        h = T.prelu(T.spmm(norm_adj, T.matmul(h, w)), slope)
    return h


def summary(z) -> Tensor:
    """Sigmoid of the mean embedding row: one coarse descriptor per view."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.shape[0] == 0:
        raise ShapeError("summary: empty embedding matrix")
    return T.sigmoid(T.mean_rows(z))


def attention_scores(z_list, attn_w: Tensor, attn_b: Tensor, attn_q: Tensor) -> Tensor:
    """Mean over nodes of q . (W z + b), one score per view."""
    d_m = attn_q.shape[0]
    scores = []
    for z in z_list:
        h = T.bias_add(T.matmul(z, T.transpose(attn_w)), attn_b)  # (n, d_m)
        s = T.matmul(h, T.reshape(attn_q, (d_m, 1)))  # (n, 1)
        scores.append(T.mean_all(s))
    return T.stack_scalars(scores)


def fuse(z_list, attn_w: Tensor, attn_b: Tensor, attn_q: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-attention weighted average of the per-view embeddings."""
    if not z_list:
        raise ShapeError("fuse: at least one view required")
    beta = T.softmax(attention_scores(z_list, attn_w, attn_b, attn_q))
    fused = None
    for j, z in enumerate(z_list):
        term = T.scale(z, T.vitem(beta, j))
        fused = term if fused is None else T.add(fused, term)
    return beta, fused


def corrupt(x, rng: np.random.Generator | None = None, permutation=None) -> Tensor:
    """Row-shuffled copy of the feature matrix (graph structure untouched)."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if permutation is None:
        if rng is None:
            raise ConfigError("corrupt: either an rng or an explicit permutation is required")
        permutation = rng.permutation(data.shape[0])
    permutation = np.asarray(permutation, dtype=np.int64)
    return Tensor(data[permutation])


def disc_fine(z_view, z_fused, w) -> Tensor:
    """Probability that a (view, fused) node pair is genuine: sigmoid bilinear."""
    z_view = z_view if isinstance(z_view, Tensor) else Tensor(z_view)
    z_fused = z_fused if isinstance(z_fused, Tensor) else Tensor(z_fused)
    w = w if isinstance(w, Tensor) else Tensor(w)
    if z_view.data.ndim != 1 or z_fused.data.ndim != 1:
        raise ShapeError(f"disc_fine: vectors expected, got {z_view.shape} and {z_fused.shape}")
    d = w.shape[0]
    logit = T.dot(T.reshape(T.matmul(T.reshape(z_view, (1, d)), w), (d,)), z_fused)
    return T.sigmoid(logit)


def disc_coarse(s_view, z_fused, w) -> Tensor:
    """Probability that (summary, fused) is genuine; same bilinear form."""
    return disc_fine(s_view, z_fused, w)


def forward_embeddings(norm_adjs, x, params: ModelParams) -> EmbeddingSet:
    """Full forward pass: encoders, summaries, attention fusion.

    ``x`` may be one feature tensor shared by all views or a list with one
    entry per view (used when corruption is resampled per view).
    """
    m = params.num_views
    if len(norm_adjs) != m:
        raise ShapeError(f"expected {m} adjacencies, got {len(norm_adjs)}")
    xs = x if isinstance(x, (list, tuple)) else [x] * m
    z_list = [
        encode_metapath(norm_adjs[j], xs[j], params.encoder_weights[j], params.encoder_slopes[j])
        for j in range(m)
    ]
    summaries = [summary(z) for z in z_list]
    beta, fused = fuse(z_list, params.attn_w, params.attn_b, params.attn_q)
    return EmbeddingSet(z_list, summaries, beta, fused)


def hemi_loss(clean: EmbeddingSet, corrupted_fused: Tensor, params: ModelParams, lam: float) -> Tensor:
    """Contrastive BCE over fine- and coarse-grain pairs, averaged per pair.

    Positive pairs score the clean fused embedding against each view's node
    embeddings (fine) and summaries (coarse); negatives score the corrupted
    fused embedding instead.  Losses are means over views and nodes so lam
    compares on the same scale everywhere; logits feed log-sigmoid directly
    for stability.  Summaries always come from the clean pass.
    """
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    m = clean.num_views
    n = clean.fused.shape[0]
    d = clean.fused.shape[1]
    fine_total = None
    coarse_total = None
    for j in range(m):
        proj = T.matmul(clean.per_path[j], params.disc_fine[j])  # shared by pos and neg
        pos = T.row_sums(T.elementwise_mul(proj, clean.fused))
        neg = T.row_sums(T.elementwise_mul(proj, corrupted_fused))
        term = T.add(T.sum_all(T.logsigmoid(pos)), T.sum_all(T.logsigmoid(T.neg(neg))))
        fine_total = term if fine_total is None else T.add(fine_total, term)

        u = T.matmul(T.reshape(clean.summaries[j], (1, d)), params.disc_coarse[j])  # (1, d)
        pos_c = T.reshape(T.matmul(clean.fused, T.transpose(u)), (n,))
        neg_c = T.reshape(T.matmul(corrupted_fused, T.transpose(u)), (n,))
        term_c = T.add(T.sum_all(T.logsigmoid(pos_c)), T.sum_all(T.logsigmoid(T.neg(neg_c))))
        coarse_total = term_c if coarse_total is None else T.add(coarse_total, term_c)
    scale = -1.0 / (m * n)
    loss_fine = T.cmul(fine_total, scale)
    loss_coarse = T.cmul(coarse_total, scale)
    return T.add(T.cmul(loss_fine, lam), T.cmul(loss_coarse, 1.0 - lam))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


@dataclass
class CheckpointMeta:
    metapaths: list[str]
    d: int
    d_m: int
    lam: float
    layers: int
    d_in: int
    shared_encoder: bool = False
    shared_discriminator: bool = False
    task_dim: int = 0
    extra: dict[str, str] = field(default_factory=dict)


def save_checkpoint(directory, params: ModelParams, meta: CheckpointMeta) -> None:
    """Directory of one binary tensor file per weight plus a text manifest."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for name, t in params.named():
        T.save_tensor(os.path.join(directory, f"{name}.bin"), t.data)
        names.append(name)
    lines = [
        f"metapaths = {','.join(meta.metapaths)}",
        f"d = {meta.d}",
        f"d_m = {meta.d_m}",
        f"lambda = {meta.lam}",
        f"layers = {meta.layers}",
        f"d_in = {meta.d_in}",
        f"shared_encoder = {int(meta.shared_encoder)}",
        f"shared_discriminator = {int(meta.shared_discriminator)}",
        f"task_dim = {meta.task_dim}",
        f"tensors = {','.join(names)}",
    ]
    lines.extend(f"{k} = {v}" for k, v in meta.extra.items())
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(directory) -> tuple[ModelParams, CheckpointMeta]:
    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DataError(f"no manifest at {manifest}")
    kv: dict[str, str] = {}
    with open(manifest, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    try:
        meta = CheckpointMeta(
            metapaths=[s for s in kv["metapaths"].split(",") if s],
            d=int(kv["d"]),
            d_m=int(kv["d_m"]),
            lam=float(kv["lambda"]),
            layers=int(kv["layers"]),
            d_in=int(kv["d_in"]),
            shared_encoder=bool(int(kv.get("shared_encoder", "0"))),
            shared_discriminator=bool(int(kv.get("shared_discriminator", "0"))),
            task_dim=int(kv.get("task_dim", "0")),
        )
        tensor_names = [s for s in kv["tensors"].split(",") if s]
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad manifest {manifest}: {exc}") from exc

    loaded = {
        name: T.parameter(T.load_tensor(os.path.join(directory, f"{name}.bin")))
        for name in tensor_names
    }
    m = len(meta.metapaths)
    try:
        weights = []
        slopes = []
        for j in range(m):
            src = 0 if meta.shared_encoder else j
            weights.append([loaded[f"enc{src}_w{l}"] for l in range(meta.layers)])
            slopes.append(loaded[f"enc{src}_slope"])
        fine = [loaded[f"disc_fine{0 if meta.shared_discriminator else j}"] for j in range(m)]
        coarse = [loaded[f"disc_coarse{0 if meta.shared_discriminator else j}"] for j in range(m)]
        params = ModelParams(
            encoder_weights=weights,
            encoder_slopes=slopes,
            attn_w=loaded["attn_w"],
            attn_b=loaded["attn_b"],
            attn_q=loaded["attn_q"],
            disc_fine=fine,
            disc_coarse=coarse,
            task_w=loaded.get("task_w"),
        )
    except KeyError as exc:
        raise DataError(f"checkpoint {directory} missing tensor {exc}") from exc
    return params, meta
