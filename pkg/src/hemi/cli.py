"""Command-line entry point.

Subcommands: ingest-check, make-synthetic, train, embed, eval-classify,
eval-cluster, eval-linkpred, train-augmented.  Options come from a flat
`key = value` config file overridden by environment (HEMI_SEED) and flags.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import report
from . import tensor as T
from .datasets import DEFAULT_METAPATHS, Dataset, SyntheticSpec, load_dataset, write_synthetic
from .errors import ConfigError, DataError, HemiError
from .evaluation import (
    MetricRow,
    SplitSpec,
    cluster_eval,
    link_eval,
    mask_edges,
    probe_classify,
    write_metrics_tsv,
)
from .graph import MetaPathSpec, compose_metapath, validate_metapath
from .model import CheckpointMeta, HemiConfig, forward_embeddings, gcn_normalize, load_checkpoint, save_checkpoint
from .train import task_head, train_augmented_lp, train_augmented_nc, train_selfsup

SEED_ENV = "HEMI_SEED"


@dataclass
class RunConfig:
    """Everything one run needs; mirrors the config-file keys."""

    nodes: str = ""
    relations: str = ""
    edges: str = ""
    features: str = ""
    labels: str = ""
    target_type: str = ""
    metapaths: str = ",".join(DEFAULT_METAPATHS)
    out: str = "out"
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
    grad_clip: float = 5.0
    hemi_weight: float = 1.0
    shared_corruption: bool = True
    task: str = "nc"  # train-augmented: nc | lp
    train_fraction: float = 0.2  # probe train share
    test_edge_fraction: float = 0.45
    val_edge_fraction: float = 0.05
    checkpoint: str = ""
    embeddings: str = ""
    quiet: bool = False
    command: str = ""  # set by the CLI dispatcher, not a config-file key

    KEY_ALIASES = {"lambda": "lam", "target-type": "target_type"}
    LINKPRED_DEFAULT_D = 64

    def __post_init__(self):
        self._explicit: set[str] = set()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        if not path:
            return cfg
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        valid = {f.name for f in fields(cls)} - {"command"}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path} line {lineno}: expected `key = value`")
                key, value = (s.strip() for s in line.split("=", 1))
                key = cls.KEY_ALIASES.get(key, key.replace("-", "_"))
                if key not in valid:
                    raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
                cfg._set(key, value, f"{path} line {lineno}")
        return cfg

    def _set(self, key: str, value: str, where: str) -> None:
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                setattr(self, key, value.strip().lower() in ("1", "true", "yes", "on"))
            elif isinstance(current, int):
                setattr(self, key, int(value))
            elif isinstance(current, float):
                setattr(self, key, float(value))
            else:
                setattr(self, key, value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r} ({exc})") from exc
        self._explicit.add(key)

    def hemi_config(self, linkpred: bool = False) -> HemiConfig:
        d = self.d
        if linkpred and "d" not in self._explicit:
            d = self.LINKPRED_DEFAULT_D
        return HemiConfig(
            d=d,
            d_m=self.d_m,
            lam=self.lam,
            lr=self.lr,
            epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            layers=self.layers,
            shared_encoder=self.shared_encoder,
            shared_discriminator=self.shared_discriminator,
            shared_corruption=self.shared_corruption,
            grad_clip=self.grad_clip,
            hemi_weight=self.hemi_weight,
        )

    def metapath_specs(self) -> list[MetaPathSpec]:
        names = [s.strip() for s in self.metapaths.split(",") if s.strip()]
        if not names:
            raise ConfigError("no meta-paths configured")
        return [MetaPathSpec.parse(name) for name in names]

    def require_dataset_paths(self) -> None:
        for key in ("nodes", "relations", "edges"):
            path = getattr(self, key)
            if not path:
                raise ConfigError(f"missing required {key} file path")
            if not os.path.exists(path):
                raise ConfigError(f"{key} file not found: {path}")
        for key in ("features", "labels"):
            path = getattr(self, key)
            if path and not os.path.exists(path):
                raise ConfigError(f"{key} file not found: {path}")
        if not self.target_type:
            raise ConfigError("missing target-type")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise ConfigError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", default="", help="flat key = value config file")
    p.add_argument("--quiet", action="store_true", default=None, help="suppress per-epoch logging")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)


def _add_dataset(p: _Parser) -> None:
    p.add_argument("--nodes", default=None)
    p.add_argument("--relations", default=None)
    p.add_argument("--edges", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--target-type", dest="target_type", default=None)
    p.add_argument("--metapaths", default=None, help="comma-separated meta-path strings")


def _add_model(p: _Parser) -> None:
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--d-m", dest="d_m", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--shared-encoder", dest="shared_encoder", action="store_true", default=None)
    p.add_argument("--shared-discriminator", dest="shared_discriminator", action="store_true", default=None)
    p.add_argument(
        "--resample-corruption-per-view",
        dest="shared_corruption",
        action="store_false",
        default=None,
        help="draw an independent corruption permutation per meta-path each epoch",
    )
    p.add_argument("--grad-clip", dest="grad_clip", type=float, default=None)
    p.add_argument("--hemi-weight", dest="hemi_weight", type=float, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="hemi", description="Self-supervised multi-view heterogeneous graph embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="parse dataset files and validate meta-paths")
    _add_common(p)
    _add_dataset(p)

    p = sub.add_parser("make-synthetic", help="generate a planted-block benchmark dataset")
    _add_common(p)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--block-size", type=int, default=30)
    p.add_argument("--authors-per-block", type=int, default=10)
    p.add_argument("--subjects-per-block", type=int, default=5)
    p.add_argument("--intra", type=float, default=0.30)
    p.add_argument("--inter", type=float, default=0.01)
    p.add_argument("--intra-ps", type=float, default=None, help="override intra for the ps relation")
    p.add_argument("--inter-ps", type=float, default=None, help="override inter for the ps relation")

    for name in ("train", "train-augmented"):
        p = sub.add_parser(name, help=f"{name} a model and write embeddings + report")
        _add_common(p)
        _add_dataset(p)
        _add_model(p)
        if name == "train-augmented":
            p.add_argument("--task", choices=("nc", "lp"), default=None)
            p.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
            p.add_argument("--test-edge-fraction", dest="test_edge_fraction", type=float, default=None)
            p.add_argument("--val-edge-fraction", dest="val_edge_fraction", type=float, default=None)

    p = sub.add_parser("embed", help="recompute embeddings from a checkpoint")
    _add_common(p)
    _add_dataset(p)
    p.add_argument("--checkpoint", default=None, required=False)

    for name in ("eval-classify", "eval-cluster"):
        p = sub.add_parser(name, help=f"{name} frozen embeddings against labels")
        _add_common(p)
        _add_dataset(p)
        p.add_argument("--embeddings", default=None, help="embeddings file (.bin or .tsv)")
        if name == "eval-classify":
            p.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)

    p = sub.add_parser("eval-linkpred", help="mask edges, train on the residual graphs, score held-out edges")
    _add_common(p)
    _add_dataset(p)
    _add_model(p)
    p.add_argument("--test-edge-fraction", dest="test_edge_fraction", type=float, default=None)
    p.add_argument("--val-edge-fraction", dest="val_edge_fraction", type=float, default=None)

    return parser


def _merge_config(args) -> RunConfig:
    cfg = RunConfig.from_file(getattr(args, "config", ""))
    if SEED_ENV in os.environ:
        cfg._set("seed", os.environ[SEED_ENV], f"env {SEED_ENV}")
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
            cfg._explicit.add(f.name)
    return cfg


def _load(cfg: RunConfig) -> Dataset:
    cfg.require_dataset_paths()
    return load_dataset(
        cfg.nodes,
        cfg.relations,
        cfg.edges,
        cfg.target_type,
        features_path=cfg.features or None,
        labels_path=cfg.labels or None,
    )


def _composed_graphs(cfg: RunConfig, dataset: Dataset):
    specs = cfg.metapath_specs()
    for spec in specs:
        validate_metapath(dataset.graph, spec)
    return [compose_metapath(dataset.graph, spec) for spec in specs]


def _say(cfg: RunConfig, message: str) -> None:
    if not cfg.quiet:
        print(message)


def _epoch_logger(cfg: RunConfig, every: int = 50):
    if cfg.quiet:
        return None

    def log(epoch, loss):
        if epoch == 1 or epoch % every == 0:
            print(f"epoch {epoch}\tloss {loss:.6f}")

    return log


def _write_embeddings(out_dir: str, z: np.ndarray) -> tuple[str, str]:
    tsv = os.path.join(out_dir, "embeddings.tsv")
    binary = os.path.join(out_dir, "embeddings.bin")
    T.save_tsv(tsv, z)
    T.save_tensor(binary, z)
    return tsv, binary


def _write_train_outputs(cfg: RunConfig, hemi_cfg, dataset, graphs, params, embeddings, train_report, meta_extra=None):
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    _write_embeddings(out, embeddings.fused.data)
    train_report.write_tsv(os.path.join(out, "report.tsv"))
    report.save_loss_curve(train_report.losses, os.path.join(out, "loss_curve.png"), train_report.best_epoch)
    names = [g.name for g in graphs]
    beta = embeddings.beta.data
    with open(os.path.join(out, "attention.tsv"), "w", encoding="utf-8") as f:
        for name, w in zip(names, beta):
            f.write(f"{name}\t{float(w)!r}\n")
    report.save_attention_bars(names, beta, os.path.join(out, "attention.png"))
    meta = CheckpointMeta(
        metapaths=names,
        d=hemi_cfg.d,
        d_m=hemi_cfg.d_m,
        lam=hemi_cfg.lam,
        layers=hemi_cfg.layers,
        d_in=dataset.features.shape[1],
        shared_encoder=hemi_cfg.shared_encoder,
        shared_discriminator=hemi_cfg.shared_discriminator,
        task_dim=0 if params.task_w is None else params.task_w.shape[1],
        extra=meta_extra or {},
    )
    save_checkpoint(os.path.join(out, "checkpoint"), params, meta)
    _say(cfg, f"best epoch {train_report.best_epoch} ({train_report.stop_reason}), "
              f"final loss {train_report.losses[train_report.best_epoch - 1]:.6f}")
    _say(cfg, f"attention weights: " + ", ".join(f"{n}={w:.3f}" for n, w in zip(names, beta)))
    _say(cfg, f"outputs written under {out}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_ingest_check(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    g = dataset.graph
    print(f"node types: " + ", ".join(f"{t}={n}" for t, n in g.node_types))
    print(f"relations:  " + ", ".join(f"{r.name}({r.src_type}->{r.dst_type})={len(g.edges[r.name])}" for r in g.relations))
    print(f"target type: {g.target_type} ({g.num_targets} nodes), feature dim {dataset.features.shape[1]}")
    if dataset.labels is not None:
        print(f"labels: {dataset.num_classes} classes on {len(dataset.labeled_indices)} nodes")
    for spec in cfg.metapath_specs():
        validate_metapath(g, spec)
        mpg = compose_metapath(g, spec)
        print(f"meta-path {spec.name}: ok, {len(mpg.undirected_edges())} undirected edges")
    return 0


def _cmd_make_synthetic(cfg: RunConfig, args) -> int:
    probs = {
        "pa": (args.intra, args.inter),
        "ps": (
            args.intra if args.intra_ps is None else args.intra_ps,
            args.inter if args.inter_ps is None else args.inter_ps,
        ),
    }
    spec = SyntheticSpec(
        blocks=args.blocks,
        papers_per_block=args.block_size,
        authors_per_block=args.authors_per_block,
        subjects_per_block=args.subjects_per_block,
        probabilities=probs,
        seed=cfg.seed,
    )
    paths = write_synthetic(cfg.out, spec)
    _say(cfg, "wrote " + ", ".join(sorted(paths.values())))
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    graphs = _composed_graphs(cfg, dataset)
    hemi_cfg = cfg.hemi_config()
    params, embeddings, train_report = train_selfsup(
        graphs, dataset.features, hemi_cfg, log=_epoch_logger(cfg)
    )
    _write_train_outputs(cfg, hemi_cfg, dataset, graphs, params, embeddings, train_report)
    return 0


def _cmd_train_augmented(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    graphs = _composed_graphs(cfg, dataset)
    hemi_cfg = cfg.hemi_config()
    if cfg.task == "nc":
        if dataset.labels is None:
            raise ConfigError("train-augmented nc requires a labels file")
        labeled = dataset.labeled_indices
        params, embeddings, train_report = train_augmented_nc(
            graphs,
            dataset.features,
            labeled,
            dataset.labels[labeled],
            hemi_cfg,
            num_classes=dataset.num_classes,
            log=_epoch_logger(cfg),
        )
        _write_train_outputs(cfg, hemi_cfg, dataset, graphs, params, embeddings, train_report, {"task": "nc"})
    else:
        hemi_cfg = cfg.hemi_config(linkpred=True)
        mask = mask_edges(
            graphs,
            test_fraction=cfg.test_edge_fraction,
            val_fraction=cfg.val_edge_fraction,
            seed=cfg.seed,
        )
        residual = mask.residual_graphs()
        positives = np.concatenate([m.residual.undirected_edges() for m in mask.per_path.values()])
        positives = np.unique(positives, axis=0)
        params, embeddings, train_report = train_augmented_lp(
            residual, dataset.features, positives, hemi_cfg, log=_epoch_logger(cfg)
        )
        _write_train_outputs(cfg, hemi_cfg, dataset, residual, params, embeddings, train_report, {"task": "lp"})
        h = task_head(embeddings, params)
        result = link_eval(h, mask)
        rows = [MetricRow("linkpred", m, name, v) for name, (auc, ap) in result.per_path.items()
                for m, v in (("auc", auc), ("ap", ap))]
        rows.append(MetricRow("linkpred", "auc", "all", result.auc))
        rows.append(MetricRow("linkpred", "ap", "all", result.ap))
        out_tsv = os.path.join(cfg.out, "metrics.tsv")
        write_metrics_tsv(out_tsv, rows)
        report.save_metric_bars(rows, os.path.join(cfg.out, "metrics.png"))
        _say(cfg, f"held-out auc {result.auc:.4f}, ap {result.ap:.4f}")
    return 0


def _cmd_embed(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("embed requires --checkpoint")
    params, meta = load_checkpoint(cfg.checkpoint)
    dataset = _load(cfg)
    specs = [MetaPathSpec.parse(s) for s in meta.metapaths]
    graphs = [compose_metapath(dataset.graph, spec) for spec in specs]
    if dataset.features.shape[1] != meta.d_in:
        raise ConfigError(
            f"checkpoint expects feature dim {meta.d_in}, dataset has {dataset.features.shape[1]}"
        )
    norm_adjs = [gcn_normalize(g) for g in graphs]
    embeddings = forward_embeddings(norm_adjs, T.Tensor(dataset.features), params)
    os.makedirs(cfg.out, exist_ok=True)
    tsv, binary = _write_embeddings(cfg.out, embeddings.fused.data)
    _say(cfg, f"wrote {tsv} and {binary}")
    return 0


def _load_embeddings(cfg: RunConfig, dataset: Dataset) -> np.ndarray:
    if not cfg.embeddings:
        raise ConfigError("this command requires --embeddings")
    if not os.path.exists(cfg.embeddings):
        raise ConfigError(f"embeddings file not found: {cfg.embeddings}")
    z = T.load_tsv(cfg.embeddings) if cfg.embeddings.endswith(".tsv") else T.load_tensor(cfg.embeddings)
    if z.ndim != 2 or z.shape[0] != dataset.graph.num_targets:
        raise DataError(
            f"{cfg.embeddings}: expected {dataset.graph.num_targets} embedding rows, got shape {z.shape}"
        )
    return z


def _cmd_eval_classify(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    if dataset.labels is None:
        raise ConfigError("eval-classify requires a labels file")
    z = _load_embeddings(cfg, dataset)
    labeled = dataset.labeled_indices
    split = SplitSpec(train=cfg.train_fraction, val=0.1, test=0.1, seed=cfg.seed)
    result = probe_classify(z[labeled], dataset.labels[labeled], split)
    rows = [
        MetricRow("classification", "macro_f1", "all", result.macro_f1, result.macro_std),
        MetricRow("classification", "micro_f1", "all", result.micro_f1, result.micro_std),
    ]
    os.makedirs(cfg.out, exist_ok=True)
    write_metrics_tsv(os.path.join(cfg.out, "metrics.tsv"), rows)
    report.save_metric_bars(rows, os.path.join(cfg.out, "metrics.png"))
    report.save_embedding_scatter(z[labeled], dataset.labels[labeled], os.path.join(cfg.out, "embedding_scatter.png"))
    _say(cfg, f"macro_f1 {result.macro_f1:.4f} (+-{result.macro_std:.4f}), "
              f"micro_f1 {result.micro_f1:.4f} (+-{result.micro_std:.4f})")
    return 0


def _cmd_eval_cluster(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    if dataset.labels is None:
        raise ConfigError("eval-cluster requires a labels file")
    z = _load_embeddings(cfg, dataset)
    labeled = dataset.labeled_indices
    result = cluster_eval(z[labeled], dataset.labels[labeled], dataset.num_classes, seed=cfg.seed)
    rows = [
        MetricRow("clustering", "nmi", "all", result.nmi, result.nmi_std),
        MetricRow("clustering", "ari", "all", result.ari, result.ari_std),
    ]
    os.makedirs(cfg.out, exist_ok=True)
    write_metrics_tsv(os.path.join(cfg.out, "metrics.tsv"), rows)
    report.save_metric_bars(rows, os.path.join(cfg.out, "metrics.png"))
    report.save_embedding_scatter(z[labeled], dataset.labels[labeled], os.path.join(cfg.out, "embedding_scatter.png"))
    _say(cfg, f"nmi {result.nmi:.4f} (+-{result.nmi_std:.4f}), ari {result.ari:.4f} (+-{result.ari_std:.4f})")
    return 0


def _cmd_eval_linkpred(cfg: RunConfig) -> int:
    """Mask edges, train on the residual graphs, score the held-out edges."""
    dataset = _load(cfg)
    graphs = _composed_graphs(cfg, dataset)
    mask = mask_edges(
        graphs,
        test_fraction=cfg.test_edge_fraction,
        val_fraction=cfg.val_edge_fraction,
        seed=cfg.seed,
    )
    hemi_cfg = cfg.hemi_config(linkpred=True)
    params, embeddings, train_report = train_selfsup(
        mask.residual_graphs(), dataset.features, hemi_cfg, log=_epoch_logger(cfg)
    )
    result = link_eval(embeddings.fused.data, mask)
    rows = [MetricRow("linkpred", m, name, v) for name, (auc, ap) in result.per_path.items()
            for m, v in (("auc", auc), ("ap", ap))]
    rows.append(MetricRow("linkpred", "auc", "all", result.auc))
    rows.append(MetricRow("linkpred", "ap", "all", result.ap))
    os.makedirs(cfg.out, exist_ok=True)
    _write_train_outputs(cfg, hemi_cfg, dataset, mask.residual_graphs(), params, embeddings, train_report, {"task": "linkpred"})
    write_metrics_tsv(os.path.join(cfg.out, "metrics.tsv"), rows)
    report.save_metric_bars(rows, os.path.join(cfg.out, "metrics.png"))
    _say(cfg, f"macro auc {result.auc:.4f}, macro ap {result.ap:.4f}")
    return 0


PIPELINES = {
    "train": _cmd_train,
    "train-augmented": _cmd_train_augmented,
    "embed": _cmd_embed,
    "eval-classify": _cmd_eval_classify,
    "eval-cluster": _cmd_eval_cluster,
    "eval-linkpred": _cmd_eval_linkpred,
}


def run(cfg: RunConfig) -> int:
    """Execute the pipeline named by cfg.command; returns the exit status."""
    handler = PIPELINES.get(cfg.command)
    if handler is None:
        raise ConfigError(f"unknown pipeline {cfg.command!r}")
    return handler(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge_config(args)
        cfg.command = args.command
        if args.command == "ingest-check":
            return _cmd_ingest_check(cfg)
        if args.command == "make-synthetic":
            return _cmd_make_synthetic(cfg, args)
        return run(cfg)
    except HemiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
