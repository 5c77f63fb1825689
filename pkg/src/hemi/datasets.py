"""Dataset ingestion and synthetic benchmark generation.

File formats (UTF-8, tab separated):
  nodes file      node_id <TAB> type_name           (dense per-type indices
                                                     follow file order)
  relations file  relation_name <TAB> src_type <TAB> dst_type
  edges file      src_id <TAB> relation_name <TAB> dst_id
  features file   node_id <TAB> f1 <TAB> f2 ...     (target nodes)
  labels file     node_id <TAB> label               (target nodes)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .graph import HeteroGraph, Relation


@dataclass
class Dataset:
    """Ingested graph plus target-node features and optional labels."""

    graph: HeteroGraph
    features: np.ndarray  # (num targets, d_in)
    labels: np.ndarray | None  # int class per target node, -1 where unlabeled
    label_names: list[str]
    node_ids: dict[str, list[str]]  # per type, original ids in index order

    @property
    def labeled_indices(self) -> np.ndarray:
        if self.labels is None:
            raise DataError("dataset has no labels")
        return np.flatnonzero(self.labels >= 0)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)


def _read_rows(path, n_fields: int, what: str) -> list[tuple[int, list[str]]]:
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if n_fields and len(fields) != n_fields:
                raise DataError(f"{path} line {lineno}: expected {n_fields} fields, got {len(fields)}")
            rows.append((lineno, fields))
    return rows


def load_dataset(
    nodes_path,
    relations_path,
    edges_path,
    target_type: str,
    features_path=None,
    labels_path=None,
) -> Dataset:
    """Read the tab-separated files into a validated Dataset.

    Target nodes lacking feature rows get one-hot identity columns appended
    after the given features; with no features file at all this degenerates
    to the |V_t| x |V_t| identity matrix.
    """
    # Nodes: dense per-type index in file order.
    node_index: dict[str, tuple[str, int]] = {}
    node_ids: dict[str, list[str]] = {}
    for lineno, (nid, type_name) in ((ln, tuple(fs)) for ln, fs in _read_rows(nodes_path, 2, "nodes")):
        if nid in node_index:
            raise DataError(f"{nodes_path} line {lineno}: duplicate node id {nid!r}")
        ids = node_ids.setdefault(type_name, [])
        node_index[nid] = (type_name, len(ids))
        ids.append(nid)
    if target_type not in node_ids:
        raise DataError(f"target type {target_type!r} has no nodes in {nodes_path}")

    relations = []
    for lineno, (name, src, dst) in ((ln, tuple(fs)) for ln, fs in _read_rows(relations_path, 3, "relations")):
        if any(r.name == name for r in relations):
            raise DataError(f"{relations_path} line {lineno}: duplicate relation {name!r}")
        for t in (src, dst):
            if t not in node_ids:
                raise DataError(f"{relations_path} line {lineno}: unknown node type {t!r}")
        relations.append(Relation(name, src, dst))
    rel_by_name = {r.name: r for r in relations}

    edges: dict[str, list[tuple[int, int]]] = {r.name: [] for r in relations}
    seen_pairs: dict[str, set[tuple[int, int]]] = {r.name: set() for r in relations}
    for lineno, (src_id, rel_name, dst_id) in ((ln, tuple(fs)) for ln, fs in _read_rows(edges_path, 3, "edges")):
        if rel_name not in rel_by_name:
            raise DataError(f"{edges_path} line {lineno}: unknown relation {rel_name!r}")
        rel = rel_by_name[rel_name]
        for nid, expected in ((src_id, rel.src_type), (dst_id, rel.dst_type)):
            if nid not in node_index:
                raise DataError(f"{edges_path} line {lineno}: unknown node id {nid!r}")
            if node_index[nid][0] != expected:
                raise DataError(
                    f"{edges_path} line {lineno}: node {nid!r} has type "
                    f"{node_index[nid][0]!r}, relation {rel_name!r} expects {expected!r}"
                )
        pair = (node_index[src_id][1], node_index[dst_id][1])
        if pair not in seen_pairs[rel_name]:  # duplicates collapse on ingestion
            seen_pairs[rel_name].add(pair)
            edges[rel_name].append(pair)

    graph = HeteroGraph(
        node_types=[(t, len(ids)) for t, ids in node_ids.items()],
        relations=relations,
        edges={k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in edges.items()},
        target_type=target_type,
    )

    n_targets = len(node_ids[target_type])
    features = _load_features(features_path, node_index, target_type, n_targets)
    labels, label_names = _load_labels(labels_path, node_index, target_type, n_targets)
    return Dataset(graph, features, labels, label_names, node_ids)


def _load_features(path, node_index, target_type, n_targets) -> np.ndarray:
    given: dict[int, np.ndarray] = {}
    width = 0
    if path:
        for lineno, fields in _read_rows(path, 0, "features"):
            nid, values = fields[0], fields[1:]
            if nid not in node_index or node_index[nid][0] != target_type:
                raise DataError(f"{path} line {lineno}: {nid!r} is not a target node")
            try:
                row = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: bad feature value ({exc})") from exc
            if width == 0:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path} line {lineno}: ragged feature row ({len(row)} != {width})")
            if width == 0:
                raise DataError(f"{path} line {lineno}: empty feature row")
            given[node_index[nid][1]] = row
    missing = [i for i in range(n_targets) if i not in given]
    x = np.zeros((n_targets, width + len(missing)))
    for i, row in given.items():
        x[i, :width] = row
    for slot, i in enumerate(missing):
        x[i, width + slot] = 1.0
    return x


def _load_labels(path, node_index, target_type, n_targets):
    if not path:
        return None, []
    raw: dict[int, str] = {}
    for lineno, (nid, label) in ((ln, tuple(fs)) for ln, fs in _read_rows(path, 2, "labels")):
        if nid not in node_index or node_index[nid][0] != target_type:
            raise DataError(f"{path} line {lineno}: {nid!r} is not a target node")
        raw[node_index[nid][1]] = label
    names = sorted(set(raw.values()))
    to_class = {name: c for c, name in enumerate(names)}
    labels = np.full(n_targets, -1, dtype=np.int64)
    for i, name in raw.items():
        labels[i] = to_class[name]
    return labels, names


def save_dataset_files(directory, dataset: Dataset) -> dict[str, str]:
    """Write a Dataset back out in the ingestion formats; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "nodes": os.path.join(directory, "nodes.tsv"),
        "relations": os.path.join(directory, "relations.tsv"),
        "edges": os.path.join(directory, "edges.tsv"),
    }
    g = dataset.graph
    with open(paths["nodes"], "w", encoding="utf-8") as f:
        for type_name, ids in dataset.node_ids.items():
            for nid in ids:
                f.write(f"{nid}\t{type_name}\n")
    with open(paths["relations"], "w", encoding="utf-8") as f:
        for r in g.relations:
            f.write(f"{r.name}\t{r.src_type}\t{r.dst_type}\n")
    with open(paths["edges"], "w", encoding="utf-8") as f:
        for r in g.relations:
            src_ids = dataset.node_ids[r.src_type]
            dst_ids = dataset.node_ids[r.dst_type]
            for s, d in g.edges[r.name]:
                f.write(f"{src_ids[s]}\t{r.name}\t{dst_ids[d]}\n")
    if dataset.labels is not None:
        paths["labels"] = os.path.join(directory, "labels.tsv")
        target_ids = dataset.node_ids[g.target_type]
        with open(paths["labels"], "w", encoding="utf-8") as f:
            for i, c in enumerate(dataset.labels):
                if c >= 0:
                    f.write(f"{target_ids[i]}\t{dataset.label_names[c]}\n")
    return paths


# ---------------------------------------------------------------------------
# Synthetic planted-block benchmark
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Planted-partition paper/author/subject graph.

    Papers are the target type and carry their block id as label.  Each
    attribute relation links a paper to same-block attribute nodes with
    probability `intra` and to other blocks with probability `inter`, so
    paper-attribute-paper meta-paths recover the blocks when intra > inter.
    """

    blocks: int = 3
    papers_per_block: int = 30
    authors_per_block: int = 10
    subjects_per_block: int = 5
    probabilities: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"pa": (0.30, 0.01), "ps": (0.30, 0.01)}
    )
    seed: int = 0

    def validate(self) -> None:
        if self.blocks < 1 or self.papers_per_block < 1:
            raise DataError("synthetic spec needs at least one block and one paper per block")
        if self.authors_per_block < 1 or self.subjects_per_block < 1:
            raise DataError("synthetic spec needs at least one attribute node per block")
        for rel, (intra, inter) in self.probabilities.items():
            for p in (intra, inter):
                if not (0.0 <= p <= 1.0):
                    raise DataError(f"relation {rel!r}: probability {p} outside [0, 1]")


DEFAULT_METAPATHS = ["pa.~pa", "ps.~ps"]


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample the planted-block graph; deterministic given the spec seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_papers = spec.blocks * spec.papers_per_block
    paper_block = np.repeat(np.arange(spec.blocks), spec.papers_per_block)

    def attribute_edges(rel_name, per_block):
        intra, inter = spec.probabilities.get(rel_name, (0.3, 0.01))
        n_attr = spec.blocks * per_block
        attr_block = np.repeat(np.arange(spec.blocks), per_block)
        same = paper_block[:, None] == attr_block[None, :]
        prob = np.where(same, intra, inter)
        hits = rng.random((n_papers, n_attr)) < prob
        src, dst = np.nonzero(hits)
        return n_attr, np.stack([src, dst], axis=1)

    n_authors, pa_edges = attribute_edges("pa", spec.authors_per_block)
    n_subjects, ps_edges = attribute_edges("ps", spec.subjects_per_block)

    graph = HeteroGraph(
        node_types=[("paper", n_papers), ("author", n_authors), ("subject", n_subjects)],
        relations=[
            Relation("pa", "paper", "author"),
            Relation("ps", "paper", "subject"),
        ],
        edges={"pa": pa_edges, "ps": ps_edges},
        target_type="paper",
    )
    node_ids = {
        "paper": [f"p{i}" for i in range(n_papers)],
        "author": [f"a{i}" for i in range(n_authors)],
        "subject": [f"s{i}" for i in range(n_subjects)],
    }
    features = np.eye(n_papers)
    label_names = [f"block{b}" for b in range(spec.blocks)]
    return Dataset(graph, features, paper_block.astype(np.int64), label_names, node_ids)


def write_synthetic(directory, spec: SyntheticSpec) -> dict[str, str]:
    """Generate and serialize the synthetic dataset; returns written paths.

    No features file is written: ingestion then assigns identity features,
    matching how the dataset is generated.
    """
    dataset = make_synthetic(spec)
    paths = save_dataset_files(directory, dataset)
    config_path = os.path.join(directory, "config.txt")
    with open(config_path, "w", encoding="utf-8") as f:
        f.write("# generated alongside the synthetic dataset\n")
        f.write(f"nodes = {paths['nodes']}\n")
        f.write(f"relations = {paths['relations']}\n")
        f.write(f"edges = {paths['edges']}\n")
        if "labels" in paths:
            f.write(f"labels = {paths['labels']}\n")
        f.write("target-type = paper\n")
        f.write(f"metapaths = {','.join(DEFAULT_METAPATHS)}\n")
        f.write(f"seed = {spec.seed}\n")
    paths["config"] = config_path
    return paths
