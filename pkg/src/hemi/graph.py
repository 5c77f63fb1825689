"""Typed heterogeneous graph model and meta-path composition.

A heterogeneous graph stores typed node sets and typed directed edge lists.
A meta-path is a chain of (possibly reversed) relation types; composing it
against the graph produces a homogeneous boolean adjacency over the target
node type: an entry is set when at least one path instance connects the two
endpoints.  Multiplicities are discarded and the result is symmetrized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError, MetaPathError

REVERSE_PREFIX = "~"
METAPATH_SEPARATOR = "."


@dataclass(frozen=True)
class Relation:
    """Directed edge type with its endpoint node types."""

    name: str
    src_type: str
    dst_type: str


@dataclass
class HeteroGraph:
    """Immutable typed graph: share freely across workers after construction.

    node_types: (type name, node count) pairs; indices are dense per type.
    edges: per relation name, an (E, 2) array of (src, dst) index pairs.
    target_type: the node type whose embeddings are learned.
    """

    node_types: list[tuple[str, int]]
    relations: list[Relation]
    edges: dict[str, np.ndarray]
    target_type: str

    def __post_init__(self):
        self.edges = {
            name: np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            for name, pairs in self.edges.items()
        }
        counts = self.type_counts()
        rels = {r.name: r for r in self.relations}
        if len(self.node_types) != len(counts):
            raise DataError("duplicate node type name")
        if len(rels) != len(self.relations):
            raise DataError("duplicate relation name")
        if len(counts) + len(rels) <= 2:
            raise DataError("a heterogeneous graph needs more than two node plus relation types")
        if self.target_type not in counts:
            raise DataError(f"unknown target type {self.target_type!r}")
        for rel in self.relations:
            for t in (rel.src_type, rel.dst_type):
                if t not in counts:
                    raise DataError(f"relation {rel.name!r} references unknown type {t!r}")
        for name, pairs in self.edges.items():
            if name not in rels:
                raise DataError(f"edges given for unknown relation {name!r}")
            rel = rels[name]
            if len(pairs):
                if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= counts[rel.src_type]:
                    raise DataError(f"relation {name!r}: source index out of range")
                if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= counts[rel.dst_type]:
                    raise DataError(f"relation {name!r}: dest index out of range")
                if len(np.unique(pairs, axis=0)) != len(pairs):
                    raise DataError(f"relation {name!r}: duplicate (source, dest) pair")
        for rel in self.relations:
            self.edges.setdefault(rel.name, np.zeros((0, 2), dtype=np.int64))

    def type_counts(self) -> dict[str, int]:
        return dict(self.node_types)

    def num_nodes(self, type_name: str) -> int:
        return self.type_counts()[type_name]

    @property
    def num_targets(self) -> int:
        return self.num_nodes(self.target_type)

    def relation(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise DataError(f"unknown relation {name!r}")

    def relation_matrix(self, name: str, reverse: bool = False) -> sp.csr_matrix:
        """Boolean adjacency of one relation, optionally transposed."""
        rel = self.relation(name)
        counts = self.type_counts()
        pairs = self.edges[name]
        mat = sp.csr_matrix(
            (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
            shape=(counts[rel.src_type], counts[rel.dst_type]),
        )
        return mat.T.tocsr() if reverse else mat


@dataclass(frozen=True)
class MetaPathStep:
    relation: str
    reverse: bool = False

    def __str__(self) -> str:
        return (REVERSE_PREFIX if self.reverse else "") + self.relation


@dataclass(frozen=True)
class MetaPathSpec:
    """Named sequence of oriented relation types."""

    name: str
    steps: tuple[MetaPathStep, ...]

    @classmethod
    def parse(cls, text: str) -> "MetaPathSpec":
        """Parse `rel1.rel2.~rel1` syntax; `~` marks reverse orientation."""
        text = text.strip()
        if not text:
            raise MetaPathError("empty meta-path string")
        steps = []
        for token in text.split(METAPATH_SEPARATOR):
            token = token.strip()
            reverse = token.startswith(REVERSE_PREFIX)
            name = token[1:] if reverse else token
            if not name:
                raise MetaPathError(f"bad meta-path token in {text!r}")
            steps.append(MetaPathStep(name, reverse))
        return cls(name=text, steps=tuple(steps))

    def reversed(self) -> "MetaPathSpec":
        steps = tuple(MetaPathStep(s.relation, not s.reverse) for s in reversed(self.steps))
        return MetaPathSpec(name=f"reverse({self.name})", steps=steps)

    def __str__(self) -> str:
        return METAPATH_SEPARATOR.join(str(s) for s in self.steps)


@dataclass
class MetaPathGraph:
    """Boolean symmetric reachability over target nodes for one meta-path."""

    metapath: MetaPathSpec
    adjacency: sp.csr_matrix

    def __post_init__(self):
        self.adjacency = sp.csr_matrix(self.adjacency, dtype=np.int8)
        if self.adjacency.shape[0] != self.adjacency.shape[1]:
            raise DataError(f"meta-path adjacency must be square, got {self.adjacency.shape}")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def name(self) -> str:
        return self.metapath.name

    def undirected_edges(self) -> np.ndarray:
        """Off-diagonal undirected edge list as (E, 2) pairs with u < v."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


def _oriented_signature(graph: HeteroGraph, step: MetaPathStep) -> tuple[str, str]:
    rel = graph.relation(step.relation)
    return (rel.dst_type, rel.src_type) if step.reverse else (rel.src_type, rel.dst_type)


def validate_metapath(graph: HeteroGraph, spec: MetaPathSpec) -> None:
    """Type-check a meta-path; raises MetaPathError naming the first bad position."""
    if not spec.steps:
        raise MetaPathError(f"{spec.name}: empty meta-path")
    sigs = [_oriented_signature(graph, s) for s in spec.steps]
    first_src = sigs[0][0]
    if first_src != graph.target_type:
        raise MetaPathError(
            f"{spec.name}: starts at type {first_src!r}, expected target type {graph.target_type!r}"
        )
    for i in range(1, len(sigs)):
        prev_dst = sigs[i - 1][1]
        cur_src = sigs[i][0]
        if prev_dst != cur_src:
            raise MetaPathError(
                f"{spec.name}: not composable at position {i} ({prev_dst!r} != {cur_src!r})"
            )
    last_dst = sigs[-1][1]
    if last_dst != graph.target_type:
        raise MetaPathError(
            f"{spec.name}: ends at type {last_dst!r}, expected target type {graph.target_type!r}"
        )


def compose_metapath(graph: HeteroGraph, spec: MetaPathSpec) -> MetaPathGraph:
    """Boolean reachability along the oriented relation chain, symmetrized.

    Computed as a chain of sparse boolean matrix products thresholded at >= 1;
    path counts are discarded.  The result is unioned with its transpose so
    inherently symmetric meta-paths are unchanged and directed single-relation
    ones become undirected.
    """
    validate_metapath(graph, spec)
    product = None
    for step in spec.steps:
        mat = graph.relation_matrix(step.relation, step.reverse).astype(np.int64)
        product = mat if product is None else product @ mat
        product.data[:] = 1  # boolean semantics, guard against count overflow
        product.eliminate_zeros()
    sym = product + product.T
    sym.data[:] = 1
    sym.eliminate_zeros()
    return MetaPathGraph(metapath=spec, adjacency=sym.astype(np.int8))


def metapath_neighbors(mpg: MetaPathGraph, v: int) -> set[int]:
    """Nodes connected to v through the meta-path; always includes v itself."""
    n = mpg.num_nodes
    if not (0 <= v < n):
        raise IndexError(f"node index {v} out of range for {n} nodes")
    row = mpg.adjacency.getrow(v)
    return set(row.indices.tolist()) | {v}
