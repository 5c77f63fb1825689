"""Evaluators: probe, clustering, edge masking, link metrics, TSV output."""

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.metrics import average_precision_score, roc_auc_score

from hemi.errors import DataError
from hemi.evaluation import (
    MetricRow,
    SplitSpec,
    cluster_eval,
    edge_scores,
    link_eval,
    mask_edges,
    probe_classify,
    write_metrics_tsv,
)
from hemi.graph import MetaPathGraph, MetaPathSpec

from helpers import brute_force_auc, step_function_ap


def make_mpg(adjacency, name="mp"):
    return MetaPathGraph(metapath=MetaPathSpec.parse(name), adjacency=sp.csr_matrix(adjacency))


def block_adjacency(n=30, rng=None):
    """Two dense blocks plus a handful of cross edges."""
    rng = rng or np.random.default_rng(0)
    adj = np.zeros((n, n), dtype=np.int8)
    half = n // 2
    for block in (range(half), range(half, n)):
        for u in block:
            for v in block:
                if u < v and rng.random() < 0.6:
                    adj[u, v] = adj[v, u] = 1
    for _ in range(3):
        u, v = rng.integers(0, half), rng.integers(half, n)
        adj[u, v] = adj[v, u] = 1
    return adj


class TestProbeClassify:
    def test_linearly_separable_embeddings_are_perfect(self):
        rng = np.random.default_rng(1)
        z = np.concatenate([rng.normal(-5, 0.2, (40, 4)), rng.normal(5, 0.2, (40, 4))])
        labels = np.repeat([0, 1], 40)
        result = probe_classify(z, labels, SplitSpec(0.5, 0.2, 0.3, seed=0), repeats=3)
        assert result.micro_f1 == 1.0
        assert result.macro_f1 == 1.0

    def test_unrelated_labels_score_near_chance(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((300, 8))
        labels = np.repeat([0, 1, 2], 100)
        result = probe_classify(z, labels, SplitSpec(0.5, 0.2, 0.3, seed=1), repeats=10)
        assert abs(result.micro_f1 - 1 / 3) < 0.1

    def test_all_same_prediction_f1_values(self):
        # Collapsed predictions on balanced binary labels: micro 0.5 and the
        # predicted class gets F1 = 2/3 while the other gets 0, so macro 1/3.
        from sklearn.metrics import f1_score

        labels = np.repeat([0, 1], 10)
        pred = np.zeros(20, dtype=int)
        micro = f1_score(labels, pred, average="micro", zero_division=0)
        macro = f1_score(labels, pred, average="macro", zero_division=0)
        assert micro == 0.5
        np.testing.assert_allclose(macro, 1 / 3)

    def test_micro_f1_equals_accuracy_multiclass(self):
        from sklearn.metrics import f1_score

        rng = np.random.default_rng(3)
        for _ in range(20):
            y = rng.integers(0, 4, size=50)
            pred = rng.integers(0, 4, size=50)
            micro = f1_score(y, pred, average="micro", zero_division=0)
            assert abs(micro - (y == pred).mean()) < 1e-12

    def test_embeddings_not_mutated(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((40, 3))
        before = z.tobytes()
        probe_classify(z, rng.integers(0, 2, 40), SplitSpec(0.5, 0.2, 0.3, seed=0), repeats=2)
        assert z.tobytes() == before

    def test_class_absent_from_train_split_rejected(self):
        z = np.random.default_rng(5).standard_normal((20, 2))
        labels = np.zeros(20, dtype=int)
        labels[-1] = 1  # the rare class misses most splits
        with pytest.raises(DataError, match="absent"):
            probe_classify(z, labels, SplitSpec(0.2, 0.1, 0.1, seed=0), repeats=5)


class TestClusterEval:
    def test_perfect_clustering(self):
        rng = np.random.default_rng(0)
        z = np.concatenate([rng.normal(-10, 0.1, (20, 3)), rng.normal(10, 0.1, (20, 3))])
        labels = np.repeat([0, 1], 20)
        result = cluster_eval(z, labels, 2, seed=0)
        assert result.nmi == 1.0
        assert result.ari == 1.0

    def test_single_cluster_labels_zero_information(self):
        from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

        labels = np.repeat([0, 1], 10)
        pred = np.zeros(20, dtype=int)
        assert normalized_mutual_info_score(labels, pred) == 0.0
        assert adjusted_rand_score(labels, pred) == 0.0

    def test_label_permutation_invariance(self):
        from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

        labels = np.array([0, 0, 1, 1])
        flipped = np.array([1, 1, 0, 0])
        assert normalized_mutual_info_score(labels, flipped) == 1.0
        assert adjusted_rand_score(labels, flipped) == 1.0

    def test_k_exceeding_nodes_rejected(self):
        with pytest.raises(DataError):
            cluster_eval(np.zeros((3, 2)), np.array([0, 1, 0]), 5)


class TestMaskEdges:
    def test_counts_on_100_edge_graph(self):
        # Node count chosen so the block graph carries exactly 100 edges is
        # fiddly; instead build a ring-ish graph with exactly 100 edges.
        n = 100
        adj = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = 1
        mpg = make_mpg(adj)
        assert len(mpg.undirected_edges()) == 100
        mask = mask_edges([mpg], 0.45, 0.05, seed=0).per_path["mp"]
        assert len(mask.test_pos) == 45
        assert len(mask.val_pos) == 5
        assert len(mask.test_neg) == 45
        assert len(mask.val_neg) == 5
        assert len(mask.residual.undirected_edges()) == 50

    def test_partition_property(self):
        adj = block_adjacency()
        mpg = make_mpg(adj)
        original = {tuple(e) for e in mpg.undirected_edges()}
        mask = mask_edges([mpg], 0.45, 0.05, seed=3).per_path["mp"]
        held = {tuple(e) for e in mask.test_pos} | {tuple(e) for e in mask.val_pos}
        residual = {tuple(e) for e in mask.residual.undirected_edges()}
        assert held | residual == original
        assert held & residual == set()

    def test_negatives_are_nonedges_and_not_self_pairs(self):
        adj = block_adjacency()
        mpg = make_mpg(adj)
        mask = mask_edges([mpg], 0.45, 0.05, seed=1).per_path["mp"]
        edges = {tuple(e) for e in mpg.undirected_edges()}
        for pairs in (mask.test_neg, mask.val_neg):
            for u, v in pairs:
                assert u < v
                assert (u, v) not in edges

    def test_deterministic_given_seed(self):
        adj = block_adjacency()
        m1 = mask_edges([make_mpg(adj)], seed=7).per_path["mp"]
        m2 = mask_edges([make_mpg(adj)], seed=7).per_path["mp"]
        np.testing.assert_array_equal(m1.test_pos, m2.test_pos)
        np.testing.assert_array_equal(m1.test_neg, m2.test_neg)
        np.testing.assert_array_equal(
            m1.residual.adjacency.toarray(), m2.residual.adjacency.toarray()
        )

    def test_too_few_edges_rejected(self):
        adj = np.zeros((10, 10), dtype=np.int8)
        adj[0, 1] = adj[1, 0] = 1
        with pytest.raises(DataError, match="edges"):
            mask_edges([make_mpg(adj)])

    def test_self_loops_stay_in_residual(self):
        adj = block_adjacency()
        np.fill_diagonal(adj, 1)
        mask = mask_edges([make_mpg(adj)], seed=0).per_path["mp"]
        assert np.all(mask.residual.adjacency.diagonal() == 1)


class TestLinkEval:
    def test_perfect_separation(self):
        z = np.zeros((4, 2))
        z[0] = z[1] = [3.0, 0.0]
        z[2] = [-3.0, 0.0]
        z[3] = [0.0, -3.0]
        mask = _mask_from_pairs(pos=[(0, 1)], neg=[(0, 2), (0, 3)])
        result = link_eval(z, mask)
        assert result.auc == 1.0
        assert result.ap == 1.0

    def test_constant_scores_give_half_auc(self):
        z = np.zeros((6, 2))
        mask = _mask_from_pairs(pos=[(0, 1), (2, 3)], neg=[(0, 2), (1, 3)])
        assert link_eval(z, mask).auc == 0.5

    def test_hand_worked_auc_and_ap(self):
        # Positives scored {0.9, 0.8}, negatives {0.85, 0.1}: 3 of 4
        # (positive, negative) pairs are ordered correctly so AUC = 0.75;
        # precision steps at the positives are 1 and 2/3 so AP = 5/6.
        pos_scores = np.array([0.9, 0.8])
        neg_scores = np.array([0.85, 0.1])
        assert brute_force_auc(pos_scores, neg_scores) == 0.75
        np.testing.assert_allclose(step_function_ap(pos_scores, neg_scores), 5 / 6)
        y = np.array([1, 1, 0, 0])
        s = np.concatenate([pos_scores, neg_scores])
        assert roc_auc_score(y, s) == 0.75
        np.testing.assert_allclose(average_precision_score(y, s), 5 / 6)

    def test_rank_auc_equals_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n_pos = int(rng.integers(1, 100))
            n_neg = int(rng.integers(1, 100))
            pos = np.round(rng.random(n_pos), 1)  # coarse grid forces ties
            neg = np.round(rng.random(n_neg), 1)
            y = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
            s = np.concatenate([pos, neg])
            np.testing.assert_allclose(roc_auc_score(y, s), brute_force_auc(pos, neg), atol=1e-12)

    def test_per_path_and_macro_average(self):
        z = np.array([[2.0, 0.0], [2.0, 0.0], [-2.0, 0.0], [0.0, 0.0]])
        mask_a = _mask_from_pairs(pos=[(0, 1)], neg=[(0, 2)], name="a")
        mask_b = _mask_from_pairs(pos=[(0, 2)], neg=[(0, 1)], name="b")
        mask_a.per_path.update(mask_b.per_path)
        result = link_eval(z, mask_a)
        assert result.per_path["a"][0] == 1.0
        assert result.per_path["b"][0] == 0.0
        assert result.auc == 0.5

    def test_edge_scores_are_sigmoid_dot_products(self):
        z = np.array([[1.0, 2.0], [3.0, -1.0]])
        out = edge_scores(z, np.array([[0, 1]]))
        np.testing.assert_allclose(out, 1 / (1 + np.exp(-(1 * 3 + 2 * -1))))

    def test_empty_evaluation_sets_rejected(self):
        mask = _mask_from_pairs(pos=[(0, 1)], neg=[(0, 2)])
        mask.per_path["mp"].test_neg = np.zeros((0, 2), dtype=np.int64)
        with pytest.raises(DataError, match="empty"):
            link_eval(np.zeros((3, 2)), mask)


def _mask_from_pairs(pos, neg, name="mp"):
    from hemi.evaluation import EdgeMask, MetaPathMask

    n = 1 + max(max(u, v) for u, v in list(pos) + list(neg))
    adj = np.zeros((n, n), dtype=np.int8)
    for u, v in pos:
        adj[u, v] = adj[v, u] = 1
    return EdgeMask(
        per_path={
            name: MetaPathMask(
                name=name,
                test_pos=np.array(pos),
                test_neg=np.array(neg),
                val_pos=np.array(pos),
                val_neg=np.array(neg),
                residual=make_mpg(np.zeros((n, n), dtype=np.int8), name),
            )
        },
        seed=0,
    )


class TestMetricPermutationInvariance:
    def test_nmi_ari_invariant_under_relabeling(self):
        from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

        rng = np.random.default_rng(11)
        labels = rng.integers(0, 4, size=60)
        pred = rng.integers(0, 4, size=60)
        base_nmi = normalized_mutual_info_score(labels, pred)
        base_ari = adjusted_rand_score(labels, pred)
        for _ in range(50):
            relabel = rng.permutation(4)
            shuffled = relabel[pred]
            np.testing.assert_allclose(normalized_mutual_info_score(labels, shuffled), base_nmi, atol=1e-12)
            np.testing.assert_allclose(adjusted_rand_score(labels, shuffled), base_ari, atol=1e-12)


class TestMetricsTsv:
    def test_row_format(self, tmp_path):
        rows = [
            MetricRow("clustering", "nmi", "all", 0.75, 0.01),
            MetricRow("linkpred", "auc", "pa.~pa", 0.9),
        ]
        path = tmp_path / "metrics.tsv"
        write_metrics_tsv(path, rows)
        lines = path.read_text().strip().split("\n")
        assert lines[0].split("\t") == ["clustering", "nmi", "all", "0.75", "0.01"]
        assert lines[1].split("\t") == ["linkpred", "auc", "pa.~pa", "0.9", "0.0"]


class TestSplitSpec:
    def test_explicit_index_lists(self):
        spec = SplitSpec(train=[0, 1], val=[2], test=[3, 4])
        tr, va, te = spec.draw(5, np.random.default_rng(0))
        assert tr.tolist() == [0, 1] and va.tolist() == [2] and te.tolist() == [3, 4]

    def test_overlapping_lists_rejected(self):
        with pytest.raises(DataError):
            SplitSpec(train=[0, 1], val=[1], test=[2]).draw(3, np.random.default_rng(0))

    def test_fractions_disjoint(self):
        spec = SplitSpec(0.5, 0.2, 0.3, seed=0)
        tr, va, te = spec.draw(100, np.random.default_rng(0))
        joint = np.concatenate([tr, va, te])
        assert len(np.unique(joint)) == len(joint) == 100

    def test_bad_fractions_rejected(self):
        with pytest.raises(DataError):
            SplitSpec(0.9, 0.2, 0.2).draw(10, np.random.default_rng(0))
