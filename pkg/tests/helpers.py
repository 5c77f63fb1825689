"""Shared test oracles: finite differences and brute-force references."""

from __future__ import annotations

import numpy as np

from hemi.tensor import Tensor


def finite_difference(loss_fn, params: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar loss w.r.t. each parameter.

    loss_fn rebuilds the forward pass from current parameter data and
    returns a float; parameters are perturbed in place and restored.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss_fn()
            flat[i] = original - h
            down = loss_fn()
            flat[i] = original
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(loss_builder, params: list[Tensor]) -> list[np.ndarray]:
    """Run one forward/backward pass and collect .grad per parameter."""
    for p in params:
        p.grad = None
    loss = loss_builder()
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def assert_grads_match(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-7, names=None):
    for i, (a, f) in enumerate(zip(analytic, numeric)):
        label = names[i] if names else f"param {i}"
        np.testing.assert_allclose(a, f, rtol=rtol, atol=atol, err_msg=f"gradient mismatch for {label}")


def enumerate_metapath_pairs(graph, spec) -> set[tuple[int, int]]:
    """Brute-force oracle: walk every oriented relation-sequence instance.

    Returns the set of (start, end) target pairs connected by at least one
    path, before symmetrization.
    """
    # Forward/backward adjacency lists per relation.
    successors = {}
    for rel in graph.relations:
        pairs = graph.edges[rel.name]
        fwd: dict[int, list[int]] = {}
        rev: dict[int, list[int]] = {}
        for s, d in pairs:
            fwd.setdefault(int(s), []).append(int(d))
            rev.setdefault(int(d), []).append(int(s))
        successors[(rel.name, False)] = fwd
        successors[(rel.name, True)] = rev

    n = graph.num_targets
    found = set()
    for start in range(n):
        frontier = {start}
        for step in spec.steps:
            table = successors[(step.relation, step.reverse)]
            frontier = {nxt for cur in frontier for nxt in table.get(cur, [])}
            if not frontier:
                break
        for end in frontier:
            found.add((start, end))
    return found


def brute_force_auc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    wins = 0.0
    for p in scores_pos:
        for q in scores_neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(scores_pos) * len(scores_neg))


def step_function_ap(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Area under the precision-recall step function (standard AP).

    AP = sum over ranks with a positive of (recall step) * (precision at
    that rank), scanning scores in descending order; ties are broken by
    treating equal scores as one threshold group.
    """
    scores = np.concatenate([scores_pos, scores_neg])
    labels = np.concatenate([np.ones(len(scores_pos)), np.zeros(len(scores_neg))])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    n_pos = labels.sum()
    ap = 0.0
    tp = fp = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[j] == scores[i]:
            j += 1
        tp += labels[i:j].sum()
        fp += (j - i) - labels[i:j].sum()
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return ap
