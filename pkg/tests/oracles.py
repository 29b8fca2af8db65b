"""Independent brute-force oracles for the evaluation metrics.

The production matcher is greedy over keyed predictions; these oracles
solve the same problem as maximum bipartite matching over an exact-equality
compatibility graph, so agreement is meaningful evidence rather than the
same algorithm written twice.
"""

from __future__ import annotations

import networkx as nx


def _max_matching_counts(pred_items: list, gold_items: list) -> tuple[int, int, int]:
    graph = nx.Graph()
    pred_nodes = [("p", i) for i in range(len(pred_items))]
    gold_nodes = [("g", j) for j in range(len(gold_items))]
    graph.add_nodes_from(pred_nodes)
    graph.add_nodes_from(gold_nodes)
    for i, p in enumerate(pred_items):
        for j, g in enumerate(gold_items):
            if p == g:
                graph.add_edge(("p", i), ("g", j))
    matching = nx.max_weight_matching(graph, maxcardinality=True)
    tp = len(matching)
    return tp, len(pred_items) - tp, len(gold_items) - tp


def oracle_text_counts(pred_items: list, gold_items: list) -> tuple[int, int, int]:
    """Items are (key, question_id_set, solution_id_set) triples."""
    return _max_matching_counts(
        [(k, frozenset(q), frozenset(s)) for k, q, s in pred_items],
        [(k, frozenset(q), frozenset(s)) for k, q, s in gold_items],
    )


def oracle_vision_counts(pred_placements: list, gold_placements: list) -> tuple[int, int, int]:
    """Placements are (image_ref, owner_key, slot) triples; multiset matching."""
    return _max_matching_counts(list(pred_placements), list(gold_placements))


def oracle_metrics(tp: int, fp: int, fn: int) -> tuple[float | None, float | None, float]:
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1
