import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transher.data import CandidateList, KnowledgeGraph
from transher.evaluation import (evaluate, metrics, rank_full, rank_partial, tie_rank, top_k)
from transher.model import ModelParameters, score_all

from conftest import random_graph, random_params
from oracles import brute_force_rank


def scored_graph(scores_by_tail, filtered_tails=(), true_tail=0):
    """One relation, head 0; entity rows arranged so tail scores follow ``scores_by_tail``.

    With rh = 0, B = 0 and rt = -1 on a single dimension the score of tail e
    is gamma - |u_e|; we place unit rows at chosen angles in 2-D.
    """
    n = len(scores_by_tail)
    ent = {f"e{i}": i for i in range(n)}
    train = [(n - 1, 0, t) for t in filtered_tails]
    g = KnowledgeGraph(ent, {"r": 0}, train, [], [(n - 1, 0, true_tail)])
    p = ModelParameters("transher", 2, 10.0, n, 1)
    p.matrices["RH"][0] = 0.0
    p.matrices["RT"][0] = (-1.0, 0.0)
    for e, s in enumerate(scores_by_tail):
        x = 10.0 - s          # required |cos|
        p.matrices["E"][e] = (x, np.sqrt(max(1 - x * x, 0.0)))
    return g, p


def test_tie_rank_policy():
    assert tie_rank(1.0, np.array([0.0, 0.5])) == 1.0
    assert tie_rank(1.0, np.array([2.0, 0.5])) == 2.0
    assert tie_rank(1.0, np.array([1.0, 1.0, 1.0])) == 2.5


def test_unique_max_ranks_first():
    g, p = scored_graph([9.9, 9.1, 9.2, 9.3, 9.4, 9.0], true_tail=0)
    assert rank_full(p, g, g.test[0], "tail") == 1.0


def test_filtered_competitor_is_excluded():
    # entity 1 outscores the truth (entity 0) but is a known tail of (e5, r, ?)
    scores = [9.5, 9.9, 9.1, 9.2, 9.7, 9.0]
    g, p = scored_graph(scores, filtered_tails=[1], true_tail=0)
    assert rank_full(p, g, g.test[0], "tail") == 2.0     # only entity 4 remains above
    assert brute_force_rank(p, g, g.test[0], "tail") == 2.0
    unfiltered = sorted(scores, reverse=True).index(9.5) + 1
    assert unfiltered == 3


def test_full_tie_gives_mean_rank():
    n = 7
    ent = {f"e{i}": i for i in range(n)}
    g = KnowledgeGraph(ent, {"r": 0}, [], [], [(0, 0, 3)])
    p = ModelParameters("transher", 3, 1.0, n, 1)
    p.matrices["E"][:] = 1.0
    assert rank_full(p, g, g.test[0], "tail") == (n + 1) / 2
    assert rank_full(p, g, g.test[0], "head") == (n + 1) / 2


def test_rank_partial_cases():
    rng = np.random.default_rng(0)
    p = random_params(rng, num_entities=600)
    triple = (3, 1, 7)
    empty = CandidateList({(0, "tail"): np.array([], dtype=np.int64)})
    assert rank_partial(p, triple, "tail", empty, 0) == 1.0
    with pytest.raises(KeyError, match="test triple 5"):
        rank_partial(p, triple, "head", empty, 5)

    cands = np.setdiff1d(np.arange(600), [7])[:500]
    # make the truth strictly best: translation closes the gap exactly
    unit = p["E"] / np.linalg.norm(p["E"], axis=1, keepdims=True)
    p.matrices["B"][1] = p["RT"][1] * unit[7] - p["RH"][1] * unit[3]
    c = CandidateList({(0, "tail"): cands})
    assert rank_partial(p, triple, "tail", c, 0) == 1.0
    assert rank_partial(p, triple, "tail", c, 0) <= 501

    ten = rng.choice(np.setdiff1d(np.arange(600), [7, 3]), 10, replace=False)
    p2 = random_params(np.random.default_rng(1), num_entities=600)
    c10 = CandidateList({(0, "head"): ten})
    pool_scores = [score_all(p2, 7, 1, "head")[e] for e in [3] + ten.tolist()]
    order = sorted(pool_scores, reverse=True)
    assert rank_partial(p2, triple, "head", c10, 0) == order.index(pool_scores[0]) + 1


def test_singleton_perfect_report():
    ent = {"a": 0, "b": 1}
    g = KnowledgeGraph(ent, {"r": 0}, [], [], [(0, 0, 1)])
    p = ModelParameters("transher", 2, 1.0, 2, 1)
    p.matrices["E"][:] = [(1.0, 0.0), (0.0, 1.0)]
    p.matrices["RH"][0] = 1.0
    p.matrices["RT"][0] = 1.0
    # tail: only the truth (b) or a far (a); head: likewise
    p.matrices["B"][0] = (-1.0, 1.0)
    report = evaluate(p, g)
    assert report.overall["mrr"] == 1.0
    assert all(report.overall[f"hits@{n}"] == 1.0 for n in (1, 3, 10))
    assert report.overall["count"] == 2


@pytest.mark.parametrize("seed", range(5))
def test_evaluate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(5, 40)), int(rng.integers(1, 6)), 60)
    p = random_params(rng, dim=4, num_entities=g.num_entities, num_relations=g.num_relations)
    # duplicate some entity rows to create exact ties
    p.matrices["E"][1] = p.matrices["E"][0]
    p.matrices["E"][3] = 2.5 * p.matrices["E"][2]
    report = evaluate(p, g)
    for d in ("head", "tail"):
        expected = [brute_force_rank(p, g, t, d) for t in g.test]
        np.testing.assert_array_equal(report.ranks[d], expected)


def test_report_invariants_and_serialization(tmp_path):
    rng = np.random.default_rng(3)
    g = random_graph(rng, 30, 4, 100)
    p = random_params(rng, dim=5, num_entities=30, num_relations=4)
    report = evaluate(p, g, workers=3)
    assert report.overall["count"] == 2 * len(g.test)
    cells = [report.overall, *report.by_direction.values(),
             *(m for m in report.by_type.values() if m["count"])]
    for m in cells:
        assert 0 < m["mrr"] <= 1
        assert m["hits@1"] <= m["hits@3"] <= m["hits@10"]
    assert sum(report.by_type[(c, "tail")]["count"] for c in ("1-1", "1-N", "N-1", "N-N")) == len(g.test)
    assert evaluate(p, g).ranks["head"].tolist() == report.ranks["head"].tolist()
    report.to_json(str(tmp_path / "r.json"))
    report.to_csv(str(tmp_path / "r.csv"))
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["overall"]["mrr"] == report.overall["mrr"]
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "split,direction,relation_type,metric,value,count"
    assert "test,both,all,mrr," in lines[1]


def test_full_rank_bounds():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 20, 2, 80)
    p = random_params(rng, dim=3, num_entities=20, num_relations=2)
    for t in g.test:
        h, r, tail = t
        filtered = sum((h, r, e) in g.filter_index for e in range(20) if e != tail)
        assert 1 <= rank_full(p, g, t, "tail") <= 20 - filtered


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 10), shift=st.floats(-5, 5))
def test_mrr_invariant_under_monotone_maps(seed, scale, shift):
    rng = np.random.default_rng(seed)
    true = rng.normal(size=30)
    others = [rng.normal(size=20) for _ in range(30)]
    f = lambda x: scale * np.asarray(x) ** 3 + shift  # noqa: E731
    base = metrics([tie_rank(t, o) for t, o in zip(true, others)])
    mapped = metrics([tie_rank(f(t), f(o)) for t, o in zip(true, others)])
    assert base == mapped


def test_top_k(toy_graph):
    rng = np.random.default_rng(6)
    p = random_params(rng, dim=4, num_entities=toy_graph.num_entities,
                      num_relations=toy_graph.num_relations)
    full = top_k(p, toy_graph, 0, 0, "tail", 100)
    assert len(full) == toy_graph.num_entities
    scores = [s for _, s in full]
    assert scores == sorted(scores, reverse=True)
    assert top_k(p, toy_graph, 0, 0, "tail", 2) == full[:2]
    filtered = top_k(p, toy_graph, 0, 0, "tail", 100, filter_known=True)
    assert 1 not in [e for e, _ in filtered]       # (a, r1, b) is known
    with pytest.raises(ValueError):
        top_k(p, toy_graph, 0, 0, "tail", 0)


def test_top_k_ties_by_ascending_id():
    ent = {f"e{i}": i for i in range(5)}
    g = KnowledgeGraph(ent, {"r": 0}, [], [], [])
    p = ModelParameters("pairre", 2, 1.0, 5, 1)
    p.matrices["E"][:] = 1.0
    assert [e for e, _ in top_k(p, g, 2, 0, "head", 5)] == [0, 1, 2, 3, 4]
