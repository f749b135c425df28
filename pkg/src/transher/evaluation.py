"""Link-prediction ranking: filtered full ranking, candidate-list ranking, MRR/HIT@N."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import CATEGORIES, CandidateList
from .model import ModelParameters, score_all, score_batch, unit_rows

DIRECTIONS = ("head", "tail")
HITS_AT = (1, 3, 10)


def tie_rank(true_score: float, other_scores: np.ndarray) -> float:
    """Rank of ``true_score`` among itself and ``other_scores``, ties at their mean position."""
    better = int(np.count_nonzero(other_scores > true_score))
    ties = int(np.count_nonzero(other_scores == true_score))
    return better + 1 + ties / 2.0


def known_mask(graph, triple, direction: str) -> np.ndarray:
    """Boolean mask over entities: completions forming a known fact, excluding the query's own answer."""
    h, r, t = (int(x) for x in triple)
    ents = np.arange(graph.num_entities)
    if direction == "tail":
        mask = graph.filter_index.contains(h, r, ents)
        mask[t] = False
    else:
        mask = graph.filter_index.contains(ents, r, t)
        mask[h] = False
    return mask


def rank_full(params: ModelParameters, graph, triple, direction: str,
              unit_entities: Optional[np.ndarray] = None) -> float:
    h, r, t = (int(x) for x in triple)
    anchor, answer = (h, t) if direction == "tail" else (t, h)
    scores = score_all(params, anchor, r, direction, unit_entities)
    keep = ~known_mask(graph, triple, direction)
    keep[answer] = False
    return tie_rank(scores[answer], scores[keep])


def rank_partial(params: ModelParameters, triple, direction: str, candidates: CandidateList,
                 index: int) -> float:
    cands = candidates.get(index, direction)
    answer = int(triple[2] if direction == "tail" else triple[0])
    scores = score_batch(params, triple, np.concatenate([[answer], cands]), direction)
    return tie_rank(scores[0], scores[1:])


def metrics(ranks) -> Dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return {"mrr": float("nan"), **{f"hits@{n}": float("nan") for n in HITS_AT}, "count": 0}
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for n in HITS_AT:
        out[f"hits@{n}"] = float(np.mean(ranks <= n))
    out["count"] = int(ranks.size)
    return out


@dataclass
class RankingReport:
    split: str
    protocol: str
    overall: Dict[str, float]
    by_direction: Dict[str, Dict[str, float]]
    # (category, direction) with direction in {"head", "tail", "both"}
    by_type: Dict[Tuple[str, str], Dict[str, float]]
    ranks: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "protocol": self.protocol,
            "overall": self.overall,
            "by_direction": self.by_direction,
            "by_type": {f"{c}/{d}": m for (c, d), m in self.by_type.items()},
        }

    def to_json(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def rows(self):
        """Flat rows: split, direction, relation_type, metric, value, count."""
        cells = [("both", "all", self.overall)]
        cells += [(d, "all", m) for d, m in self.by_direction.items()]
        cells += [(d, c, m) for (c, d), m in self.by_type.items()]
        for direction, rtype, m in cells:
            for key in ("mrr",) + tuple(f"hits@{n}" for n in HITS_AT):
                yield (self.split, direction, rtype, key, m[key], m["count"])

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("split", "direction", "relation_type", "metric", "value", "count"))
            writer.writerows(self.rows())

    def summary(self) -> str:
        o = self.overall
        return (f"{self.split} ({self.protocol}): MRR {o['mrr']:.4f}  HIT@1 {o['hits@1']:.4f}  "
                f"HIT@3 {o['hits@3']:.4f}  HIT@10 {o['hits@10']:.4f}  (n={o['count']})")


def evaluate(params: ModelParameters, graph, protocol: str = "full",
             candidates: Optional[CandidateList] = None, split: str = "test",
             workers: int = 1) -> RankingReport:
    """Rank every triple of ``split`` in both directions and aggregate metrics."""
    if protocol not in ("full", "partial"):
        raise ValueError(f"protocol must be 'full' or 'partial', got {protocol!r}")
    if protocol == "partial" and candidates is None:
        raise ValueError("partial-ranking protocol needs a candidate list")
    triples = graph.split(split)
    unit_entities = unit_rows(params.matrices["E"])[0] if protocol == "full" else None

    def rank_one(job):
        i, direction = job
        if protocol == "full":
            return rank_full(params, graph, triples[i], direction, unit_entities)
        return rank_partial(params, triples[i], direction, candidates, i)

    ranks = {}
    for direction in DIRECTIONS:
        jobs = [(i, direction) for i in range(len(triples))]
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                ranks[direction] = np.array(list(pool.map(rank_one, jobs)), dtype=np.float64)
        else:
            ranks[direction] = np.array([rank_one(j) for j in jobs], dtype=np.float64)

    both = np.concatenate([ranks["head"], ranks["tail"]])
    cats = np.array([graph.relation_types.categories[r] or "undefined" for r in triples[:, 1]],
                    dtype=object)
    by_type = {}
    for c in CATEGORIES:
        sel = cats == c
        for d in DIRECTIONS:
            by_type[(c, d)] = metrics(ranks[d][sel])
        by_type[(c, "both")] = metrics(np.concatenate([ranks["head"][sel], ranks["tail"][sel]]))
    return RankingReport(split, protocol, metrics(both),
                         {d: metrics(ranks[d]) for d in DIRECTIONS}, by_type, ranks)


def top_k(params: ModelParameters, graph, entity: int, relation: int, direction: str, k: int,
          filter_known: bool = False) -> List[Tuple[int, float]]:
    """Highest-scoring completions of ``(entity, relation, ?)`` (tail) or ``(?, relation, entity)`` (head).

    Ties are ordered by ascending entity id. With ``filter_known`` every
    completion that is already a known fact is dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = score_all(params, entity, relation, direction)
    ids = np.arange(graph.num_entities)
    if filter_known:
        if direction == "tail":
            keep = ~graph.filter_index.contains(entity, relation, ids)
        else:
            keep = ~graph.filter_index.contains(ids, relation, entity)
        ids, scores = ids[keep], scores[keep]
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[i]), float(scores[i])) for i in order]
