import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from transher.data import KnowledgeGraph, save_dataset  # noqa: E402
from transher.model import ModelParameters  # noqa: E402

TOY_TRIPLES = [
    ("a", "r1", "b"), ("b", "r1", "c"), ("c", "r1", "d"), ("d", "r1", "e"),
    ("a", "r2", "c"), ("b", "r2", "d"), ("c", "r2", "e"), ("e", "r2", "a"),
]


@pytest.fixture
def toy_graph():
    return KnowledgeGraph.from_triples(TOY_TRIPLES)


@pytest.fixture
def toy_dir(tmp_path, toy_graph):
    path = tmp_path / "toy"
    save_dataset(toy_graph, str(path))
    return path


def random_params(rng, variant="transher", dim=4, num_entities=10, num_relations=3,
                  gamma=None, norm_range=(0.5, 2.0)):
    gamma = float(rng.uniform(0, 8)) if gamma is None else gamma
    params = ModelParameters(variant, dim, gamma, num_entities, num_relations)
    for name, mat in params.matrices.items():
        mat[...] = rng.normal(size=mat.shape)
    E = params.matrices["E"]
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    E *= rng.uniform(*norm_range, size=(num_entities, 1))
    return params


def random_graph(rng, num_entities, num_relations, num_triples):
    triples = set()
    while len(triples) < num_triples:
        triples.add((int(rng.integers(num_entities)), int(rng.integers(num_relations)),
                     int(rng.integers(num_entities))))
    triples = sorted(triples)
    rng.shuffle(triples)
    n_test = max(1, num_triples // 5)
    ent = {f"e{i}": i for i in range(num_entities)}
    rel = {f"r{i}": i for i in range(num_relations)}
    return KnowledgeGraph(ent, rel, triples[2 * n_test:], triples[n_test:2 * n_test],
                          triples[:n_test])
