import csv

import numpy as np
import pytest

from transher.analysis import (UnsupportedVariant, default_block_size, gradient_trace_export,
                               translation_heatmap, translation_l1_histogram)
from transher.data import RelationTypeTable
from transher.model import ModelParameters
from transher.training import GradientStats

from conftest import random_params


def types_for(cats):
    n = len(cats)
    return RelationTypeTable(np.ones(n), np.ones(n), list(cats))


def params_with_b(b_rows, variant="transher", gamma=6.0):
    b = np.asarray(b_rows, float)
    p = ModelParameters.allocate(variant, b.shape[1], gamma, 3, b.shape[0])
    if "B" in p.matrices:
        p.matrices["B"][:] = b
    return p


def test_block_sizes():
    assert default_block_size(1500) == 60
    assert default_block_size(500) == 20
    assert default_block_size(100) == 4


def test_heatmap_hand_case():
    p = params_with_b([[1.0, -1.0, 2.0, -2.0]])
    table = translation_heatmap(p, types_for(["1-1"]), block_size=2)
    np.testing.assert_array_equal(table.row("1-1"), [1.0, 2.0])
    assert np.isnan(table.row("N-N")).all()
    assert table.counts["1-1"] == 1


def test_heatmap_partial_block():
    p = params_with_b([[1.0, 1.0, 4.0]])
    table = translation_heatmap(p, types_for(["N-1"]), block_size=2)
    np.testing.assert_array_equal(table.row("N-1"), [1.0, 4.0])


def test_heatmap_zero_translation():
    p = params_with_b(np.zeros((4, 6)))
    table = translation_heatmap(p, types_for(["1-1", "1-N", "N-1", "N-N"]), block_size=3)
    assert (table.values == 0).all()


def test_heatmap_unsupported_variant():
    p = ModelParameters.allocate("pairre", 4, 6.0, 3, 2)
    with pytest.raises(UnsupportedVariant):
        translation_heatmap(p, types_for(["1-1", "N-N"]))
    with pytest.raises(UnsupportedVariant):
        translation_l1_histogram(p)


def test_heatmap_permutation_invariant():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(6, 8))
    cats = ["1-1", "1-N", "N-1", "N-N", "N-N", "1-1"]
    base = translation_heatmap(params_with_b(b), types_for(cats), block_size=3)
    perm = rng.permutation(6)
    other = translation_heatmap(params_with_b(b[perm]), types_for([cats[i] for i in perm]), block_size=3)
    np.testing.assert_allclose(base.values, other.values, rtol=1e-12)


def test_heatmap_csv(tmp_path):
    p = params_with_b([[1.0, -1.0, 2.0, -2.0]])
    path = tmp_path / "h.csv"
    translation_heatmap(p, types_for(["1-1"]), block_size=2).write_csv(str(path))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["relation_type", "relations", "block_0", "block_1"]
    assert rows[1][:4] == ["1-1", "1", "1.0", "2.0"]


def test_histogram_hand_cases():
    h = translation_l1_histogram(params_with_b([[3.0, -4.0]]))
    assert h.norms[0] == 7.0 and h.fraction_above_gamma == 1.0
    h = translation_l1_histogram(params_with_b(np.zeros((5, 2))))
    assert h.fraction_above_gamma == 0.0


def test_histogram_counts_sum():
    p = random_params(np.random.default_rng(1), "transher", 8, 10, 7)
    h = translation_l1_histogram(p, bins=5)
    assert h.counts.sum() == 7 and len(h.edges) == 6


def test_analysis_is_read_only():
    p = random_params(np.random.default_rng(2), "transher", 8, 10, 4)
    before = {k: v.tobytes() for k, v in p.matrices.items()}
    translation_heatmap(p, types_for(["1-1", "1-N", "N-1", None]), block_size=3)
    translation_l1_histogram(p)
    assert before == {k: v.tobytes() for k, v in p.matrices.items()}


def test_gradient_trace_empty(tmp_path):
    path = gradient_trace_export(GradientStats(), str(tmp_path / "g.csv"))
    rows = list(csv.reader(open(path)))
    assert rows == [["epoch", "entity_grad_std", "relation_grad_std", "translation_grad_std"]]


def test_gradient_trace_rows(tmp_path):
    stats = GradientStats()
    for e in range(10):
        stats.epochs.append(e)
        stats.entity_std.append(0.1 * e)
        stats.relation_std.append(0.2)
        stats.translation_std.append(0.3)
    rows = list(csv.reader(open(gradient_trace_export(stats, str(tmp_path / "g.csv")))))
    epochs = [int(r[0]) for r in rows[1:]]
    assert len(epochs) == 10 and epochs == sorted(epochs)
