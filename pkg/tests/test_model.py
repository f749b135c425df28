import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transher.model import (ModelParameters, NumericError, gradients, load_checkpoint, map_head,
                            map_tail, save_checkpoint, score, score_batch, score_triples)

from conftest import random_params
from oracles import finite_difference_grad, ref_params_score, relative_error


def two_dim(e_rows, rh=None, rt=None, b=None, gamma=6.0):
    p = ModelParameters("transher", 2, gamma, len(e_rows), 1)
    p.matrices["E"][:] = e_rows
    p.matrices["RH"][0] = rh if rh is not None else (1.0, 1.0)
    p.matrices["RT"][0] = rt if rt is not None else (1.0, 1.0)
    p.matrices["B"][0] = b if b is not None else (0.0, 0.0)
    return p


def test_map_head_three_four_five():
    p = two_dim([(3.0, 4.0)])
    np.testing.assert_allclose(map_head(p, 0, 0), [0.6, 0.8], atol=1e-15)


def test_map_tail_axis_aligned():
    p = two_dim([(0.0, 5.0)], rt=(2.0, 2.0))
    np.testing.assert_allclose(map_tail(p, 0, 0), [0.0, 2.0], atol=1e-15)


def test_map_tail_equals_map_head_for_equal_vectors():
    rng = np.random.default_rng(0)
    p = random_params(rng, dim=6)
    p.matrices["RT"][1] = p.matrices["RH"][1]
    np.testing.assert_array_equal(map_head(p, 1, 3), map_tail(p, 1, 3))


def test_ones_relation_maps_to_unit_sphere():
    rng = np.random.default_rng(1)
    p = random_params(rng, dim=16)
    p.matrices["RH"][0] = 1.0
    for e in range(p.num_entities):
        assert np.linalg.norm(map_head(p, 0, e)) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("k", [4, 8])
def test_map_matches_elementwise_recomputation(k):
    rng = np.random.default_rng(k)
    p = random_params(rng, dim=k)
    e, r = 2, 1
    row = p.matrices["E"][e]
    norm = math.sqrt(sum(x * x for x in row))
    expected_h = [p.matrices["RH"][r][d] * row[d] / norm for d in range(k)]
    expected_t = [p.matrices["RT"][r][d] * row[d] / norm for d in range(k)]
    np.testing.assert_allclose(map_head(p, r, e), expected_h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(map_tail(p, r, e), expected_t, rtol=0, atol=1e-12)


def test_zero_norm_entity_raises():
    p = two_dim([(0.0, 0.0), (1.0, 0.0)])
    with pytest.raises(NumericError):
        map_head(p, 0, 0)


def test_score_hand_arithmetic():
    s = math.sqrt(2) / 2
    p = two_dim([(3.0, 4.0), (1.0, 1.0)], rh=(1.0, 1.0), rt=(s, s), b=(0.1, -0.1))
    # 6 - (|0.6 + 0.1 - 0.5| + |0.8 - 0.1 - 0.5|)
    assert score(p, (0, 0, 1)) == pytest.approx(5.6, abs=1e-12)


def test_zero_distance_scores_gamma():
    rng = np.random.default_rng(2)
    p = random_params(rng, dim=5)
    h, r, t = 0, 1, 4
    p.matrices["B"][r] = map_tail(p, r, t) - map_head(p, r, h)
    assert score(p, (h, r, t)) == pytest.approx(p.gamma, abs=1e-14)


def test_transher_reduces_to_pairre_bitwise():
    rng = np.random.default_rng(3)
    t = random_params(rng, dim=7)
    t.matrices["B"][:] = 0.0
    p = ModelParameters("pairre", 7, t.gamma, t.num_entities, t.num_relations,
                        {n: t.matrices[n].copy() for n in ("E", "RH", "RT")})
    triples = np.stack([rng.integers(0, 10, 200), rng.integers(0, 3, 200),
                        rng.integers(0, 10, 200)], axis=1)
    for tr in triples:
        assert score(t, tr) == score(p, tr)


def test_transe_uses_only_rh():
    p = ModelParameters("transe", 3, 1.0, 4, 2)
    assert set(p.matrices) == {"E", "RH"}
    p.matrices["E"][:] = np.eye(4, 3) + 0.1
    p.matrices["RH"][0] = (0.3, -0.2, 0.1)
    hu = p.matrices["E"][0] / np.linalg.norm(p.matrices["E"][0])
    tu = p.matrices["E"][1] / np.linalg.norm(p.matrices["E"][1])
    assert score(p, (0, 0, 1)) == pytest.approx(1.0 - np.abs(hu + p.matrices["RH"][0] - tu).sum())


def test_score_batch_single_candidate_and_empty():
    rng = np.random.default_rng(4)
    p = random_params(rng)
    pos = (1, 2, 3)
    assert score_batch(p, pos, [3], "tail")[0] == pytest.approx(score(p, pos), abs=1e-15)
    assert score_batch(p, pos, [1], "head")[0] == pytest.approx(score(p, pos), abs=1e-15)
    assert score_batch(p, pos, [], "tail").shape == (0,)


@pytest.mark.parametrize("variant", ["transher", "pairre", "transe"])
@pytest.mark.parametrize("direction", ["head", "tail"])
def test_score_batch_matches_single_scores(variant, direction):
    rng = np.random.default_rng(5)
    p = random_params(rng, variant=variant, dim=8, num_entities=600)
    pos = (10, 1, 20)
    cands = rng.integers(0, 600, 500)
    batch = score_batch(p, pos, cands, direction)
    assert batch.shape == (500,)
    for c, s in zip(cands, batch):
        trip = (c, 1, 20) if direction == "head" else (10, 1, c)
        assert abs(s - score(p, trip)) < 1e-12


def test_hyper_ellipsoid_restriction():
    rng = np.random.default_rng(6)
    p = random_params(rng, dim=10)
    for e in range(p.num_entities):
        z = map_head(p, 0, e)
        assert np.sum((z / p.matrices["RH"][0]) ** 2) == pytest.approx(1.0, abs=1e-12)
    # a zero scale collapses that axis; the remaining axes carry the rest of the unit norm
    p.matrices["RH"][0, 3] = 0.0
    for e in range(p.num_entities):
        z = map_head(p, 0, e)
        nz = p.matrices["RH"][0] != 0
        unit = p.matrices["E"][e] / np.linalg.norm(p.matrices["E"][e])
        assert z[3] == 0.0
        assert np.sum((z[nz] / p.matrices["RH"][0][nz]) ** 2) + unit[3] ** 2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("c", [0.1, 1.0, 10.0])
def test_scale_invariance(c):
    rng = np.random.default_rng(7)
    p = random_params(rng, dim=9)
    triples = np.stack([rng.integers(0, 10, 50), rng.integers(0, 3, 50),
                        rng.integers(0, 10, 50)], axis=1)
    before = score_triples(p, triples)
    p.matrices["E"][4] *= c
    np.testing.assert_allclose(score_triples(p, triples), before, rtol=0, atol=1e-10)


def test_monotone_in_distance():
    rng = np.random.default_rng(8)
    p = random_params(rng, dim=4)
    base = score(p, (0, 0, 1))
    d = map_head(p, 0, 0) + p.matrices["B"][0] - map_tail(p, 0, 1)
    for axis in range(4):
        q = p.copy()
        # push the residual further from zero along one axis
        q.matrices["B"][0, axis] += 0.5 * (1.0 if d[axis] >= 0 else -1.0)
        assert score(q, (0, 0, 1)) < base


@pytest.mark.parametrize("variant", ["transher", "pairre", "transe"])
@pytest.mark.parametrize("direction", ["head", "tail"])
def test_gradients_match_finite_differences(variant, direction):
    rng = np.random.default_rng(9)
    p = random_params(rng, variant=variant, dim=3, num_entities=8, num_relations=2)
    pos, negs = (0, 1, 5), [2, 6]
    _, grad = gradients(p, pos, negs, direction, alpha=0.7)
    numeric = finite_difference_grad(p, pos, negs, direction, 0.7)
    for name, mat in p.matrices.items():
        analytic = grad.dense(name, mat.shape)
        assert relative_error(analytic, numeric[name]).max() < 1e-4, name


def test_gradients_touch_only_batch_rows():
    rng = np.random.default_rng(10)
    p = random_params(rng, dim=4, num_entities=20, num_relations=5)
    _, grad = gradients(p, (1, 2, 3), [7, 9], "tail")
    assert set(grad.rows["E"].tolist()) == {1, 3, 7, 9}
    for name in ("RH", "RT", "B"):
        assert grad.rows[name].tolist() == [2]


def test_duplicate_negative_gradient_is_sum_of_occurrences():
    rng = np.random.default_rng(11)
    p = random_params(rng, dim=5, num_entities=6)
    # entity 5 is an exact copy of entity 2, standing in for the second occurrence
    p.matrices["E"][5] = p.matrices["E"][2]
    _, dup = gradients(p, (0, 1, 3), [2, 4, 2], "tail", alpha=0.5)
    _, split = gradients(p, (0, 1, 3), [2, 4, 5], "tail", alpha=0.5)
    dense_dup = dup.dense("E", p.matrices["E"].shape)
    dense_split = split.dense("E", p.matrices["E"].shape)
    np.testing.assert_allclose(dense_dup[2], dense_split[2] + dense_split[5], atol=1e-14)


def test_saturated_loss_is_stationary():
    p = ModelParameters("transher", 2, 60.0, 3, 1)
    p.matrices["E"][:] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)]
    p.matrices["RH"][0] = (1.0, 1.0)
    p.matrices["RT"][0] = (100.0, 100.0)
    # positive (0, 0, 1) has distance 0; negative (0, 0, 2) has distance ~200
    p.matrices["B"][0] = map_tail(p, 0, 1) - map_head(p, 0, 0)
    loss, grad = gradients(p, (0, 0, 1), [2], "tail")
    assert loss < 1e-20
    total = sum(float(np.abs(v).sum()) for v in grad.values.values())
    assert total < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), variant=st.sampled_from(["transher", "pairre", "transe"]),
       n_neg=st.integers(1, 6), direction=st.sampled_from(["head", "tail"]),
       alpha=st.floats(0.0, 2.0))
def test_gradient_property(seed, variant, n_neg, direction, alpha):
    rng = np.random.default_rng(seed)
    p = random_params(rng, variant=variant, dim=3, num_entities=6, num_relations=2,
                      gamma=float(rng.uniform(0, 4)))
    pos = tuple(int(x) for x in (rng.integers(6), rng.integers(2), rng.integers(6)))
    negs = rng.integers(0, 6, n_neg)
    _, grad = gradients(p, pos, negs, direction, alpha)
    numeric = finite_difference_grad(p, pos, negs, direction, alpha)
    for name, mat in p.matrices.items():
        assert relative_error(grad.dense(name, mat.shape), numeric[name]).max() < 1e-4


@pytest.mark.parametrize("variant", ["transher", "pairre", "transe"])
def test_checkpoint_round_trip_and_layout(tmp_path, variant):
    rng = np.random.default_rng(12)
    p = random_params(rng, variant=variant, dim=3, num_entities=4, num_relations=2)
    save_checkpoint(p, str(tmp_path), "abc123")
    raw = (tmp_path / "E.bin").read_bytes()
    assert len(raw) == 4 * 3 * 8
    # first 8 bytes: E[0, 0] as little-endian float64
    assert np.frombuffer(raw[:8], dtype="<f8")[0] == p.matrices["E"][0, 0]
    assert np.frombuffer(raw[8:16], dtype="<f8")[0] == p.matrices["E"][0, 1]
    q, manifest, _ = load_checkpoint(str(tmp_path), expected_fingerprint="abc123")
    assert manifest["byte_order"] == "little" and manifest["layout"] == "row-major"
    for name in p.matrices:
        np.testing.assert_array_equal(q.matrices[name], p.matrices[name])
    with pytest.raises(ValueError, match="abc123.*zzz|zzz.*abc123"):
        load_checkpoint(str(tmp_path), expected_fingerprint="zzz")


def test_score_matches_reference_oracle():
    rng = np.random.default_rng(13)
    for variant in ("transher", "pairre", "transe"):
        p = random_params(rng, variant=variant, dim=8)
        for _ in range(20):
            tr = (int(rng.integers(10)), int(rng.integers(3)), int(rng.integers(10)))
            assert abs(score(p, tr) - ref_params_score(p, tr)) < 1e-12
