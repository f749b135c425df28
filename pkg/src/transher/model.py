"""Embedding storage and score functions for TranSHER, PairRE and TransE.

All three variants share one computation::

    f = gamma - || rh * e_h/|e_h| + b - rt * e_t/|e_t| ||_1

TranSHER learns ``rh``, ``rt`` and ``b``; PairRE fixes ``b = 0``; TransE
fixes ``rh = rt = 1`` and learns the translation ``b`` (stored in ``RH``).
Entity rows are stored raw and normalized on every read.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

VARIANTS = ("transher", "pairre", "transe")
_MATRICES = {
    "transher": ("E", "RH", "RT", "B"),
    "pairre": ("E", "RH", "RT"),
    "transe": ("E", "RH"),
}
ZERO_NORM_FLOOR = 1e-12
CHECKPOINT_FORMAT = "transher-checkpoint/1"


class NumericError(ArithmeticError):
    """Non-finite values or undefined normalization."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows


def normalize_variant(name: str) -> str:
    key = name.lower()
    if key not in VARIANTS:
        raise ValueError(f"unknown model variant {name!r}; expected one of {VARIANTS}")
    return key


@dataclass
class ModelParameters:
    variant: str
    dim: int
    gamma: float
    num_entities: int
    num_relations: int
    matrices: Dict[str, np.ndarray] = field(default_factory=dict)
    dtype: type = np.float64

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.dim < 1:
            raise ValueError("embedding dimension must be positive")
        for name in self.matrix_names:
            if name not in self.matrices:
                rows = self.num_entities if name == "E" else self.num_relations
                self.matrices[name] = np.zeros((rows, self.dim), dtype=self.dtype)
        extra = set(self.matrices) - set(self.matrix_names)
        if extra:
            raise ValueError(f"{self.variant} does not use matrices {sorted(extra)}")

    @classmethod
    def allocate(cls, variant, dim, gamma, num_entities, num_relations, dtype=np.float64):
        return cls(variant, dim, gamma, num_entities, num_relations, dtype=dtype)

    @property
    def matrix_names(self) -> Sequence[str]:
        return _MATRICES[self.variant]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.matrices[name]

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.variant, self.dim, self.gamma, self.num_entities,
                               self.num_relations,
                               {k: v.copy() for k, v in self.matrices.items()}, self.dtype)

    def check_finite(self):
        for name, mat in self.matrices.items():
            bad = ~np.isfinite(mat).all(axis=1)
            if bad.any():
                raise NumericError(f"non-finite values in {name}", rows=np.flatnonzero(bad).tolist())

    def check_entity_floor(self):
        norms = np.linalg.norm(self.matrices["E"], axis=1)
        bad = norms < ZERO_NORM_FLOOR
        if bad.any():
            raise NumericError("entity rows below the zero-norm floor",
                               rows=np.flatnonzero(bad).tolist())

    def relation_parts(self, relations):
        """Return (rh, rt, b) row blocks for ``relations`` as used in the shared formula."""
        relations = np.asarray(relations)
        shape = relations.shape + (self.dim,)
        if self.variant == "transe":
            ones = np.ones(shape, dtype=self.dtype)
            return ones, ones, self.matrices["RH"][relations]
        rh = self.matrices["RH"][relations]
        rt = self.matrices["RT"][relations]
        if self.variant == "pairre":
            return rh, rt, np.zeros(shape, dtype=self.dtype)
        return rh, rt, self.matrices["B"][relations]


def unit_rows(x: np.ndarray):
    """Return (x / |x|, |x|) along the last axis."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < ZERO_NORM_FLOOR):
        raise NumericError("zero-norm entity row; normalization undefined")
    return x / norms, norms


def _check_ids(params: ModelParameters, relation=None, entities=()):
    if relation is not None and not np.all((0 <= np.asarray(relation)) & (np.asarray(relation) < params.num_relations)):
        raise IndexError(f"relation id out of range: {relation}")
    for e in entities:
        e = np.asarray(e)
        if e.size and not np.all((0 <= e) & (e < params.num_entities)):
            raise IndexError("entity id out of range")


def map_head(params: ModelParameters, relation: int, entity: int) -> np.ndarray:
    _check_ids(params, relation, [entity])
    rh, _, _ = params.relation_parts(relation)
    unit, _ = unit_rows(params.matrices["E"][entity])
    return rh * unit


def map_tail(params: ModelParameters, relation: int, entity: int) -> np.ndarray:
    _check_ids(params, relation, [entity])
    _, rt, _ = params.relation_parts(relation)
    unit, _ = unit_rows(params.matrices["E"][entity])
    return rt * unit


def score(params: ModelParameters, triple) -> float:
    h, r, t = (int(x) for x in triple)
    _check_ids(params, r, [h, t])
    rh, rt, b = params.relation_parts(r)
    E = params.matrices["E"]
    hu, _ = unit_rows(E[h])
    tu, _ = unit_rows(E[t])
    return float(params.gamma - np.abs(rh * hu + b - rt * tu).sum())


def score_triples(params: ModelParameters, triples: np.ndarray) -> np.ndarray:
    """Vectorized score over an (n, 3) array of triples."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    _check_ids(params, triples[:, 1], [triples[:, 0], triples[:, 2]])
    rh, rt, b = params.relation_parts(triples[:, 1])
    E = params.matrices["E"]
    hu, _ = unit_rows(E[triples[:, 0]])
    tu, _ = unit_rows(E[triples[:, 2]])
    return params.gamma - np.abs(rh * hu + b - rt * tu).sum(axis=-1)


def score_batch(params: ModelParameters, positive, candidates, direction: str) -> np.ndarray:
    """Scores of ``positive`` with its head (or tail) replaced by each candidate."""
    h, r, t = (int(x) for x in positive)
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1)
    _check_ids(params, r, [h, t, candidates])
    if candidates.size == 0:
        return np.empty(0, dtype=params.dtype)
    rh, rt, b = params.relation_parts(r)
    E = params.matrices["E"]
    cand, _ = unit_rows(E[candidates])
    if direction == "tail":
        hu, _ = unit_rows(E[h])
        return params.gamma - np.abs((rh * hu + b) - rt * cand).sum(axis=-1)
    if direction == "head":
        tu, _ = unit_rows(E[t])
        return params.gamma - np.abs(rh * cand + b - rt * tu).sum(axis=-1)
    raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")


def score_all(params: ModelParameters, entity: int, relation: int, direction: str,
              unit_entities: Optional[np.ndarray] = None) -> np.ndarray:
    """Scores of every entity completing ``(entity, relation, ?)`` or ``(?, relation, entity)``.

    ``unit_entities`` lets callers reuse a precomputed normalized entity matrix.
    """
    if unit_entities is None:
        unit_entities, _ = unit_rows(params.matrices["E"])
    rh, rt, b = params.relation_parts(relation)
    fixed = unit_entities[entity]
    if direction == "tail":
        return params.gamma - np.abs((rh * fixed + b) - rt * unit_entities).sum(axis=-1)
    if direction == "head":
        return params.gamma - np.abs(rh * unit_entities + b - rt * fixed).sum(axis=-1)
    raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def adversarial_weights(neg_scores: np.ndarray, alpha: float) -> np.ndarray:
    """Softmax of ``alpha * score`` over the last axis."""
    if alpha < 0:
        raise ValueError("adversarial temperature must be >= 0")
    z = alpha * neg_scores
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


@dataclass
class SparseGrad:
    """Row-sparse gradient: per matrix, unique row ids and their summed gradient rows."""
    rows: Dict[str, np.ndarray]
    values: Dict[str, np.ndarray]

    @classmethod
    def accumulate(cls, parts: Dict[str, list], dim: int) -> "SparseGrad":
        rows, values = {}, {}
        for name, chunks in parts.items():
            ids = np.concatenate([c[0].reshape(-1) for c in chunks])
            vals = np.concatenate([c[1].reshape(-1, dim) for c in chunks], axis=0)
            uniq, inverse = np.unique(ids, return_inverse=True)
            summed = np.zeros((uniq.size, dim), dtype=vals.dtype)
            np.add.at(summed, inverse, vals)
            rows[name], values[name] = uniq, summed
        return cls(rows, values)

    def dense(self, name: str, shape) -> np.ndarray:
        out = np.zeros(shape)
        if name in self.rows:
            out[self.rows[name]] = self.values[name]
        return out

    def scaled(self, c: float) -> "SparseGrad":
        return SparseGrad(dict(self.rows), {k: v * c for k, v in self.values.items()})

    def check_finite(self):
        for name, vals in self.values.items():
            bad = ~np.isfinite(vals).all(axis=1)
            if bad.any():
                raise NumericError(f"non-finite gradient in {name}",
                                   rows=self.rows[name][bad].tolist())


def _normalization_vjp(upstream: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull back a gradient through x -> x/|x| using (I - u u^T)/|x|."""
    return (upstream - unit * (upstream * unit).sum(axis=-1, keepdims=True)) / norms


def batch_loss_and_grad(params: ModelParameters, positives: np.ndarray, negatives: np.ndarray,
                        direction: str, alpha: float, reduction: str = "mean"):
    """Self-adversarial loss and its row-sparse gradient for a batch.

    ``positives`` is (b, 3); ``negatives`` is (b, N) entity ids replacing the
    head or tail according to ``direction``. Adversarial weights are treated
    as constants. Returns ``(loss, SparseGrad, info)`` where ``info`` carries
    the scores and weights.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(positives.shape[0], -1)
    if direction not in ("head", "tail"):
        raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")
    _check_ids(params, positives[:, 1], [positives[:, 0], positives[:, 2], negatives])
    bsz, n_neg = negatives.shape
    h, r, t = positives[:, 0], positives[:, 1], positives[:, 2]
    E = params.matrices["E"]
    rh, rt, b = params.relation_parts(r)

    if direction == "tail":
        fixed_ids, cand_ids = h, np.concatenate([t[:, None], negatives], axis=1)
    else:
        fixed_ids, cand_ids = t, np.concatenate([h[:, None], negatives], axis=1)
    fixed_u, fixed_n = unit_rows(E[fixed_ids])           # (b, k), (b, 1)
    cand_u, cand_n = unit_rows(E[cand_ids])              # (b, N+1, k), (b, N+1, 1)

    if direction == "tail":
        d = (rh * fixed_u + b)[:, None, :] - rt[:, None, :] * cand_u
    else:
        d = rh[:, None, :] * cand_u + b[:, None, :] - (rt * fixed_u)[:, None, :]
    scores = params.gamma - np.abs(d).sum(axis=-1)       # (b, N+1)
    pos_score, neg_score = scores[:, 0], scores[:, 1:]
    weights = adversarial_weights(neg_score, alpha)

    per_example = -log_sigmoid(pos_score) - (weights * log_sigmoid(-neg_score)).sum(axis=-1)
    scale = 1.0 / bsz if reduction == "mean" else 1.0
    loss = float(per_example.sum() * scale)

    dscore = np.empty_like(scores)
    dscore[:, 0] = -sigmoid(-pos_score)
    dscore[:, 1:] = weights * sigmoid(neg_score)
    dscore *= scale
    # d f / d d = -sign(d); np.sign gives sign(0) = 0
    gd = -dscore[..., None] * np.sign(d)                # (b, N+1, k)
    gd_sum = gd.sum(axis=1)                              # (b, k)

    if direction == "tail":
        g_rh = gd_sum * fixed_u
        g_rt = -(gd * cand_u).sum(axis=1)
        g_fixed_u = gd_sum * rh
        g_cand_u = -gd * rt[:, None, :]
    else:
        g_rh = (gd * cand_u).sum(axis=1)
        g_rt = -gd_sum * fixed_u
        g_fixed_u = -gd_sum * rt
        g_cand_u = gd * rh[:, None, :]
    g_b = gd_sum

    g_fixed = _normalization_vjp(g_fixed_u, fixed_u, fixed_n)
    g_cand = _normalization_vjp(g_cand_u, cand_u, cand_n)

    parts = {"E": [(fixed_ids, g_fixed), (cand_ids, g_cand)]}
    if params.variant == "transe":
        parts["RH"] = [(r, g_b)]
    else:
        parts["RH"] = [(r, g_rh)]
        parts["RT"] = [(r, g_rt)]
        if params.variant == "transher":
            parts["B"] = [(r, g_b)]
    grad = SparseGrad.accumulate(parts, params.dim)
    return loss, grad, {"scores": scores, "weights": weights}


def gradients(params: ModelParameters, positive, negatives, direction: str, alpha: float = 1.0):
    """Loss and row-sparse gradient for one positive triple and its negatives."""
    loss, grad, _ = batch_loss_and_grad(params, np.asarray(positive)[None, :],
                                        np.asarray(negatives)[None, :], direction, alpha,
                                        reduction="sum")
    grad.check_finite()
    return loss, grad


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParameters, directory: str, dataset_fingerprint: str = "",
                    extra: Optional[dict] = None, extra_arrays: Optional[Dict[str, np.ndarray]] = None) -> str:
    """Write a manifest plus one raw little-endian float64 row-major file per matrix."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    arrays = dict(params.matrices)
    for name, arr in (extra_arrays or {}).items():
        arrays[name] = arr
    for name, arr in arrays.items():
        fname = f"{name}.bin"
        data = np.ascontiguousarray(arr, dtype="<f8")
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(data.tobytes(order="C"))
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "variant": params.variant,
        "dim": params.dim,
        "gamma": params.gamma,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row-major",
        "matrices": entries,
        "dataset_fingerprint": dataset_fingerprint,
    }
    if extra:
        manifest["extra"] = extra
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_checkpoint(directory: str, expected_fingerprint: Optional[str] = None):
    """Load a checkpoint; returns (params, manifest, extra_arrays)."""
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
    found = manifest.get("dataset_fingerprint", "")
    if expected_fingerprint is not None and found != expected_fingerprint:
        raise ValueError(f"checkpoint dataset fingerprint {found!r} does not match "
                         f"dataset fingerprint {expected_fingerprint!r}")
    matrices, extras = {}, {}
    model_names = _MATRICES[normalize_variant(manifest["variant"])]
    for entry in manifest["matrices"]:
        raw = np.fromfile(os.path.join(directory, entry["file"]), dtype="<f8")
        arr = raw.reshape(entry["shape"]).astype(np.float64)
        (matrices if entry["name"] in model_names else extras)[entry["name"]] = arr
    params = ModelParameters(manifest["variant"], manifest["dim"], manifest["gamma"],
                             manifest["num_entities"], manifest["num_relations"], matrices)
    return params, manifest, extras
