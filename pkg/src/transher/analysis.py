"""Read-only model inspection: translation heat map, translation norm histogram, gradient traces."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .data import CATEGORIES, RelationTypeTable
from .model import ModelParameters
from .training import GradientStats


class UnsupportedVariant(ValueError):
    pass


def _translations(params: ModelParameters) -> np.ndarray:
    if "B" not in params.matrices:
        raise UnsupportedVariant(f"{params.variant} has no relation-specific translation")
    return params.matrices["B"]


def default_block_size(dim: int) -> int:
    return {1500: 60, 500: 20}.get(dim, math.ceil(dim / 25))


@dataclass
class HeatmapTable:
    categories: List[str]
    block_size: int
    # (len(categories), n_blocks); NaN rows for categories without relations
    values: np.ndarray
    counts: Dict[str, int]

    def write_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["relation_type", "relations"]
                            + [f"block_{i}" for i in range(self.values.shape[1])])
            for c, row in zip(self.categories, self.values):
                writer.writerow([c, self.counts[c]] + [repr(float(v)) for v in row])

    def row(self, category: str) -> np.ndarray:
        return self.values[self.categories.index(category)]


def translation_heatmap(params: ModelParameters, types: RelationTypeTable,
                        block_size: int = 0) -> HeatmapTable:
    """Mean |B| per dimension within each relation category, then mean-pooled over dimension blocks."""
    B = _translations(params)
    block_size = block_size or default_block_size(params.dim)
    if block_size < 1:
        raise ValueError("block size must be >= 1")
    n_blocks = math.ceil(params.dim / block_size)
    values = np.full((len(CATEGORIES), n_blocks), np.nan)
    counts = {}
    cats = np.array([c or "" for c in types.categories], dtype=object)
    for i, c in enumerate(CATEGORIES):
        sel = cats == c
        counts[c] = int(sel.sum())
        if not sel.any():
            continue
        per_dim = np.abs(B[sel]).mean(axis=0)
        # final block averaged over its real width
        values[i] = [per_dim[j * block_size:(j + 1) * block_size].mean() for j in range(n_blocks)]
    return HeatmapTable(list(CATEGORIES), block_size, values, counts)


@dataclass
class TranslationHistogram:
    counts: np.ndarray
    edges: np.ndarray
    norms: np.ndarray
    gamma: float
    fraction_above_gamma: float

    def to_dict(self):
        return {"counts": self.counts.tolist(), "edges": self.edges.tolist(),
                "gamma": self.gamma, "fraction_above_gamma": self.fraction_above_gamma,
                "l1_norms": self.norms.tolist()}

    def to_json(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def translation_l1_histogram(params: ModelParameters, bins: int = 30) -> TranslationHistogram:
    norms = np.abs(_translations(params)).sum(axis=1)
    counts, edges = np.histogram(norms, bins=bins)
    frac = float(np.mean(norms > params.gamma)) if norms.size else 0.0
    return TranslationHistogram(counts, edges, norms, params.gamma, frac)


def gradient_trace_export(stats: GradientStats, path: str) -> str:
    stats.write_csv(path)
    return path
