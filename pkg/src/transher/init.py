"""Per-component weight initialization and the initialization-combination search."""
from __future__ import annotations

import itertools
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .model import ZERO_NORM_FLOOR, ModelParameters

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
NORMAL = "normal"
KINDS = (UNIFORM, NORMAL)
_ALIASES = {"uniform": UNIFORM, "u": UNIFORM, "gamma_uniform": UNIFORM,
            "normal": NORMAL, "n": NORMAL, "xavier_normal": NORMAL, "xavier": NORMAL}


def _kind(token: str) -> str:
    try:
        return _ALIASES[token.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown initializer {token!r}; use 'uniform' or 'normal'") from None


@dataclass(frozen=True)
class InitStrategy:
    entity: str = UNIFORM
    relation: str = NORMAL
    translation: str = NORMAL
    epsilon: float = 2.0
    gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for f in ("entity", "relation", "translation"):
            object.__setattr__(self, f, _kind(getattr(self, f)))

    @classmethod
    def parse(cls, text: str, **kwargs) -> "InitStrategy":
        """Parse ``'uniform,normal,normal'`` (entity, relation, translation)."""
        tokens = [t for t in text.split(",") if t.strip()]
        if len(tokens) != 3:
            raise ValueError(f"expected three comma-separated initializers, got {text!r}")
        return cls(*tokens, **kwargs)

    @property
    def label(self) -> str:
        short = {UNIFORM: "U", NORMAL: "N"}
        return "".join(short[k] for k in (self.entity, self.relation, self.translation))

    def tokens(self) -> str:
        return ",".join((self.entity, self.relation, self.translation))


def gamma_uniform_bound(gamma: float, epsilon: float, dim: int) -> float:
    return (gamma + epsilon) / dim


def xavier_normal_std(gain: float, dim: int) -> float:
    return gain * math.sqrt(2.0 / dim)


def matrix_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream for one matrix, keyed on (seed, matrix name)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def draw(kind: str, shape, gamma: float, dim: int, epsilon: float, gain: float,
         rng: np.random.Generator) -> np.ndarray:
    if kind == UNIFORM:
        bound = gamma_uniform_bound(gamma, epsilon, dim)
        if bound <= 0:
            raise ValueError("gamma + epsilon must be positive for the gamma-uniform initializer")
        return rng.uniform(-bound, bound, size=shape)
    if kind == NORMAL:
        return rng.normal(0.0, xavier_normal_std(gain, dim), size=shape)
    raise ValueError(f"unknown initializer {kind!r}")


def initialize(params: ModelParameters, strategy: InitStrategy) -> ModelParameters:
    """Fill every matrix of ``params`` in place according to ``strategy``."""
    if params.dim <= 0:
        raise ValueError("embedding dimension must be positive")
    kinds = {"E": strategy.entity, "RH": strategy.relation, "RT": strategy.relation,
             "B": strategy.translation}
    if params.variant == "transe":
        # the single TransE relation vector is a translation
        kinds["RH"] = strategy.translation
    for name in params.matrix_names:
        mat = params.matrices[name]
        rng = matrix_rng(strategy.seed, name)
        mat[...] = draw(kinds[name], mat.shape, params.gamma, params.dim,
                        strategy.epsilon, strategy.gain, rng)
        if name == "E":
            for _ in range(100):
                bad = np.linalg.norm(mat, axis=1) < ZERO_NORM_FLOOR
                if not bad.any():
                    break
                mat[bad] = draw(kinds[name], (int(bad.sum()), params.dim), params.gamma,
                                params.dim, strategy.epsilon, strategy.gain, rng)
    return params


def all_strategies(base: InitStrategy) -> List[InitStrategy]:
    return [replace(base, entity=e, relation=r, translation=t)
            for e, r, t in itertools.product(KINDS, repeat=3)]


@dataclass
class SearchResult:
    strategy: InitStrategy
    order: int
    mrr: Optional[float] = None
    hits10: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def init_search(graph, model_config: dict, train_config, budget_steps: int,
                base: Optional[InitStrategy] = None, split: str = "valid",
                workers: int = 1) -> List[SearchResult]:
    """Train every entity/relation/translation initializer combination and rank by MRR.

    ``model_config`` holds ``variant``, ``dim`` and ``gamma``. Results are sorted
    by MRR, then HIT@10, then enumeration order; failed runs go last.
    """
    from .evaluation import evaluate
    from .training import train

    if budget_steps <= 0:
        raise ValueError("budget_steps must be positive")
    base = base or InitStrategy()
    train_config = replace(train_config, steps=budget_steps)

    def run(order_and_strategy):
        order, strategy = order_and_strategy
        try:
            params = ModelParameters.allocate(model_config.get("variant", "transher"),
                                              model_config["dim"], model_config["gamma"],
                                              graph.num_entities, graph.num_relations)
            initialize(params, strategy)
            result = train(graph, params, train_config)
            report = evaluate(result.params, graph, split=split)
            logger.info("init %s: valid MRR %.4f", strategy.label, report.overall["mrr"])
            return SearchResult(strategy, order, report.overall["mrr"], report.overall["hits@10"])
        except Exception as exc:  # one failing combination must not abort the search
            logger.warning("init %s failed: %s", strategy.label, exc)
            return SearchResult(strategy, order, error=f"{type(exc).__name__}: {exc}")

    jobs = list(enumerate(all_strategies(base)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    ok = sorted((r for r in results if not r.failed), key=lambda r: (-r.mrr, -r.hits10, r.order))
    return ok + [r for r in results if r.failed]
