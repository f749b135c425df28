"""Knowledge-graph loading, indexing and relation-type statistics.

Dictionary files hold ``<id>\\t<name>`` lines; triple files hold
``<head>\\t<relation>\\t<tail>`` lines using the dictionary names.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CATEGORIES = ("1-1", "1-N", "N-1", "N-N")
DEFAULT_TYPE_THRESHOLD = 1.5


class DataError(Exception):
    """Raised for malformed or inconsistent dataset files."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def _read_lines(path: str) -> List[Tuple[int, str]]:
    with open(path, encoding="utf-8") as f:
        return [(i, line.rstrip("\n").rstrip("\r")) for i, line in enumerate(f, start=1)]


def read_dictionary(path: str) -> Dict[str, int]:
    """Read a ``<id>\\t<name>`` file, checking ids are dense and unique."""
    mapping: Dict[str, int] = {}
    seen_ids = set()
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected '<id>\\t<name>', got {line!r}")
        try:
            idx = int(parts[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: id {parts[0]!r} is not an integer") from None
        name = parts[1]
        if idx in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate id {idx}")
        if name in mapping:
            raise DataError(f"{path}:{lineno}: duplicate name {name!r}")
        seen_ids.add(idx)
        mapping[name] = idx
    if seen_ids != set(range(len(seen_ids))):
        missing = sorted(set(range(len(seen_ids))) - seen_ids)[:5]
        raise DataError(f"{path}: ids are not dense 0..{len(seen_ids) - 1} (missing e.g. {missing})")
    return mapping


def read_triples(path: str, entity2id: Dict[str, int],
                 relation2id: Dict[str, int]) -> Tuple[np.ndarray, int]:
    """Read a triple file into an (n, 3) int64 array.

    Returns the deduplicated array (first-occurrence order kept) and the
    number of duplicate lines dropped.
    """
    rows = []
    seen = set()
    duplicates = 0
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        h, r, t = parts
        try:
            row = (entity2id[h], relation2id[r], entity2id[t])
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: unknown name {exc.args[0]!r}") from None
        if row in seen:
            duplicates += 1
            continue
        seen.add(row)
        rows.append(row)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return arr, duplicates


class FilterIndex:
    """Membership index over a set of triples.

    Triples are packed into one int64 key each and kept sorted, so lookups
    on whole arrays of candidates are a single ``searchsorted``.
    """

    def __init__(self, triples: np.ndarray, num_entities: int, num_relations: int):
        self.num_entities = num_entities
        self.num_relations = num_relations
        keys = self.encode(triples[:, 0], triples[:, 1], triples[:, 2])
        self.keys = np.unique(keys)

    def encode(self, h, r, t) -> np.ndarray:
        h = np.asarray(h, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        return (h * self.num_relations + r) * self.num_entities + t

    def contains(self, h, r, t) -> np.ndarray:
        """Vectorized membership test; arguments broadcast against each other."""
        keys = self.encode(h, r, t)
        if self.keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, self.keys.size - 1)
        return self.keys[pos] == keys

    def __contains__(self, triple) -> bool:
        h, r, t = triple
        return bool(self.contains(h, r, t))

    def __len__(self) -> int:
        return int(self.keys.size)


@dataclass
class RelationTypeTable:
    hpt: np.ndarray
    tph: np.ndarray
    # None where the relation has no triples at all
    categories: List[Optional[str]]
    threshold: float = DEFAULT_TYPE_THRESHOLD

    @property
    def undefined(self) -> List[int]:
        return [r for r, c in enumerate(self.categories) if c is None]

    def category_of(self, relation: int) -> Optional[str]:
        return self.categories[relation]


@dataclass
class KnowledgeGraph:
    entity2id: Dict[str, int]
    relation2id: Dict[str, int]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    duplicates: Dict[str, int] = field(default_factory=dict)
    filter_index: FilterIndex = field(init=False)
    relation_types: RelationTypeTable = field(init=False)

    def __post_init__(self):
        for split in ("train", "valid", "test"):
            arr = np.asarray(getattr(self, split), dtype=np.int64).reshape(-1, 3)
            setattr(self, split, arr)
        self._check_ranges()
        self.filter_index = FilterIndex(self.all_triples(), self.num_entities, self.num_relations)
        self.relation_types = categorize_relations(self)
        self.id2entity = {i: n for n, i in self.entity2id.items()}
        self.id2relation = {i: n for n, i in self.relation2id.items()}
        train_rel = set(np.unique(self.train[:, 1]).tolist())
        for split in ("valid", "test"):
            unseen = set(np.unique(getattr(self, split)[:, 1]).tolist()) - train_rel
            if unseen:
                logger.warning("%d relation(s) in %s never occur in train: %s",
                               len(unseen), split, sorted(unseen)[:10])

    @property
    def num_entities(self) -> int:
        return len(self.entity2id)

    @property
    def num_relations(self) -> int:
        return len(self.relation2id)

    def _check_ranges(self):
        for split in ("train", "valid", "test"):
            arr = getattr(self, split)
            if arr.size == 0:
                continue
            if arr.min() < 0 or arr[:, [0, 2]].max() >= self.num_entities \
                    or arr[:, 1].max() >= self.num_relations:
                raise DataError(f"{split}: triple ids out of range")

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    def fingerprint(self) -> str:
        """Content hash over names, id assignments and splits."""
        digest = hashlib.sha256()
        for mapping in (self.entity2id, self.relation2id):
            for name, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
                digest.update(f"{idx}\t{name}\n".encode("utf-8"))
            digest.update(b"\x00")
        for split in ("train", "valid", "test"):
            digest.update(np.ascontiguousarray(getattr(self, split), dtype="<i8").tobytes())
            digest.update(b"\x00")
        return digest.hexdigest()[:16]

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence], valid=(), test=()) -> "KnowledgeGraph":
        """Build a graph from name triples, assigning ids in first-seen order."""
        entity2id: Dict[str, int] = {}
        relation2id: Dict[str, int] = {}
        splits = []
        for split in (triples, valid, test):
            rows = []
            for h, r, t in split:
                h, r, t = str(h), str(r), str(t)
                for name, mapping in ((h, entity2id), (r, relation2id), (t, entity2id)):
                    mapping.setdefault(name, len(mapping))
                rows.append((entity2id[h], relation2id[r], entity2id[t]))
            splits.append(_dedup(rows))
        return cls(entity2id, relation2id, *splits)


def _dedup(rows) -> np.ndarray:
    seen = set()
    out = []
    for row in rows:
        row = tuple(int(x) for x in row)
        if row not in seen:
            seen.add(row)
            out.append(row)
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def load_dataset(train_path: str, valid_path: str, test_path: str,
                 entity_dict_path: str, relation_dict_path: str) -> KnowledgeGraph:
    entity2id = read_dictionary(entity_dict_path)
    relation2id = read_dictionary(relation_dict_path)
    splits = {}
    duplicates = {}
    for name, path in (("train", train_path), ("valid", valid_path), ("test", test_path)):
        splits[name], duplicates[name] = read_triples(path, entity2id, relation2id)
        if duplicates[name]:
            logger.info("%s: dropped %d duplicate triple(s)", path, duplicates[name])
    return KnowledgeGraph(entity2id, relation2id, splits["train"], splits["valid"],
                          splits["test"], duplicates=duplicates)


def load_dataset_dir(data_dir: str) -> KnowledgeGraph:
    """Load the conventional layout: entities.dict, relations.dict, {train,valid,test}.txt."""
    j = lambda name: os.path.join(data_dir, name)  # noqa: E731
    return load_dataset(j("train.txt"), j("valid.txt"), j("test.txt"),
                        j("entities.dict"), j("relations.dict"))


def save_dataset(graph: KnowledgeGraph, data_dir: str) -> None:
    os.makedirs(data_dir, exist_ok=True)
    for fname, mapping in (("entities.dict", graph.entity2id), ("relations.dict", graph.relation2id)):
        with open(os.path.join(data_dir, fname), "w", encoding="utf-8", newline="\n") as f:
            for name, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
                f.write(f"{idx}\t{name}\n")
    for split in ("train", "valid", "test"):
        with open(os.path.join(data_dir, f"{split}.txt"), "w", encoding="utf-8", newline="\n") as f:
            for h, r, t in graph.split(split):
                f.write(f"{graph.id2entity[h]}\t{graph.id2relation[r]}\t{graph.id2entity[t]}\n")


def categorize_relations(graph: KnowledgeGraph,
                         threshold: float = DEFAULT_TYPE_THRESHOLD) -> RelationTypeTable:
    """Compute heads-per-tail / tails-per-head over all splits and bucket relations."""
    if threshold <= 1:
        raise ValueError("threshold must be > 1")
    triples = graph.all_triples()
    n_rel = graph.num_relations
    count = np.bincount(triples[:, 1], minlength=n_rel).astype(np.float64)
    # distinct (relation, head) and (relation, tail) pairs
    rh = np.unique(triples[:, [1, 0]], axis=0) if triples.size else np.empty((0, 2), np.int64)
    rt = np.unique(triples[:, [1, 2]], axis=0) if triples.size else np.empty((0, 2), np.int64)
    distinct_heads = np.bincount(rh[:, 0], minlength=n_rel).astype(np.float64)
    distinct_tails = np.bincount(rt[:, 0], minlength=n_rel).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        hpt = np.where(distinct_tails > 0, count / distinct_tails, np.nan)
        tph = np.where(distinct_heads > 0, count / distinct_heads, np.nan)
    categories: List[Optional[str]] = []
    for r in range(n_rel):
        if count[r] == 0:
            categories.append(None)
        else:
            categories.append(relation_category(hpt[r], tph[r], threshold))
    undefined = [r for r, c in enumerate(categories) if c is None]
    if undefined:
        logger.warning("%d relation(s) have no triples; category undefined", len(undefined))
    return RelationTypeTable(hpt, tph, categories, threshold)


def relation_category(hpt: float, tph: float, threshold: float = DEFAULT_TYPE_THRESHOLD) -> str:
    many_heads = hpt >= threshold
    many_tails = tph >= threshold
    if not many_heads and not many_tails:
        return "1-1"
    if not many_heads:
        return "1-N"
    if not many_tails:
        return "N-1"
    return "N-N"


class CandidateList:
    """Negative candidates per (test index, direction), direction in {'head', 'tail'}."""

    def __init__(self, records: Dict[Tuple[int, str], np.ndarray]):
        self.records = records

    def get(self, index: int, direction: str) -> np.ndarray:
        try:
            return self.records[(index, direction)]
        except KeyError:
            raise KeyError(f"no {direction} candidates for test triple {index}") from None

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, key) -> bool:
        return key in self.records


_DIRECTIONS = {"H": "head", "T": "tail"}


def load_candidates(path: str, graph: KnowledgeGraph, split: str = "test") -> CandidateList:
    """Parse ``<index>\\t<H|T>\\t<id,id,...>`` lines and validate against ``graph``."""
    triples = graph.split(split)
    records: Dict[Tuple[int, str], np.ndarray] = {}
    problems = []
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or parts[1] not in _DIRECTIONS:
            raise DataError(f"{path}:{lineno}: expected '<index>\\t<H|T>\\t<ids>'")
        index = int(parts[0])
        direction = _DIRECTIONS[parts[1]]
        body = parts[2].strip() if len(parts) == 3 else ""
        ids = np.array([int(x) for x in body.split(",")] if body else [], dtype=np.int64)
        if not 0 <= index < len(triples):
            problems.append(f"line {lineno}: test index {index} out of range")
            continue
        if ids.size and (ids.min() < 0 or ids.max() >= graph.num_entities):
            problems.append(f"line {lineno}: test index {index}: entity id out of range")
        answer = triples[index, 0 if direction == "head" else 2]
        if np.any(ids == answer):
            problems.append(f"line {lineno}: test index {index} ({parts[1]}): "
                            f"candidates contain the true answer {answer}")
        if (index, direction) in records:
            problems.append(f"line {lineno}: duplicate record for test index {index} ({parts[1]})")
        records[(index, direction)] = ids
    if problems:
        raise DataError(f"{path}: invalid candidate records:\n  " + "\n  ".join(problems))
    return CandidateList(records)


def save_candidates(candidates: CandidateList, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (index, direction), ids in sorted(candidates.records.items()):
            f.write(f"{index}\t{direction[0].upper()}\t{','.join(str(int(i)) for i in ids)}\n")


def triple_fraction_by_category(graph: KnowledgeGraph, split: Optional[str] = None) -> Dict[str, float]:
    """Fraction of triples whose relation falls in each category."""
    triples = graph.all_triples() if split is None else graph.split(split)
    cats = graph.relation_types.categories
    out = {c: 0 for c in CATEGORIES}
    for r in triples[:, 1]:
        c = cats[r]
        if c is not None:
            out[c] += 1
    total = max(len(triples), 1)
    return {c: n / total for c, n in out.items()}


def ceil_div(a: int, b: int) -> int:
    return int(math.ceil(a / b))
