"""Constructive checks that the score function can encode relation patterns.

Each constructor picks unit entity images on the sphere, relation scales,
and back-solves the translations so that the premise facts score exactly
``gamma``; the conclusion fact is then scored through the real score
function.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .model import ModelParameters, score

PATTERNS = ("symmetry", "antisymmetry", "inversion", "composition")
GAMMA = 6.0


@dataclass
class PatternCase:
    pattern: str
    # per relation: {"RH": ..., "RT": ..., "B": ...}
    relations: List[Dict[str, np.ndarray]]
    units: List[np.ndarray]
    gamma: float = GAMMA
    premise_residual: float = 0.0

    def params(self) -> ModelParameters:
        k = self.units[0].size
        mats = {name: np.stack([r[name] for r in self.relations]) for name in ("RH", "RT", "B")}
        mats["E"] = np.stack(self.units)
        return ModelParameters("transher", k, self.gamma, len(self.units), len(self.relations), mats)

    def distance(self, head: int, relation: int, tail: int) -> float:
        """``gamma - score``; zero when the fact is exactly satisfied."""
        return self.gamma - score(self.params(), (head, relation, tail))


def residual(rel: Dict[str, np.ndarray], u_head: np.ndarray, u_tail: np.ndarray) -> np.ndarray:
    return rel["RH"] * u_head + rel["B"] - rel["RT"] * u_tail


def _unit(k: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=k)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _scales(k: int, rng: np.random.Generator, low: float = 0.2) -> np.ndarray:
    """Relation scale vector with entries bounded away from zero."""
    mag = rng.uniform(low, 2.0, size=k)
    return mag * rng.choice([-1.0, 1.0], size=k)


def _translation(rh, rt, u_head, u_tail) -> np.ndarray:
    return rt * u_tail - rh * u_head


def _premise(case: PatternCase, facts) -> PatternCase:
    case.premise_residual = max(
        float(np.abs(residual(case.relations[r], case.units[h], case.units[t])).sum())
        for h, r, t in facts)
    return case


def construct_symmetric(k: int, rng: np.random.Generator) -> PatternCase:
    rh = _scales(k, rng)
    rt = -rh
    u1, u2 = _unit(k, rng), _unit(k, rng)
    rel = {"RH": rh, "RT": rt, "B": _translation(rh, rt, u1, u2)}
    return _premise(PatternCase("symmetry", [rel], [u1, u2]), [(0, 0, 1)])


def symmetric_counterexample(k: int, rng: np.random.Generator, delta: float = 0.1) -> PatternCase:
    """Symmetric construction with ``rt`` pushed off ``-rh`` by ``delta``."""
    case = construct_symmetric(k, rng)
    rel = case.relations[0]
    rel["RT"] = rel["RT"] + delta
    rel["B"] = _translation(rel["RH"], rel["RT"], case.units[0], case.units[1])
    return _premise(case, [(0, 0, 1)])


def construct_antisymmetric(k: int, rng: np.random.Generator) -> PatternCase:
    rh = _scales(k, rng)
    while True:
        rt = _scales(k, rng)
        if np.all(np.abs(rt + rh) > 1e-6):
            break
    u1, u2 = _unit(k, rng), _unit(k, rng)
    rel = {"RH": rh, "RT": rt, "B": _translation(rh, rt, u1, u2)}
    return _premise(PatternCase("antisymmetry", [rel], [u1, u2]), [(0, 0, 1)])


def construct_inverse(k: int, rng: np.random.Generator) -> PatternCase:
    """Second relation uses ``rh2 = rt1``, ``rt2 = rh1``, ``b2 = -b1``."""
    rh1, rt1 = _scales(k, rng), _scales(k, rng)
    u1, u2 = _unit(k, rng), _unit(k, rng)
    r1 = {"RH": rh1, "RT": rt1, "B": _translation(rh1, rt1, u1, u2)}
    r2 = {"RH": rt1.copy(), "RT": rh1.copy(), "B": -r1["B"]}
    return _premise(PatternCase("inversion", [r1, r2], [u1, u2]), [(0, 0, 1)])


def inverse_counterexample(k: int, rng: np.random.Generator) -> Dict[str, object]:
    """Relations meeting only ``rt1*rt2 == rh1*rh2`` and ``b1 == -b2``.

    With ``rh2 = c*rt1``, ``rt2 = c*rh1`` for random ``c != 1`` the product
    condition holds, yet the reverse fact is not satisfied. Returns the case
    together with the symbolic residual ``rh2*b1 + rt1*b2`` and the reverse
    distance.
    """
    rh1, rt1 = _scales(k, rng), _scales(k, rng)
    c = rng.uniform(1.5, 3.0, size=k)
    u1, u2 = _unit(k, rng), _unit(k, rng)
    r1 = {"RH": rh1, "RT": rt1, "B": _translation(rh1, rt1, u1, u2)}
    r2 = {"RH": c * rt1, "RT": c * rh1, "B": -r1["B"]}
    case = _premise(PatternCase("inversion", [r1, r2], [u1, u2]), [(0, 0, 1)])
    product_gap = float(np.abs(r1["RT"] * r2["RT"] - r1["RH"] * r2["RH"]).max())
    symbolic = r2["RH"] * r1["B"] + r1["RT"] * r2["B"]
    return {
        "case": case,
        "product_gap": product_gap,
        "symbolic_residual": float(np.abs(symbolic).sum()),
        "reverse_distance": case.distance(1, 1, 0),
    }


def construct_composition(k: int, rng: np.random.Generator) -> PatternCase:
    """Premises (e1, r1, e2), (e2, r2, e3); conclusion (e1, r3, e3) with r3 built from r1, r2."""
    rh1, rt1, rh2, rt2 = (_scales(k, rng) for _ in range(4))
    u1, u2, u3 = _unit(k, rng), _unit(k, rng), _unit(k, rng)
    r1 = {"RH": rh1, "RT": rt1, "B": _translation(rh1, rt1, u1, u2)}
    r2 = {"RH": rh2, "RT": rt2, "B": _translation(rh2, rt2, u2, u3)}
    r3 = {"RH": rh1 * rh2, "RT": rt1 * rt2, "B": rh2 * r1["B"] + rt1 * r2["B"]}
    return _premise(PatternCase("composition", [r1, r2, r3], [u1, u2, u3]),
                    [(0, 0, 1), (1, 1, 2)])


def check(case: PatternCase) -> Dict[str, float]:
    """Distances of the premise and conclusion facts for a constructed case."""
    if case.pattern in ("symmetry", "antisymmetry"):
        return {"forward": case.distance(0, 0, 1), "conclusion": case.distance(1, 0, 0)}
    if case.pattern == "inversion":
        return {"forward": case.distance(0, 0, 1), "conclusion": case.distance(1, 1, 0)}
    if case.pattern == "composition":
        return {"forward": max(case.distance(0, 0, 1), case.distance(1, 1, 2)),
                "conclusion": case.distance(0, 2, 2)}
    raise ValueError(f"unknown pattern {case.pattern!r}")


_CONSTRUCTORS = {
    "symmetry": construct_symmetric,
    "antisymmetry": construct_antisymmetric,
    "inversion": construct_inverse,
    "composition": construct_composition,
}


@dataclass
class PatternResult:
    pattern: str
    trials: int = 0
    passed: int = 0
    max_residual: float = 0.0
    max_premise_residual: float = 0.0
    # antisymmetry passes when the reverse fact is violated
    expects_violation: bool = False

    @property
    def rate(self) -> Optional[float]:
        return self.passed / self.trials if self.trials else None


@dataclass
class VerifyReport:
    dim: int
    tolerance: float
    results: Dict[str, PatternResult] = field(default_factory=dict)

    def to_dict(self):
        return {"dim": self.dim, "tolerance": self.tolerance,
                "patterns": {p: {"trials": r.trials, "passed": r.passed, "pass_rate": r.rate,
                                 "max_residual": r.max_residual,
                                 "max_premise_residual": r.max_premise_residual,
                                 "criterion": "violation" if r.expects_violation else "satisfied"}
                             for p, r in self.results.items()}}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def table(self) -> str:
        lines = [f"{'pattern':<14}{'trials':>8}{'passed':>8}{'rate':>9}  max residual"]
        for r in self.results.values():
            rate = "-" if r.rate is None else f"{100 * r.rate:.1f}%"
            lines.append(f"{r.pattern:<14}{r.trials:>8}{r.passed:>8}{rate:>9}  {r.max_residual:.3e}")
        return "\n".join(lines)


def verify_suite(k: int, trials: int, tolerance: float = 1e-8, seed: int = 0) -> VerifyReport:
    """Run every constructor ``trials`` times and tally passes and worst residuals.

    For antisymmetry a trial passes when the reverse fact is violated
    (distance above ``tolerance``), and ``max_residual`` is the worst
    forward residual.
    """
    rng = np.random.default_rng(seed)
    report = VerifyReport(k, tolerance)
    if trials <= 0:
        return report
    for pattern in PATTERNS:
        res = PatternResult(pattern, expects_violation=pattern == "antisymmetry")
        for _ in range(trials):
            case = _CONSTRUCTORS[pattern](k, rng)
            d = check(case)
            res.trials += 1
            res.max_premise_residual = max(res.max_premise_residual, case.premise_residual)
            if res.expects_violation:
                res.max_residual = max(res.max_residual, abs(d["forward"]))
                ok = abs(d["forward"]) <= tolerance and d["conclusion"] > tolerance
            else:
                worst = max(abs(d["forward"]), abs(d["conclusion"]))
                res.max_residual = max(res.max_residual, worst)
                ok = worst <= tolerance
            res.passed += int(ok)
        report.results[pattern] = res
    return report
