from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from ..catalog import ATTRIBUTE_NAMES
from ..errors import ContractViolation
from .dataset import Dataset


def entropy(symbols) -> float:
    counts = Counter(symbols)
    n = sum(counts.values())
    return -sum(c / n * math.log2(c / n) for c in counts.values())


def discrete_mi(xs, ys) -> float:
    """Plug-in mutual information in bits; values are treated as symbols."""
    xs, ys = list(xs), list(ys)
    n = len(xs)
    if n != len(ys):
        raise ContractViolation("feature and label columns differ in length")
    if n == 0:
        return 0.0
    joint = Counter(zip(xs, ys))
    px = Counter(xs)
    py = Counter(ys)
    mi = 0.0
    for (x, y), c in joint.items():
        mi += c / n * math.log2(c * n / (px[x] * py[y]))
    return max(mi, 0.0)


@dataclass
class FeatureImportance:
    scores: dict[str, float]
    ranking: list[str]
    label_entropy: float

    def top(self, k: int) -> list[str]:
        return self.ranking[:k]


def mutual_information(dataset: Dataset) -> FeatureImportance:
    if len(set(dataset.labels)) < 2:
        raise ContractViolation("mutual information needs at least two labels")
    scores = {}
    for j, name in enumerate(ATTRIBUTE_NAMES):
        scores[name] = discrete_mi(dataset.X[:, j].tolist(), dataset.labels)
    order = sorted(range(len(ATTRIBUTE_NAMES)), key=lambda j: (-scores[ATTRIBUTE_NAMES[j]], j))
    return FeatureImportance(scores, [ATTRIBUTE_NAMES[j] for j in order], entropy(dataset.labels))
