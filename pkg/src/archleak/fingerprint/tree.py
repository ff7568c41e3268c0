"""CART classification trees (Gini impurity) with stratified cross-validation.

Split search is exact: the weighted Gini of a candidate split is compared
as an integer ratio, so ties resolve deterministically to the lower
feature index and then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..catalog import ATTRIBUTE_NAMES
from ..errors import ContractViolation, ParseError
from ..parallel import pmap
from ..rng import Xoshiro256, derive_seed
from .dataset import Dataset


@dataclass
class Leaf:
    label: str
    n: int = 0


@dataclass
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass
class TreeModel:
    root: Node
    classes: list[str]
    seed: int = 0
    fold: int | None = None
    fold_accuracies: list[float] = field(default_factory=list)

    def depth(self) -> int:
        def walk(node: Node) -> int:
            if isinstance(node, Leaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def n_leaves(self) -> int:
        def walk(node: Node) -> int:
            if isinstance(node, Leaf):
                return 1
            return walk(node.left) + walk(node.right)

        return walk(self.root)


def best_split(X: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[int, float] | None:
    """Feature and midpoint threshold minimising weighted Gini, or None if
    every feature is constant.

    Weighted Gini of a split into (l, r) is ``(n - S/(n_l n_r)) / n`` with
    ``S = n_r * sum(c_l**2) + n_l * sum(c_r**2)``; minimising it means
    maximising ``S / (n_l n_r)``.
    """
    n = len(y)
    best = None  # (num, den, feature, threshold)
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), y] = 1
    total = onehot.sum(axis=0)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cut = np.nonzero(xs[1:] != xs[:-1])[0]
        if cut.size == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[cut]
        right = total - left
        nl = cut + 1
        nr = n - nl
        num = nr * (left * left).sum(axis=1) + nl * (right * right).sum(axis=1)
        den = nl * nr
        ratio = num / den
        top = ratio.max()
        # exact pass over the float near-maxima
        cand = np.nonzero(ratio >= top * (1 - 1e-9))[0]
        bi = int(cand[0])
        for c in cand[1:]:
            if int(num[c]) * int(den[bi]) > int(num[bi]) * int(den[c]):
                bi = int(c)
        bn, bd = int(num[bi]), int(den[bi])
        if best is None or bn * best[1] > best[0] * bd:
            thr = (xs[cut[bi]] + xs[cut[bi] + 1]) / 2.0
            best = (bn, bd, f, float(thr))
    if best is None:
        return None
    return best[2], best[3]


def _majority(y: np.ndarray, classes: list[str]) -> str:
    counts = np.bincount(y, minlength=len(classes))
    return classes[int(np.argmax(counts))]


def fit_tree(X: np.ndarray, labels: list[str], seed: int = 0) -> TreeModel:
    X = np.asarray(X, dtype=float)
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[l] for l in labels], dtype=np.int64)

    def grow(rows: np.ndarray) -> Node:
        ys = y[rows]
        if len(rows) < 2 or np.all(ys == ys[0]):
            return Leaf(_majority(ys, classes), len(rows))
        split = best_split(X[rows], ys, len(classes))
        if split is None:
            return Leaf(_majority(ys, classes), len(rows))
        f, thr = split
        mask = X[rows, f] <= thr
        return Split(f, thr, grow(rows[mask]), grow(rows[~mask]))

    if len(y) == 0:
        raise ContractViolation("cannot fit a tree on zero rows")
    return TreeModel(grow(np.arange(len(y))), classes, seed)


def predict(tree: TreeModel, vector) -> str:
    node = tree.root
    while isinstance(node, Split):
        node = node.left if vector[node.feature] <= node.threshold else node.right
    return node.label


def accuracy(tree: TreeModel, X: np.ndarray, labels: list[str]) -> float:
    if not labels:
        return 1.0
    hits = sum(predict(tree, x) == l for x, l in zip(X, labels))
    return hits / len(labels)


def stratified_folds(labels: list[str], folds: int, seed: int) -> list[int]:
    """Fold index per row: each label's rows are shuffled and dealt round-robin."""
    rng = Xoshiro256(seed)
    assign = [0] * len(labels)
    for lab in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == lab]
        rng.shuffle(idx)
        for k, i in enumerate(idx):
            assign[i] = k % folds
    return assign


@dataclass
class CVReport:
    task: str
    folds: int
    fold_accuracies: list[float]
    seed: int

    @property
    def best(self) -> float:
        return max(self.fold_accuracies)

    @property
    def mean(self) -> float:
        return float(sum(self.fold_accuracies) / len(self.fold_accuracies))


def _fold_job(job) -> tuple[TreeModel, float]:
    X, labels, assign, k, folds, seed = job
    if folds == 1:
        train = test = list(range(len(labels)))
    else:
        train = [i for i, a in enumerate(assign) if a != k]
        test = [i for i, a in enumerate(assign) if a == k]
    tree = fit_tree(X[train], [labels[i] for i in train], derive_seed(seed, k))
    tree.fold = k
    acc = accuracy(tree, X[test], [labels[i] for i in test])
    return tree, acc


def train_tree(dataset: Dataset, folds: int = 5, seed: int = 0, workers: int | None = 1):
    """Cross-validated CART; returns (one tree per fold, CVReport)."""
    if folds < 1:
        raise ContractViolation("folds must be at least 1")
    counts = dataset.label_counts()
    if not counts:
        raise ContractViolation("empty dataset")
    if folds > 1 and min(counts.values()) < folds:
        raise ContractViolation(f"every label needs at least {folds} rows for stratified folds")
    assign = stratified_folds(dataset.labels, folds, seed)
    jobs = [(dataset.X, dataset.labels, assign, k, folds, seed) for k in range(folds)]
    results = pmap(_fold_job, jobs, workers)
    trees = [t for t, _ in results]
    accs = [a for _, a in results]
    for t in trees:
        t.fold_accuracies = accs
    return trees, CVReport(dataset.task, folds, accs, seed)


# ---------------------------------------------------------------------------
# Text export
# ---------------------------------------------------------------------------


def tree_to_text(tree: TreeModel) -> str:
    """Nested form: ``split <feature> <threshold>`` lines indented by depth,
    children left then right; ``leaf <label>`` terminals."""
    lines = [f"# classes={','.join(tree.classes)}", f"# seed={tree.seed}"]

    def walk(node: Node, depth: int) -> None:
        pad = "  " * depth
        if isinstance(node, Leaf):
            lines.append(f"{pad}leaf {node.label} n={node.n}")
        else:
            lines.append(f"{pad}split {ATTRIBUTE_NAMES[node.feature]} <= {node.threshold!r}")
            walk(node.left, depth + 1)
            walk(node.right, depth + 1)

    walk(tree.root, 0)
    return "\n".join(lines) + "\n"


def tree_from_text(text: str) -> TreeModel:
    classes: list[str] = []
    seed = 0
    body = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("# classes="):
            classes = [c for c in line.split("=", 1)[1].split(",") if c]
        elif line.startswith("# seed="):
            seed = int(line.split("=", 1)[1])
        elif line.strip():
            body.append((lineno, line))
    pos = 0

    def parse(depth: int) -> Node:
        nonlocal pos
        if pos >= len(body):
            raise ParseError("tree text ends early", body[-1][0] if body else None)
        lineno, line = body[pos]
        indent = len(line) - len(line.lstrip(" "))
        if indent != 2 * depth:
            raise ParseError("unexpected indentation", lineno)
        parts = line.split()
        pos += 1
        if parts[0] == "leaf":
            n = int(parts[2].split("=")[1]) if len(parts) > 2 else 0
            return Leaf(parts[1], n)
        if parts[0] == "split" and len(parts) == 4 and parts[2] == "<=":
            try:
                feature = ATTRIBUTE_NAMES.index(parts[1])
                thr = float(parts[3])
            except ValueError:
                raise ParseError(f"bad split line {line!r}", lineno) from None
            left = parse(depth + 1)
            right = parse(depth + 1)
            return Split(feature, thr, left, right)
        raise ParseError(f"bad tree line {line!r}", lineno)

    root = parse(0)
    if pos != len(body):
        raise ParseError("trailing lines after tree", body[pos][0])
    return TreeModel(root, classes, seed)
