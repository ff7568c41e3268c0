"""Covariance PCA via cyclic Jacobi rotations."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ..catalog import ATTRIBUTE_NAMES
from ..errors import ContractViolation
from .dataset import Dataset


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and column eigenvectors of a symmetric matrix.

    Sweeps every (p, q) pair in row order until the off-diagonal Frobenius
    norm falls below ``tol * max(1, ||A||_F)``.
    """
    a = np.array(A, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ContractViolation("jacobi_eigh needs a symmetric square matrix")
    v = np.eye(n)
    limit = tol * max(1.0, float(np.linalg.norm(a)))

    mask = ~np.eye(n, dtype=bool)

    def off(m):
        # summed directly; ||m||^2 - ||diag||^2 cancels catastrophically
        return math.sqrt(float((m[mask] ** 2).sum()))

    for _ in range(max_sweeps):
        if off(a) < limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta**2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    else:
        if off(a) >= limit:
            raise ArithmeticError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


@dataclass
class PCAResult:
    loadings: np.ndarray  # rows are components
    eigenvalues: np.ndarray
    projections: np.ndarray  # all components; [:, :2] is the 2-D view
    mean: np.ndarray
    labels: list[str]
    degenerate: bool = False

    def to_table(self, components: int = 2) -> str:
        head = "| | " + " | ".join(f"#{n}" for n in ATTRIBUTE_NAMES) + " |"
        rule = "|" + "---|" * (len(ATTRIBUTE_NAMES) + 1)
        rows = [head, rule]
        for k in range(min(components, len(self.loadings))):
            rows.append(f"| PCA-{k} | " + " | ".join(f"{v:.4f}" for v in self.loadings[k]) + " |")
        return "\n".join(rows) + "\n"

    def loadings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "eigenvalue", *ATTRIBUTE_NAMES])
        for k, (ev, row) in enumerate(zip(self.eigenvalues, self.loadings)):
            w.writerow([f"PCA-{k}", repr(float(ev)), *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def projection_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pc0", "pc1", "label"])
        for p, lab in zip(self.projections, self.labels):
            w.writerow([repr(float(p[0])), repr(float(p[1]) if len(p) > 1 else 0.0), lab])
        return buf.getvalue()


def pca(dataset: Dataset | np.ndarray, labels: list[str] | None = None) -> PCAResult:
    if isinstance(dataset, Dataset):
        X, labels = dataset.X, dataset.labels
    else:
        X = np.asarray(dataset, dtype=float)
        labels = labels or [""] * len(X)
    if len(X) < 2:
        raise ContractViolation("PCA needs at least two rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = jacobi_eigh(cov)
    scale = max(1.0, float(np.abs(cov).max()))
    vals = np.where(np.abs(vals) < 1e-12 * scale, 0.0, vals)
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    vals = np.maximum(vals[order], 0.0)
    load = vecs[:, order].T.copy()
    for k in range(len(load)):
        j = int(np.argmax(np.abs(load[k])))
        if load[k, j] < 0:
            load[k] = -load[k]
    return PCAResult(load, vals, Xc @ load.T, mean, list(labels), degenerate=bool(np.all(vals == 0)))
