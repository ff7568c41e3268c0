"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction


def gini(counts) -> Fraction:
    n = sum(counts)
    if n == 0:
        return Fraction(0)
    return 1 - sum(Fraction(c, n) ** 2 for c in counts)


def split_oracle(X, y):
    """Every feature, every midpoint between distinct values; weighted Gini
    computed with exact fractions.  Ties keep the first candidate found, i.e.
    the lowest feature and then the lowest threshold."""
    classes = sorted(set(y))
    n = len(y)
    best = None
    for f in range(len(X[0])):
        values = sorted({row[f] for row in X})
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2.0
            left = [y[i] for i in range(n) if X[i][f] <= thr]
            right = [y[i] for i in range(n) if X[i][f] > thr]
            lc = [left.count(c) for c in classes]
            rc = [right.count(c) for c in classes]
            w = Fraction(len(left), n) * gini(lc) + Fraction(len(right), n) * gini(rc)
            if best is None or w < best[0]:
                best = (w, f, thr)
    return None if best is None else (best[1], best[2])


def mi_oracle(xs, ys) -> float:
    """I(X;Y) = H(X) + H(Y) - H(X,Y) from explicit histograms."""

    def h(seq):
        c = Counter(seq)
        n = len(seq)
        return -sum(v / n * math.log2(v / n) for v in c.values())

    return h(list(xs)) + h(list(ys)) - h(list(zip(xs, ys)))


def otsu_oracle(samples) -> int:
    """Lowest integer t maximising between-class variance of {x < t} vs {x >= t}."""
    lo, hi = min(samples), max(samples)
    n = len(samples)
    best_t, best_v = None, None
    for t in range(lo + 1, hi + 1):
        a = [x for x in samples if x < t]
        b = [x for x in samples if x >= t]
        if not a or not b:
            continue
        w0, w1 = Fraction(len(a), n), Fraction(len(b), n)
        m0, m1 = Fraction(sum(a), len(a)), Fraction(sum(b), len(b))
        v = w0 * w1 * (m0 - m1) ** 2
        if best_v is None or v > best_v:
            best_t, best_v = t, v
    return best_t


def eig_sym_closed_form(A) -> list[float]:
    """Eigenvalues of a symmetric 1x1, 2x2 or 3x3 matrix, ascending."""
    n = len(A)
    if n == 1:
        return [float(A[0][0])]
    if n == 2:
        a, b, d = A[0][0], A[0][1], A[1][1]
        m = (a + d) / 2
        r = math.hypot((a - d) / 2, b)
        return [m - r, m + r]
    # trigonometric solution of the characteristic cubic
    p1 = A[0][1] ** 2 + A[0][2] ** 2 + A[1][2] ** 2
    q = (A[0][0] + A[1][1] + A[2][2]) / 3
    if p1 == 0:
        return sorted(A[i][i] for i in range(3))
    p2 = sum((A[i][i] - q) ** 2 for i in range(3)) + 2 * p1
    p = math.sqrt(p2 / 6)
    B = [[(A[i][j] - (q if i == j else 0)) / p for j in range(3)] for i in range(3)]
    det = (
        B[0][0] * (B[1][1] * B[2][2] - B[1][2] * B[2][1])
        - B[0][1] * (B[1][0] * B[2][2] - B[1][2] * B[2][0])
        + B[0][2] * (B[1][0] * B[2][1] - B[1][1] * B[2][0])
    )
    r = max(-1.0, min(1.0, det / 2))
    phi = math.acos(r) / 3
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    e2 = 3 * q - e1 - e3
    return sorted([e1, e2, e3])
