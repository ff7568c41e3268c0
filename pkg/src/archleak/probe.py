"""Hit/miss latency threshold for a Flush+Reload probe.

A reload faster than the threshold means another process touched the line
since the flush.  The threshold is chosen by Otsu's criterion on a 1-cycle
histogram of calibration samples.
"""

from __future__ import annotations

from typing import Iterable

from .errors import ContractViolation, DegenerateDistributionError, ParseError

HIT = "HIT"
MISS = "MISS"


def _check(samples: Iterable[int]) -> list[int]:
    out = []
    for s in samples:
        if int(s) != s or s <= 0:
            raise ContractViolation(f"latency samples must be positive integers, got {s!r}")
        out.append(int(s))
    return out


def histogram(samples: Iterable[int]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for s in _check(samples):
        counts[s] = counts.get(s, 0) + 1
    return dict(sorted(counts.items()))


def otsu_threshold(samples: Iterable[int]) -> int:
    """Integer threshold t maximising between-class variance of {x < t} vs {x >= t}.

    For class sizes n0, n1 and sums s0, s1 the between-class variance is
    proportional to (s0*n1 - s1*n0)**2 / (n0*n1); candidates are compared
    exactly and the lowest maximiser wins.
    """
    hist = histogram(samples)
    if len(hist) < 2:
        raise DegenerateDistributionError("need at least two distinct latency values")
    lo, hi = min(hist), max(hist)
    n = sum(hist.values())
    total = sum(v * c for v, c in hist.items())
    n0 = s0 = 0
    best_t, best_num, best_den = None, -1, 1
    for t in range(lo + 1, hi + 1):
        c = hist.get(t - 1, 0)
        n0 += c
        s0 += (t - 1) * c
        n1 = n - n0
        s1 = total - s0
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def classify_latency(sample: int, threshold: int) -> str:
    if threshold <= 0:
        raise ContractViolation("threshold must be positive")
    return HIT if sample < threshold else MISS


def read_latencies(text: str, path: str | None = None) -> list[int]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            v = int(line)
        except ValueError:
            raise ParseError(f"expected one integer latency, got {line!r}", lineno, path) from None
        if v <= 0:
            raise ParseError(f"latency must be positive, got {v}", lineno, path)
        out.append(v)
    return out


def histogram_csv(samples: Iterable[int]) -> str:
    lines = ["latency,count"]
    lines += [f"{v},{c}" for v, c in histogram(samples).items()]
    return "\n".join(lines) + "\n"
