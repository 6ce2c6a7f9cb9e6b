"""Independent reference implementations used to pin expected test values.

Everything here is written against the definitions only, deliberately not
sharing code paths with the package: counting formulas instead of sorting,
ordered-pair enumeration instead of combinations, mpmath instead of
math.erf. Tests freeze values produced by these oracles and assert the
package reproduces them.
"""

from __future__ import annotations

import math
from itertools import permutations

import mpmath

mpmath.mp.dps = 40


# --- ranking ---------------------------------------------------------------

def oracle_midrank(values: list[float]) -> list[float]:
    """Mid-rank by counting: rank_i = #strictly-less + (#equal + 1) / 2."""
    out = []
    for v in values:
        less = sum(1 for w in values if w < v)
        eq = sum(1 for w in values if w == v)
        out.append(less + (eq + 1) / 2)
    return out


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def oracle_agreement(pred: list[list[float]], gt: list[list[float]]) -> float:
    """Pooled ordered-pair order-relation match."""
    match = 0
    total = 0
    for p, g in zip(pred, gt, strict=True):
        n = len(g)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                total += 1
                if _sign(p[i] - p[j]) == _sign(g[i] - g[j]):
                    match += 1
    return match / total


def oracle_recall_at_1(pred: list[list[float]], gt: list[list[float]]) -> float:
    hits = 0
    for p, g in zip(pred, gt, strict=True):
        best_p = {i for i, r in enumerate(p) if r == min(p)}
        best_g = {i for i, r in enumerate(g) if r == min(g)}
        hits += bool(best_p & best_g)
    return hits / len(gt)


def oracle_filter_at_1(pred: list[list[float]], gt: list[list[float]]) -> float:
    hits = 0
    for p, g in zip(pred, gt, strict=True):
        worst_p = {i for i, r in enumerate(p) if r == max(p)}
        worst_g = {i for i, r in enumerate(g) if r == max(g)}
        hits += bool(worst_p & worst_g)
    return hits / len(gt)


def oracle_aggregate(annotations: list[list[float]]) -> list[float]:
    """Average rank per candidate, re-ranked with mid-rank ties.

    Annotation ranks are half-integers, so float sums are exact and tie
    detection on the means is reliable.
    """
    n = len(annotations)
    g = len(annotations[0])
    means = [sum(a[i] for a in annotations) / n for i in range(g)]
    return oracle_midrank(means)


def all_weak_orderings(n: int) -> list[list[float]]:
    """Every mid-rank vector over n candidates (75 for n=4), via brute force:
    each surjection onto levels 1..k induces one weak ordering."""
    seen: dict[tuple[float, ...], list[float]] = {}
    for levels in _level_assignments(n):
        ranks = tuple(oracle_midrank([float(v) for v in levels]))
        seen.setdefault(ranks, list(ranks))
    return [list(v) for v in sorted(seen)]


def _level_assignments(n: int):
    for assign in _all_tuples(n, n):
        used = sorted(set(assign))
        if used == list(range(1, len(used) + 1)):
            yield assign


def _all_tuples(n: int, top: int):
    if n == 0:
        yield ()
        return
    for rest in _all_tuples(n - 1, top):
        for v in range(1, top + 1):
            yield rest + (v,)


# --- rewards ---------------------------------------------------------------

def oracle_normal_cdf(z: float) -> float:
    """Standard normal CDF at 40 significant digits via mpmath's erfc."""
    return float(0.5 * mpmath.erfc(-mpmath.mpf(z) / mpmath.sqrt(2)))


def oracle_thurstone(q: float, mu_j: float, var_i: float, var_j: float, gamma: float) -> float:
    z = (mpmath.mpf(q) - mpmath.mpf(mu_j)) / mpmath.sqrt(
        mpmath.mpf(var_i) + mpmath.mpf(var_j) + mpmath.mpf(gamma)
    )
    return float(0.5 * mpmath.erfc(-z / mpmath.sqrt(2)))


def oracle_fidelity(p: float, p_hat: float) -> float:
    return float(
        mpmath.sqrt(mpmath.mpf(p) * mpmath.mpf(p_hat))
        + mpmath.sqrt((1 - mpmath.mpf(p)) * (1 - mpmath.mpf(p_hat)))
    )


def oracle_advantages(rewards: list[float], clip_max: float, eps: float) -> list[float]:
    n = len(rewards)
    mean = sum(rewards) / n
    std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / n)
    out = []
    for r in rewards:
        if std + eps == 0.0:
            out.append(0.0)
            continue
        a = (r - mean) / (std + eps)
        out.append(max(-clip_max, min(clip_max, a)))
    return out


# --- crops -----------------------------------------------------------------

def oracle_iou(a: tuple, b: tuple) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def oracle_fuse(global_score: float, global_area: float, crops: list[tuple[float, float]]) -> float:
    """crops: list of (score, area)."""
    num = global_score * global_area + sum(s * a for s, a in crops)
    den = global_area + sum(a for _, a in crops)
    return num / den


def oracle_top_k_diverse(boxes: list[tuple], areas: list[float], k: int) -> list[int]:
    """Indices of the k boxes with lowest mean IoU against all others;
    ties prefer larger area, then smaller input index."""
    n = len(boxes)
    if n <= k:
        return list(range(n))
    means = []
    for i in range(n):
        vals = [oracle_iou(boxes[i], boxes[j]) for j in range(n) if j != i]
        means.append(sum(vals) / len(vals))
    order = sorted(range(n), key=lambda i: (means[i], -areas[i], i))
    return sorted(order[:k])
