"""Exact rank arithmetic and ranking-quality metrics for preference groups.

A group holds G reconstruction candidates of the same source image. Humans
(or a scorer) order the candidates from best to worst; ties are allowed and
are encoded as mid-ranks: every tie block spanning sorted positions a..b is
assigned the value (a+b)/2, so a full tie over four candidates is
[2.5, 2.5, 2.5, 2.5] and the rank values of any valid vector always sum to
G*(G+1)/2.

Rank values are kept as exact `fractions.Fraction`s. Mid-ranks and averages
of mid-ranks are rationals, and tie detection must not depend on float
round-off, so all comparisons in this module are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

__all__ = [
    "RankVector",
    "Candidate",
    "AnnotationGroup",
    "WinRateMatrix",
    "midrank",
    "scores_to_ranks",
    "pairwise_order",
    "agreement",
    "recall_at_1",
    "filter_at_1",
    "aggregate_ranks",
    "preference_label",
    "preference_matrix",
    "annotator_agreement",
    "win_rate_matrix",
    "evaluation_report",
]


def _as_fraction(value: object) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("rank values must be numbers, not bool")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"rank value must be finite, got {value!r}")
        return Fraction(value)
    raise TypeError(f"rank values must be int, float or Fraction, got {type(value).__name__}")


def midrank(values: Sequence[object]) -> tuple[Fraction, ...]:
    """Rank ``values`` ascending, giving tied entries the mean of their positions.

    Positions are 1-based. A block of equal values occupying sorted positions
    a..b receives (a+b)/2, e.g. ``midrank([10, 10, 30])`` is (1.5, 1.5, 3).
    """
    vals = [_as_fraction(v) for v in values]
    order = sorted(range(len(vals)), key=lambda i: vals[i])
    ranks: list[Fraction] = [Fraction(0)] * len(vals)
    start = 0
    while start < len(order):
        stop = start
        while stop + 1 < len(order) and vals[order[stop + 1]] == vals[order[start]]:
            stop += 1
        shared = Fraction(start + stop + 2, 2)  # mean of 1-based positions start+1 .. stop+1
        for pos in range(start, stop + 1):
            ranks[order[pos]] = shared
        start = stop + 1
    return tuple(ranks)


@dataclass(frozen=True)
class RankVector:
    """A per-candidate rank assignment with mid-rank tie encoding.

    Index i holds candidate i's rank; smaller is better. Construction
    validates that the values form a consistent mid-rank assignment
    (re-ranking the stored values reproduces them), which also forces the
    rank sum to G*(G+1)/2.
    """

    ranks: tuple[Fraction, ...]

    def __init__(self, values: Iterable[object]):
        ranks = tuple(_as_fraction(v) for v in values)
        if not ranks:
            raise ValueError("rank vector must not be empty")
        if midrank(ranks) != ranks:
            raise ValueError(f"not a valid mid-rank assignment: {[str(r) for r in ranks]}")
        object.__setattr__(self, "ranks", ranks)

    def __len__(self) -> int:
        return len(self.ranks)

    def __iter__(self):
        return iter(self.ranks)

    def __getitem__(self, i: int) -> Fraction:
        return self.ranks[i]

    def as_floats(self) -> list[float]:
        """Rank values as floats. Mid-ranks are half-integers, so this is exact."""
        return [float(r) for r in self.ranks]

    def best_indices(self) -> set[int]:
        """Indices holding the minimum (best) rank."""
        top = min(self.ranks)
        return {i for i, r in enumerate(self.ranks) if r == top}

    def worst_indices(self) -> set[int]:
        """Indices holding the maximum (worst) rank."""
        bottom = max(self.ranks)
        return {i for i, r in enumerate(self.ranks) if r == bottom}

    def reversed(self) -> "RankVector":
        """The ranking with all preferences flipped (rank r -> G+1-r)."""
        g = Fraction(len(self.ranks) + 1)
        return RankVector([g - r for r in self.ranks])


def scores_to_ranks(scores: Sequence[float], tie_decimals: int | None = 2) -> RankVector:
    """Convert quality scores (higher is better) into a mid-rank vector.

    Scores are canonicalized to ``tie_decimals`` decimal places before
    comparison, matching the two-decimal wire format scorers emit; pass
    ``tie_decimals=None`` to compare raw values exactly. Ties arise only on
    exact equality of the canonicalized values.
    """
    canon: list[float] = []
    for s in scores:
        v = float(s)
        if not math.isfinite(v):
            raise ValueError(f"scores must be finite, got {v!r}")
        canon.append(round(v, tie_decimals) if tie_decimals is not None else v)
    if not canon:
        raise ValueError("no scores given")
    # Negate so the highest score lands at rank 1.
    return RankVector(midrank([-c for c in canon]))


def pairwise_order(rank_i: object, rank_j: object) -> int:
    """Order relation between two rank values: +1 if i is ranked worse
    (larger rank) than j, -1 if better, 0 on a tie."""
    a, b = _as_fraction(rank_i), _as_fraction(rank_j)
    if a > b:
        return 1
    if a < b:
        return -1
    return 0


def _check_aligned(pred: Sequence[RankVector], gt: Sequence[RankVector]) -> None:
    if len(pred) != len(gt):
        raise ValueError(f"group count mismatch: {len(pred)} predictions vs {len(gt)} references")
    for n, (p, g) in enumerate(zip(pred, gt)):
        if len(p) != len(g):
            raise ValueError(f"group {n}: size mismatch ({len(p)} vs {len(g)})")


def agreement(pred: Sequence[RankVector], gt: Sequence[RankVector]) -> float:
    """Fraction of candidate pairs, pooled across all groups, whose order
    relation (better / worse / tied) matches between prediction and reference."""
    _check_aligned(pred, gt)
    matches = 0
    total = 0
    for p, g in zip(pred, gt):
        for i, j in combinations(range(len(g)), 2):
            total += 1
            if pairwise_order(p[i], p[j]) == pairwise_order(g[i], g[j]):
                matches += 1
    if total == 0:
        raise ValueError("no candidate pairs to compare")
    return matches / total


def recall_at_1(pred: Sequence[RankVector], gt: Sequence[RankVector]) -> float:
    """Fraction of groups where some reference-best candidate is also
    predicted best. Tied leaders count as a hit if the sets intersect."""
    _check_aligned(pred, gt)
    if not gt:
        raise ValueError("no groups given")
    hits = sum(1 for p, g in zip(pred, gt) if p.best_indices() & g.best_indices())
    return hits / len(gt)


def filter_at_1(pred: Sequence[RankVector], gt: Sequence[RankVector]) -> float:
    """Fraction of groups where some reference-worst candidate is also
    predicted worst; measures ability to flag the weakest reconstruction."""
    _check_aligned(pred, gt)
    if not gt:
        raise ValueError("no groups given")
    hits = sum(1 for p, g in zip(pred, gt) if p.worst_indices() & g.worst_indices())
    return hits / len(gt)


def aggregate_ranks(annotations: Sequence[RankVector]) -> RankVector:
    """Combine several annotators' rankings of one group by average rank.

    Candidate means are computed exactly and re-ranked with mid-rank ties,
    so candidates whose mean ranks are equal as rationals tie in the result.
    """
    if not annotations:
        raise ValueError("need at least one annotation to aggregate")
    g = len(annotations[0])
    for a in annotations:
        if len(a) != g:
            raise ValueError("annotations cover different candidate counts")
    means = [sum((a[i] for a in annotations), Fraction(0)) / len(annotations) for i in range(g)]
    return RankVector(midrank(means))


def preference_label(final: RankVector, i: int, j: int) -> float:
    """Training label p(x_i, x_j) from a finalized ranking: 1.0 if candidate
    i is ranked better than j, 0.0 if worse, 0.5 on a tie."""
    if i == j:
        raise ValueError("preference label is undefined for a candidate against itself")
    rel = pairwise_order(final[i], final[j])
    if rel < 0:
        return 1.0
    if rel > 0:
        return 0.0
    return 0.5


def preference_matrix(final: RankVector) -> tuple[tuple[float | None, ...], ...]:
    """Full pairwise label matrix for a group; the diagonal is None."""
    g = len(final)
    return tuple(
        tuple(None if i == j else preference_label(final, i, j) for j in range(g))
        for i in range(g)
    )


def annotator_agreement(annotations: Sequence[RankVector]) -> float:
    """Mean pairwise agreement over all annotator pairs for a single group."""
    if len(annotations) < 2:
        raise ValueError("need at least two annotations to measure consensus")
    scores = [agreement([a], [b]) for a, b in combinations(annotations, 2)]
    return sum(scores) / len(scores)


@dataclass(frozen=True)
class Candidate:
    """One reconstruction in a group: identifier, image reference, and the
    tag of the system that produced it."""

    candidate_id: str
    ref: str
    source: str


@dataclass(frozen=True)
class AnnotationGroup:
    """An LR image plus its candidate reconstructions and any collected rankings."""

    group_id: str
    lr_ref: str
    candidates: tuple[Candidate, ...]
    annotations: tuple[tuple[str, RankVector], ...] = ()
    aggregate: RankVector | None = None

    def __post_init__(self) -> None:
        ids = [c.candidate_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate candidate ids in group {self.group_id!r}")
        for annotator_id, ranks in self.annotations:
            if len(ranks) != len(self.candidates):
                raise ValueError(
                    f"annotation by {annotator_id!r} covers {len(ranks)} candidates, "
                    f"group has {len(self.candidates)}"
                )
        if self.aggregate is not None and len(self.aggregate) != len(self.candidates):
            raise ValueError("aggregate rank vector length does not match candidates")

    def final_ranks(self) -> RankVector:
        """The finalized ranking: the stored aggregate, or the average-rank
        aggregation of the collected annotations."""
        if self.aggregate is not None:
            return self.aggregate
        if not self.annotations:
            raise ValueError(f"group {self.group_id!r} has no annotations to aggregate")
        return aggregate_ranks([ranks for _, ranks in self.annotations])


@dataclass
class WinRateMatrix:
    """Pairwise head-to-head results between candidate sources.

    ``rate(a, b)`` is (wins + 0.5 * ties) / comparisons of source a over b,
    or None when the two sources never met. Complementary entries sum to 1.
    """

    sources: tuple[str, ...]
    credit: list[list[float]] = field(repr=False)
    comparisons: list[list[int]] = field(repr=False)

    def rate(self, a: str, b: str) -> float | None:
        i, j = self.sources.index(a), self.sources.index(b)
        if self.comparisons[i][j] == 0:
            return None
        return self.credit[i][j] / self.comparisons[i][j]

    def to_dict(self) -> dict:
        n = len(self.sources)
        rates = [
            [
                None if self.comparisons[i][j] == 0 else self.credit[i][j] / self.comparisons[i][j]
                for j in range(n)
            ]
            for i in range(n)
        ]
        return {
            "sources": list(self.sources),
            "win_rate": rates,
            "comparisons": [row[:] for row in self.comparisons],
        }


def win_rate_matrix(groups: Sequence[AnnotationGroup], sources: Sequence[str]) -> WinRateMatrix:
    """Head-to-head win rates between sources over finalized groups.

    Every candidate pair within a group contributes one comparison to the
    (source_i, source_j) cell and its mirror; ties credit each side 0.5.
    Pairs drawn from the same source are skipped, so the diagonal stays
    absent.
    """
    srcs = tuple(sources)
    if len(set(srcs)) != len(srcs):
        raise ValueError("duplicate source tags")
    index = {s: k for k, s in enumerate(srcs)}
    n = len(srcs)
    credit = [[0.0] * n for _ in range(n)]
    comparisons = [[0] * n for _ in range(n)]
    for group in groups:
        ranks = group.final_ranks()
        for i, j in combinations(range(len(group.candidates)), 2):
            sa = group.candidates[i].source
            sb = group.candidates[j].source
            if sa not in index or sb not in index:
                missing = sa if sa not in index else sb
                raise ValueError(f"group {group.group_id!r} uses unknown source {missing!r}")
            if sa == sb:
                continue
            label = preference_label(ranks, i, j)
            a, b = index[sa], index[sb]
            credit[a][b] += label
            credit[b][a] += 1.0 - label
            comparisons[a][b] += 1
            comparisons[b][a] += 1
    return WinRateMatrix(sources=srcs, credit=credit, comparisons=comparisons)


def evaluation_report(
    pred: Sequence[RankVector],
    gt: Sequence[RankVector],
    annotations: Sequence[Sequence[RankVector]] | None = None,
    mode: str = "raw",
) -> dict:
    """Standard evaluation summary for a prediction run.

    Recall@1 and Filter@1 are always measured against the aggregate
    reference ``gt``. When per-annotator rankings are supplied, agreement is
    reported per annotator and summarized as mean plus the maximum deviation
    from that mean; ``mode`` selects what each annotator is compared to:

    - ``"raw"``: the annotator's own rankings (default),
    - ``"leave_one_out"``: the aggregate of the remaining annotators.

    Without annotations, agreement is measured against ``gt`` directly and
    the deviation is 0.
    """
    _check_aligned(pred, gt)
    if annotations is None:
        agr = agreement(pred, gt)
        dev = 0.0
    else:
        if len(annotations) != len(gt):
            raise ValueError("annotations not aligned with groups")
        counts = {len(a) for a in annotations}
        if len(counts) != 1:
            raise ValueError("all groups must carry the same number of annotations")
        n_annotators = counts.pop()
        if n_annotators < 1:
            raise ValueError("annotation lists are empty")
        per_annotator: list[float] = []
        for a in range(n_annotators):
            if mode == "raw":
                reference = [group_anns[a] for group_anns in annotations]
            elif mode == "leave_one_out":
                if n_annotators < 2:
                    raise ValueError("leave-one-out needs at least two annotators")
                reference = [
                    aggregate_ranks([r for k, r in enumerate(group_anns) if k != a])
                    for group_anns in annotations
                ]
            else:
                raise ValueError(f"unknown agreement mode {mode!r}")
            per_annotator.append(agreement(pred, reference))
        agr = sum(per_annotator) / len(per_annotator)
        dev = max(abs(v - agr) for v in per_annotator)
    return {
        "agreement": agr,
        "agreement_dev": dev,
        "recall_at_1": recall_at_1(pred, gt),
        "filter_at_1": filter_at_1(pred, gt),
    }
