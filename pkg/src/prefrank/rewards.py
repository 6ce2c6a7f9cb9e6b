"""Reward computation for preference-aligned scorer training.

Three reward families live here:

- Rank rewards: each scored rollout of a candidate is compared against the
  other candidates' score distributions under a Thurstone paired-comparison
  model, and the predicted win probabilities are scored against human
  preference labels with a Bernoulli fidelity term.
- Format rewards: a binary gate over raw scorer output requiring one
  thinking block followed by one answer block holding an in-range score.
- Composite rewards: the weighted mix of reference-ranking, perceptual
  distance and no-reference quality terms used for downstream generator
  training, plus group-normalized advantages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import fsum
from pathlib import Path
from typing import Sequence

from prefrank.ranking import RankVector, preference_matrix

__all__ = [
    "GAMMA_DEFAULT",
    "SCORE_MIN",
    "SCORE_MAX",
    "DegenerateDistributionError",
    "ScoreDistribution",
    "GroupRollout",
    "FormatVerdict",
    "RewardBreakdown",
    "RewardConfig",
    "normal_cdf",
    "thurstone_prob",
    "bernoulli_fidelity",
    "rank_reward",
    "format_reward",
    "composite_reward",
    "composite_group",
    "group_advantages",
]

GAMMA_DEFAULT = 1e-6
SCORE_MIN = 1.0
SCORE_MAX = 5.0

_SQRT2 = math.sqrt(2.0)
_P_FLOOR = math.nextafter(0.0, 1.0)
_P_CEIL = math.nextafter(1.0, 0.0)


class DegenerateDistributionError(ValueError):
    """Raised when a paired comparison has zero total variance and no
    stabilizing gamma, leaving the win probability undefined."""


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the error function.

    math.erf is correctly rounded to double precision, so the absolute
    error is far below the 1e-7 the scoring pipeline requires, and the
    exact odd symmetry of erf makes normal_cdf(z) + normal_cdf(-z) == 1.
    """
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"z must be finite, got {z!r}")
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


@dataclass(frozen=True)
class ScoreDistribution:
    """Empirical distribution of one candidate's K rollout scores.

    Mean and variance are population statistics over the K samples
    (division by K, not K-1).
    """

    samples: tuple[float, ...]

    def __init__(self, samples: Sequence[float]):
        vals = tuple(float(s) for s in samples)
        if not vals:
            raise ValueError("a score distribution needs at least one sample")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("score samples must be finite")
        object.__setattr__(self, "samples", vals)

    @property
    def k(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return fsum(self.samples) / len(self.samples)

    @property
    def variance(self) -> float:
        m = self.mean
        return fsum((s - m) ** 2 for s in self.samples) / len(self.samples)


def thurstone_prob(
    q_ki: float,
    dist_i: ScoreDistribution,
    dist_j: ScoreDistribution,
    gamma: float = GAMMA_DEFAULT,
) -> float:
    """Predicted probability that candidate i beats candidate j, judging
    rollout score ``q_ki`` against j's mean under pooled uncertainty:

        p = Phi((q_ki - mean_j) / sqrt(var_i + var_j + gamma))

    The result is clamped into the open interval (0, 1) so downstream
    fidelity terms never hit an exact 0 or 1 through float underflow.
    """
    if not math.isfinite(q_ki):
        raise ValueError("rollout score must be finite")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    denom_sq = dist_i.variance + dist_j.variance + gamma
    if denom_sq <= 0.0:
        raise DegenerateDistributionError(
            "both distributions are constant and gamma is 0; "
            "the paired comparison is undefined"
        )
    p = normal_cdf((q_ki - dist_j.mean) / math.sqrt(denom_sq))
    return min(max(p, _P_FLOOR), _P_CEIL)


def bernoulli_fidelity(p: float, p_hat: float) -> float:
    """Fidelity between a preference label p in {0, 0.5, 1} and a predicted
    win probability: sqrt(p * p_hat) + sqrt((1-p) * (1-p_hat)).

    Equals 1 exactly when p_hat == p and decays smoothly toward 0 as the
    prediction moves to the opposite certainty.
    """
    if p not in (0.0, 0.5, 1.0):
        raise ValueError(f"label must be 0, 0.5 or 1, got {p!r}")
    if not (0.0 <= p_hat <= 1.0):
        raise ValueError(f"predicted probability must lie in [0, 1], got {p_hat!r}")
    return math.sqrt(p * p_hat) + math.sqrt((1.0 - p) * (1.0 - p_hat))


@dataclass(frozen=True)
class GroupRollout:
    """Scored rollouts for one group: per-candidate distributions, the
    pairwise label matrix, and the stabilizing gamma.

    ``labels`` may be None when only distributions are needed (evaluation
    runs); rank rewards then cannot be computed. When present, the matrix
    is square with a None diagonal and complementary off-diagonal entries.
    """

    distributions: tuple[ScoreDistribution, ...]
    labels: tuple[tuple[float | None, ...], ...] | None = None
    gamma: float = GAMMA_DEFAULT

    def __post_init__(self) -> None:
        if not self.distributions:
            raise ValueError("a group needs at least one candidate")
        ks = {d.k for d in self.distributions}
        if len(ks) != 1:
            raise ValueError(f"all candidates must have the same rollout count, got {sorted(ks)}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.labels is not None:
            g = len(self.distributions)
            if len(self.labels) != g or any(len(row) != g for row in self.labels):
                raise ValueError("label matrix must be square over the candidates")
            for i in range(g):
                for j in range(g):
                    if i == j:
                        continue
                    lij, lji = self.labels[i][j], self.labels[j][i]
                    if lij is None or lji is None:
                        raise ValueError(f"missing label for pair ({i}, {j})")
                    if lij not in (0.0, 0.5, 1.0):
                        raise ValueError(f"label ({i}, {j}) must be 0, 0.5 or 1, got {lij!r}")
                    if lij + lji != 1.0:
                        raise ValueError(f"labels for pair ({i}, {j}) are not complementary")

    @property
    def size(self) -> int:
        return len(self.distributions)

    @property
    def k(self) -> int:
        return self.distributions[0].k

    @classmethod
    def from_scores(
        cls,
        scores: Sequence[Sequence[float]],
        ranks: RankVector | None = None,
        gamma: float = GAMMA_DEFAULT,
    ) -> "GroupRollout":
        """Build a rollout group from raw per-candidate score lists, deriving
        the label matrix from a finalized ranking when one is given."""
        dists = tuple(ScoreDistribution(row) for row in scores)
        labels = None
        if ranks is not None:
            if len(ranks) != len(dists):
                raise ValueError("ranking does not cover the candidates")
            labels = preference_matrix(ranks)
        return cls(distributions=dists, labels=labels, gamma=gamma)


def rank_reward(k: int, i: int, group: GroupRollout) -> float:
    """Reward for candidate i's k-th rollout: mean Bernoulli fidelity between
    the human labels and the Thurstone win probabilities of that rollout's
    score against every other candidate."""
    if group.labels is None:
        raise ValueError("rank rewards need a label matrix; this group has none")
    g = group.size
    if g < 2:
        raise ValueError("rank rewards need at least two candidates")
    if not 0 <= i < g:
        raise ValueError(f"candidate index {i} out of range for group of {g}")
    if not 0 <= k < group.k:
        raise ValueError(f"rollout index {k} out of range for K={group.k}")
    dist_i = group.distributions[i]
    q = dist_i.samples[k]
    total = 0.0
    for j in range(g):
        if j == i:
            continue
        p_hat = thurstone_prob(q, dist_i, group.distributions[j], group.gamma)
        total += bernoulli_fidelity(group.labels[i][j], p_hat)
    return total / (g - 1)


# --- format gating -----------------------------------------------------------

_TAGS = ("<thinking>", "</thinking>", "<answer>", "</answer>")


@dataclass(frozen=True)
class FormatVerdict:
    """Outcome of the format gate: reward is 1.0 or 0.0; parsed_score and
    thinking_text are populated only for well-formed output."""

    reward: float
    parsed_score: float | None = None
    thinking_text: str | None = None


def format_reward(raw_output: str) -> FormatVerdict:
    """Binary gate over raw scorer output.

    Passes only when the text contains exactly one <thinking>...</thinking>
    block followed by exactly one <answer>...</answer> block whose content
    (after stripping whitespace) parses as a number in [1.00, 5.00]. Text
    outside the two blocks is permitted; any structural violation or
    out-of-range score yields reward 0.
    """
    if not isinstance(raw_output, str):
        raise TypeError("raw scorer output must be a string")
    fail = FormatVerdict(reward=0.0)
    if any(raw_output.count(tag) != 1 for tag in _TAGS):
        return fail
    t_open = raw_output.index("<thinking>")
    t_close = raw_output.index("</thinking>")
    a_open = raw_output.index("<answer>")
    a_close = raw_output.index("</answer>")
    if not (t_open < t_close < a_open < a_close):
        return fail
    answer = raw_output[a_open + len("<answer>") : a_close].strip()
    try:
        score = float(answer)
    except ValueError:
        return fail
    if not (SCORE_MIN <= score <= SCORE_MAX):  # also rejects nan/inf
        return fail
    thinking = raw_output[t_open + len("<thinking>") : t_close]
    return FormatVerdict(reward=1.0, parsed_score=score, thinking_text=thinking)


# --- composite rewards and advantages ---------------------------------------


@dataclass(frozen=True)
class RewardBreakdown:
    """Component rewards and their weighted combination
    total = w_ref * r_ref - w_lpips * r_lpips + w_deqa * r_deqa."""

    r_ref: float
    r_lpips: float
    r_deqa: float
    weights: tuple[float, float, float]
    total: float


def composite_reward(
    r_ref: float,
    r_lpips: float,
    r_deqa: float,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
) -> RewardBreakdown:
    """Combine the three training signals; the perceptual distance term
    enters with a minus sign since lower distance is better."""
    w = tuple(float(x) for x in weights)
    if len(w) != 3:
        raise ValueError("weights must have exactly three entries")
    if any(x < 0 for x in w):
        raise ValueError("weights must be non-negative")
    if r_lpips < 0:
        raise ValueError("perceptual distance must be non-negative")
    for name, v in (("r_ref", r_ref), ("r_lpips", r_lpips), ("r_deqa", r_deqa)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    total = w[0] * r_ref - w[1] * r_lpips + w[2] * r_deqa
    return RewardBreakdown(r_ref=r_ref, r_lpips=r_lpips, r_deqa=r_deqa, weights=w, total=total)


def _zscores(values: Sequence[float], eps: float) -> list[float]:
    mean = fsum(values) / len(values)
    std = math.sqrt(fsum((v - mean) ** 2 for v in values) / len(values))
    if std + eps == 0.0:
        return [0.0] * len(values)
    return [(v - mean) / (std + eps) for v in values]


def composite_group(
    r_refs: Sequence[float],
    r_lpips: Sequence[float],
    r_deqas: Sequence[float],
    weights: Sequence[float] = (1.0, 1.0, 1.0),
    normalize: bool = False,
    eps: float = 1e-8,
) -> list[RewardBreakdown]:
    """Composite rewards for a whole generation group.

    With ``normalize`` each component is z-scored across the group before
    weighting, which equalizes component scales; the default leaves raw
    component values untouched.
    """
    n = len(r_refs)
    if not (len(r_lpips) == len(r_deqas) == n):
        raise ValueError("component reward lists must have equal lengths")
    if n == 0:
        raise ValueError("empty group")
    if normalize:
        refs = _zscores([float(v) for v in r_refs], eps)
        lpips = _zscores([float(v) for v in r_lpips], eps)
        deqas = _zscores([float(v) for v in r_deqas], eps)
        w = tuple(float(x) for x in weights)
        if len(w) != 3 or any(x < 0 for x in w):
            raise ValueError("weights must be three non-negative numbers")
        return [
            RewardBreakdown(
                r_ref=refs[i],
                r_lpips=lpips[i],
                r_deqa=deqas[i],
                weights=w,
                total=w[0] * refs[i] - w[1] * lpips[i] + w[2] * deqas[i],
            )
            for i in range(n)
        ]
    return [composite_reward(r_refs[i], r_lpips[i], r_deqas[i], weights) for i in range(n)]


def group_advantages(
    rewards: Sequence[float],
    clip_max: float = 5.0,
    eps: float = 1e-8,
) -> list[float]:
    """Clipped z-score advantages within one generation group:

        a_i = clamp((r_i - mean) / (std + eps), -clip_max, clip_max)

    with population standard deviation. A constant reward vector yields all
    zeros. ``eps`` may be 0 for exact z-scores on non-constant groups.
    """
    rs = [float(r) for r in rewards]
    if len(rs) < 2:
        raise ValueError("advantages need at least two rewards")
    if any(not math.isfinite(r) for r in rs):
        raise ValueError("rewards must be finite")
    if clip_max <= 0:
        raise ValueError("clip_max must be positive")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mean = fsum(rs) / len(rs)
    std = math.sqrt(fsum((r - mean) ** 2 for r in rs) / len(rs))
    denom = std + eps
    if denom == 0.0:
        return [0.0] * len(rs)
    return [max(-clip_max, min(clip_max, (r - mean) / denom)) for r in rs]


@dataclass(frozen=True)
class RewardConfig:
    """Hyperparameters shared across reward computation.

    Defaults: gamma 1e-6, unit weights for all three composite terms,
    advantage clip 5.0, eps 1e-8, and 6 rollouts per candidate (generator
    fine-tuning typically raises k_rollouts to 12).
    """

    gamma: float = GAMMA_DEFAULT
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    clip_max: float = 5.0
    eps: float = 1e-8
    k_rollouts: int = 6

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be three non-negative numbers")
        if self.clip_max <= 0:
            raise ValueError("clip_max must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.k_rollouts < 1:
            raise ValueError("k_rollouts must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        known = {"gamma", "weights", "clip_max", "eps", "k_rollouts"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown reward config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "weights" in kwargs:
            kwargs["weights"] = tuple(float(w) for w in kwargs["weights"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RewardConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: reward config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "weights": list(self.weights),
            "clip_max": self.clip_max,
            "eps": self.eps,
            "k_rollouts": self.k_rollouts,
        }
