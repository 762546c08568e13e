"""Deterministic rating and text metrics.

Everything here is pure computation over samples already collected:
rating-distribution distances, rank correlation across games, lexical
diversity and tier confusion. Judge-backed measures (fact accuracy,
perspective diversity, opinion recovery) live in the evaluation module.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from typing import Mapping, Sequence

from .errors import UndefinedMetricError, ValidationError
from .sampling import equal_frequency_edges, quantile_group


def _mean(values: Sequence[float]) -> float:
    if not values:
        raise UndefinedMetricError("mean of empty sample")
    return sum(values) / len(values)


def _aligned_games(predicted: Mapping[str, Sequence[float]],
                   truth: Mapping[str, Sequence[float]]) -> list[str]:
    missing = sorted(set(truth) - set(predicted))
    extra = sorted(set(predicted) - set(truth))
    if missing or extra:
        raise ValidationError(
            f"game sets differ (missing from predicted: {missing}, unexpected: {extra})")
    if not truth:
        raise UndefinedMetricError("no games to compare")
    return sorted(truth)


def game_mean_errors(predicted: Mapping[str, Sequence[float]],
                     truth: Mapping[str, Sequence[float]]) -> dict[str, float]:
    """Per-game absolute difference of mean ratings."""
    games = _aligned_games(predicted, truth)
    return {g: abs(_mean(predicted[g]) - _mean(truth[g])) for g in games}


def mae(predicted: Mapping[str, Sequence[float]],
        truth: Mapping[str, Sequence[float]]) -> float:
    """Mean over games of |mean(predicted) - mean(truth)| (macro)."""
    errors = game_mean_errors(predicted, truth)
    return _mean(list(errors.values()))


def wasserstein1(a: Sequence[float], b: Sequence[float]) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions.

    Computed as the integral of |F_a - F_b| over the merged support;
    no binning or approximation.
    """
    if not a or not b:
        raise UndefinedMetricError("wasserstein1 of empty sample")
    xs = sorted(a)
    ys = sorted(b)
    na, nb = len(xs), len(ys)
    total = 0.0
    ia = ib = 0
    prev: float | None = None
    while ia < na or ib < nb:
        if ia < na and (ib >= nb or xs[ia] <= ys[ib]):
            cur = xs[ia]
        else:
            cur = ys[ib]
        if prev is not None and cur > prev:
            total += abs(ia / na - ib / nb) * (cur - prev)
        while ia < na and xs[ia] == cur:
            ia += 1
        while ib < nb and ys[ib] == cur:
            ib += 1
        prev = cur
    return total


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall rank correlation with tie correction (tau-b).

    Pair counts are exact integers; the result is (C - D) /
    sqrt((n0 - n1) * (n0 - n2)) with n1, n2 the tied-pair counts in
    each vector.
    """
    n = len(x)
    if n != len(y):
        raise ValidationError(f"length mismatch: {n} != {len(y)}")
    if n < 2:
        raise UndefinedMetricError("kendall_tau_b needs at least 2 points")
    concordant = discordant = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            prod = dx * dy
            if prod > 0:
                concordant += 1
            elif prod < 0:
                discordant += 1
    n0 = n * (n - 1) // 2
    n1 = sum(t * (t - 1) // 2 for t in Counter(x).values())
    n2 = sum(t * (t - 1) // 2 for t in Counter(y).values())
    denom_sq = (n0 - n1) * (n0 - n2)
    if denom_sq == 0:
        raise UndefinedMetricError("kendall_tau_b undefined: a vector is constant")
    return (concordant - discordant) / math.sqrt(denom_sq)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    if n != len(y):
        raise ValidationError(f"length mismatch: {n} != {len(y)}")
    if n < 2:
        raise UndefinedMetricError("pearson_r needs at least 2 points")
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedMetricError("pearson_r undefined: a vector is constant")
    return cov / math.sqrt(vx * vy)


_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def _tokens(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def distinct2(texts: Sequence[str]) -> float:
    """Corpus-level bigram diversity: unique bigrams / total bigrams.

    Tokens are lowercased, punctuation-stripped, whitespace-split;
    bigrams never cross text boundaries.
    """
    seen: set[tuple[str, str]] = set()
    total = 0
    for text in texts:
        toks = _tokens(text)
        for i in range(len(toks) - 1):
            seen.add((toks[i], toks[i + 1]))
            total += 1
    if total == 0:
        raise UndefinedMetricError("distinct2 undefined: corpus has no bigrams")
    return len(seen) / total


def distinct2_by_game(texts_by_game: Mapping[str, Sequence[str]]) -> dict[str, float]:
    return {g: distinct2(ts) for g, ts in sorted(texts_by_game.items())}


def fact_accuracy(statuses: Sequence[str]) -> float:
    """Fraction of claims that are SUPPORTED or INFERRED."""
    if not statuses:
        raise UndefinedMetricError("fact_accuracy undefined: no claims")
    ok = sum(1 for s in statuses if s in ("SUPPORTED", "INFERRED"))
    bad = sum(1 for s in statuses if s == "CONTRADICTED")
    if ok + bad != len(statuses):
        unknown = [s for s in statuses if s not in ("SUPPORTED", "INFERRED", "CONTRADICTED")]
        raise ValidationError(f"status not in vocabulary: {unknown[:3]}")
    return ok / len(statuses)


def opinion_recovery_rate(matched: int, total: int) -> float:
    """Recovered viewpoints as a percentage of the ground-truth list."""
    if total <= 0:
        raise UndefinedMetricError("opinion recovery undefined: empty checklist")
    if matched < 0 or matched > total:
        raise ValidationError(f"matched out of [0, {total}]: {matched}")
    return matched / total * 100.0


def tier_confusion(predicted_means: Mapping[str, float],
                   truth_means: Mapping[str, float],
                   tiers: int = 5) -> list[list[int]]:
    """Confusion matrix of quality tiers across games.

    Cut points are equal-frequency quantiles of the truth means and are
    applied to both sides; tier 1 is the highest band. Rows index the
    truth tier, columns the predicted tier.
    """
    games = _aligned_games(predicted_means, truth_means)
    if len(games) < tiers:
        raise UndefinedMetricError(f"tier_confusion needs >= {tiers} games, got {len(games)}")
    edges = equal_frequency_edges([truth_means[g] for g in games], tiers)
    matrix = [[0] * tiers for _ in range(tiers)]
    for g in games:
        truth_tier = tiers - quantile_group(truth_means[g], edges)
        pred_tier = tiers - quantile_group(predicted_means[g], edges)
        matrix[truth_tier - 1][pred_tier - 1] += 1
    return matrix
