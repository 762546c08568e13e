"""Metric correctness against independently coded oracles.

Each expected value here is either computed by a second implementation
that shares no code with the package (numpy or brute-force loops) or
frozen from a hand calculation noted inline.
"""

from __future__ import annotations

import itertools
import math
import random

import numpy as np
import pytest

from playtest.errors import UndefinedMetricError, ValidationError
from playtest.metrics import (
    distinct2,
    distinct2_by_game,
    fact_accuracy,
    game_mean_errors,
    kendall_tau_b,
    mae,
    opinion_recovery_rate,
    pearson_r,
    tier_confusion,
    wasserstein1,
)


# -- oracles -----------------------------------------------------------


def w1_oracle(a, b) -> float:
    """Integral of |F_a - F_b| over the union grid of breakpoints."""
    pts = np.array(sorted(set(a) | set(b)), dtype=float)
    fa = np.searchsorted(np.sort(a), pts, side="right") / len(a)
    fb = np.searchsorted(np.sort(b), pts, side="right") / len(b)
    return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(pts)))


def tau_b_oracle(x, y) -> float:
    """Pair classification via itertools, tie terms via explicit loops."""
    c = d = 0
    for (xi, yi), (xj, yj) in itertools.combinations(zip(x, y), 2):
        s = (xi - xj) * (yi - yj)
        if s > 0:
            c += 1
        elif s < 0:
            d += 1
    n = len(x)
    n0 = n * (n - 1) / 2
    t1 = sum(1 for i, j in itertools.combinations(range(n), 2) if x[i] == x[j])
    t2 = sum(1 for i, j in itertools.combinations(range(n), 2) if y[i] == y[j])
    return (c - d) / math.sqrt((n0 - t1) * (n0 - t2))


def inversions(perm) -> int:
    return sum(1 for i, j in itertools.combinations(range(len(perm)), 2)
               if perm[i] > perm[j])


# -- wasserstein -------------------------------------------------------


def test_wasserstein_identical_is_zero() -> None:
    assert wasserstein1([3, 5, 7], [7, 5, 3]) == 0.0


def test_wasserstein_point_masses() -> None:
    # Moving unit mass from 2 to 5 costs exactly 3.
    assert wasserstein1([2], [5]) == pytest.approx(3.0)


def test_wasserstein_hand_case() -> None:
    # F_a jumps at 1 and 3, F_b at 2 and 4; |F_a - F_b| is 0.5 on
    # [1,2), 0 on [2,3)? no: F_a(2)=0.5, F_b(2)=0.5 -> 0 on [2,3),
    # 0.5 on [3,4). Total = 0.5 + 0 + 0.5 = 1.0.
    assert wasserstein1([1, 3], [2, 4]) == pytest.approx(1.0)


def test_wasserstein_equal_size_matches_sorted_mean_gap() -> None:
    rng = random.Random(11)
    for _ in range(50):
        n = rng.randint(1, 40)
        a = [rng.uniform(1, 10) for _ in range(n)]
        b = [rng.uniform(1, 10) for _ in range(n)]
        expected = sum(abs(p - q) for p, q in zip(sorted(a), sorted(b))) / n
        assert wasserstein1(a, b) == pytest.approx(expected, abs=1e-12)


def test_wasserstein_unequal_sizes_match_oracle() -> None:
    rng = random.Random(12)
    for _ in range(200):
        a = [rng.choice([1, 2, 5, 7, 9, 10]) for _ in range(rng.randint(1, 30))]
        b = [rng.uniform(1, 10) for _ in range(rng.randint(1, 25))]
        assert wasserstein1(a, b) == pytest.approx(w1_oracle(a, b), abs=1e-9)


def test_wasserstein_translation_and_scale() -> None:
    a = [1.0, 2.0, 6.0]
    b = [2.0, 4.0, 4.0, 8.0]
    base = wasserstein1(a, b)
    shifted = wasserstein1([x + 3 for x in a], [x + 3 for x in b])
    scaled = wasserstein1([x * 2 for x in a], [x * 2 for x in b])
    assert shifted == pytest.approx(base, abs=1e-12)
    assert scaled == pytest.approx(2 * base, abs=1e-12)


def test_wasserstein_symmetry() -> None:
    a, b = [1, 4, 4, 9], [2, 3, 8]
    assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-15)


def test_wasserstein_empty_raises() -> None:
    with pytest.raises(UndefinedMetricError):
        wasserstein1([], [1.0])


# -- kendall tau-b -----------------------------------------------------


def test_tau_b_all_permutations_no_ties() -> None:
    # Closed form without ties: tau = 1 - 4*inversions / (n*(n-1)).
    for n in range(2, 7):
        x = list(range(n))
        for perm in itertools.permutations(range(n)):
            expected = 1 - 4 * inversions(perm) / (n * (n - 1))
            assert kendall_tau_b(x, list(perm)) == pytest.approx(expected, abs=1e-12)


def test_tau_b_tied_vectors_match_oracle() -> None:
    rng = random.Random(13)
    for _ in range(100):
        n = rng.randint(2, 12)
        x = [rng.randint(1, 4) for _ in range(n)]
        y = [rng.randint(1, 4) for _ in range(n)]
        if len(set(x)) == 1 or len(set(y)) == 1:
            with pytest.raises(UndefinedMetricError):
                kendall_tau_b(x, y)
            continue
        assert kendall_tau_b(x, y) == pytest.approx(tau_b_oracle(x, y), abs=1e-12)


def test_tau_b_hand_case_with_tie() -> None:
    # x=[1,2,3], y=[1,2,2]: C=2, D=0, n0=3, n1=0, n2=1 -> 2/sqrt(6).
    assert kendall_tau_b([1, 2, 3], [1, 2, 2]) == pytest.approx(2 / math.sqrt(6), abs=1e-12)


def test_tau_b_constant_vector_undefined() -> None:
    with pytest.raises(UndefinedMetricError):
        kendall_tau_b([1, 1, 1], [1, 2, 3])


def test_tau_b_length_mismatch() -> None:
    with pytest.raises(ValidationError):
        kendall_tau_b([1, 2], [1, 2, 3])


# -- pearson -----------------------------------------------------------


def test_pearson_matches_numpy() -> None:
    rng = random.Random(14)
    for _ in range(100):
        n = rng.randint(2, 30)
        x = [rng.uniform(-5, 5) for _ in range(n)]
        y = [rng.uniform(-5, 5) for _ in range(n)]
        if len(set(x)) == 1 or len(set(y)) == 1:
            continue
        expected = float(np.corrcoef(x, y)[0, 1])
        assert pearson_r(x, y) == pytest.approx(expected, abs=1e-12)


def test_pearson_perfect_and_inverse() -> None:
    assert pearson_r([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_pearson_constant_undefined() -> None:
    with pytest.raises(UndefinedMetricError):
        pearson_r([2, 2, 2], [1, 2, 3])
    with pytest.raises(UndefinedMetricError):
        pearson_r([1], [2])


# -- rating MAE --------------------------------------------------------


def test_mae_macro_over_games() -> None:
    predicted = {"g1": [8, 8, 9], "g2": [3, 5]}
    truth = {"g1": [7, 9, 9], "g2": [6, 6, 6]}
    # naive oracle
    e1 = abs(sum([8, 8, 9]) / 3 - sum([7, 9, 9]) / 3)
    e2 = abs(sum([3, 5]) / 2 - 6.0)
    assert game_mean_errors(predicted, truth) == pytest.approx({"g1": e1, "g2": e2})
    assert mae(predicted, truth) == pytest.approx((e1 + e2) / 2, abs=1e-12)


def test_mae_requires_aligned_games() -> None:
    with pytest.raises(ValidationError):
        mae({"g1": [5]}, {"g1": [5], "g2": [6]})
    with pytest.raises(UndefinedMetricError):
        mae({}, {})


def test_mae_random_against_oracle() -> None:
    rng = random.Random(15)
    for _ in range(50):
        games = {f"g{i}": None for i in range(rng.randint(1, 8))}
        predicted = {g: [rng.uniform(1, 10) for _ in range(rng.randint(1, 20))] for g in games}
        truth = {g: [rng.uniform(1, 10) for _ in range(rng.randint(1, 20))] for g in games}
        expected = np.mean([abs(np.mean(predicted[g]) - np.mean(truth[g])) for g in sorted(games)])
        assert mae(predicted, truth) == pytest.approx(float(expected), abs=1e-12)


# -- distinct-2 --------------------------------------------------------


def test_distinct2_hand_counts() -> None:
    # "a b a b" -> bigrams (a,b), (b,a), (a,b): 2 unique / 3 total.
    assert distinct2(["a b a b"]) == pytest.approx(2 / 3)
    # Bigrams never cross text boundaries.
    assert distinct2(["a b", "b a"]) == pytest.approx(1.0)
    # Case folding and punctuation stripping.
    assert distinct2(["Fun, game!", "fun game"]) == pytest.approx(0.5)


def test_distinct2_no_bigrams_undefined() -> None:
    with pytest.raises(UndefinedMetricError):
        distinct2(["single"])


def test_distinct2_by_game_sorted_keys() -> None:
    result = distinct2_by_game({"b": ["x y"], "a": ["x y x"]})
    assert list(result) == ["a", "b"]
    assert result["a"] == pytest.approx(1.0)


# -- judge-backed scalar helpers ----------------------------------------


def test_fact_accuracy_counts() -> None:
    statuses = ["SUPPORTED"] * 3 + ["INFERRED"] + ["CONTRADICTED"]
    assert fact_accuracy(statuses) == pytest.approx(0.8)
    with pytest.raises(UndefinedMetricError):
        fact_accuracy([])
    with pytest.raises(ValidationError):
        fact_accuracy(["SUPPORTED", "MAYBE"])


def test_opinion_recovery_rate_bounds() -> None:
    assert opinion_recovery_rate(0, 4) == 0.0
    assert opinion_recovery_rate(4, 4) == 100.0
    with pytest.raises(UndefinedMetricError):
        opinion_recovery_rate(0, 0)
    with pytest.raises(ValidationError):
        opinion_recovery_rate(5, 4)


# -- tier confusion ------------------------------------------------------


def test_tier_confusion_identical_predictions_diagonal() -> None:
    truth = {f"g{i}": float(i) for i in range(1, 11)}
    matrix = tier_confusion(truth, truth, tiers=5)
    assert sum(matrix[i][i] for i in range(5)) == 10
    assert sum(sum(row) for row in matrix) == 10
    for i in range(5):
        for j in range(5):
            if i != j:
                assert matrix[i][j] == 0


def test_tier_confusion_rows_follow_truth_tiers() -> None:
    truth = {f"g{i}": float(i) for i in range(1, 11)}
    # Predict everything at the same (highest) value: every game lands
    # in predicted tier 1, rows keep the truth tiers.
    predicted = {g: 100.0 for g in truth}
    matrix = tier_confusion(predicted, truth, tiers=5)
    for row in matrix:
        assert sum(row) == 2
        assert row[0] == 2


def test_tier_confusion_swap_crosses_boundary() -> None:
    truth = {f"g{i}": float(i) for i in range(1, 11)}
    predicted = dict(truth)
    predicted["g10"], predicted["g1"] = predicted["g1"], predicted["g10"]
    matrix = tier_confusion(predicted, truth, tiers=5)
    assert matrix[0][4] == 1    # truth tier 1 predicted as tier 5
    assert matrix[4][0] == 1
    assert sum(sum(row) for row in matrix) == 10


def test_tier_confusion_needs_enough_games() -> None:
    means = {f"g{i}": float(i) for i in range(4)}
    with pytest.raises(UndefinedMetricError):
        tier_confusion(means, means, tiers=5)
