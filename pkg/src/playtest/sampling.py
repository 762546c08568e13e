"""Seeded allocation helpers shared by curation, simulation and splits."""

from __future__ import annotations

import math
import random
from typing import Mapping, Sequence

from .errors import ValidationError


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integer quotas proportional to weights, summing exactly to total.

    Floors of the ideal shares are topped up in order of descending
    fractional remainder; remainder ties break toward the earlier index,
    so callers control tie priority via input order. Guarantees
    |quota_i - total * p_i| < 1 for every i.
    """
    if total < 0:
        raise ValidationError(f"total out of [0, inf]: {total}")
    if any(w < 0 for w in weights):
        raise ValidationError("weights must be non-negative")
    mass = float(sum(weights))
    if not weights or mass == 0.0:
        if total > 0:
            raise ValidationError("cannot allocate a positive total over zero weight")
        return [0] * len(weights)
    ideal = [total * (w / mass) for w in weights]
    base = [math.floor(x) for x in ideal]
    leftover = total - sum(base)
    by_remainder = sorted(range(len(weights)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in by_remainder[:leftover]:
        base[i] += 1
    return base


def rating_bin(rating: float, lo: float = 1.0, hi: float = 10.0) -> int:
    """Unit-width bin index for a rating: [1,2) -> 0 ... [9,10] -> 8.

    The top edge folds into the last bin so a perfect score is binned
    with [9,10).
    """
    if not lo <= rating <= hi:
        raise ValidationError(f"rating out of [{lo:g}, {hi:g}]: {rating}")
    idx = int(math.floor(rating - lo))
    return min(idx, int(hi - lo) - 1)


N_RATING_BINS = 9


def equal_frequency_edges(values: Sequence[float], groups: int) -> list[float]:
    """Internal cut points (groups-1 of them) splitting values into
    equal-frequency groups, computed by linear interpolation."""
    if groups < 1:
        raise ValidationError(f"groups out of [1, inf]: {groups}")
    if not values:
        raise ValidationError("cannot compute quantiles of an empty sequence")
    ordered = sorted(values)
    edges = []
    n = len(ordered)
    for g in range(1, groups):
        q = g / groups
        pos = q * (n - 1)
        lo_i = math.floor(pos)
        hi_i = math.ceil(pos)
        frac = pos - lo_i
        edges.append(ordered[lo_i] * (1 - frac) + ordered[hi_i] * frac)
    return edges


def quantile_group(value: float, edges: Sequence[float]) -> int:
    """Group index (0-based, ascending) of value under precomputed cut
    points. Values on a cut point fall into the higher group."""
    g = 0
    for edge in edges:
        if value >= edge:
            g += 1
    return g


def stratified_split(items: Mapping[str, tuple[float, float]], per_stratum: int,
                     seed: int, exclude: set[str] | None = None,
                     weight_bands: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0),
                     rating_groups: int = 5) -> tuple[list[str], dict[str, int]]:
    """Draw an evaluation split stratified by weight band x rating group.

    ``items`` maps id -> (weight, avg_rating). Weight bands are
    [1,2), [2,3), [3,4), [4,5]; rating groups are equal-frequency
    quantiles of the supplied ratings. From each non-empty stratum,
    ``per_stratum`` ids are drawn uniformly with the given seed.
    Ids in ``exclude`` (e.g. training games) are removed before
    sampling; the count removed is reported per stratum key "excluded".
    """
    if per_stratum < 1:
        raise ValidationError(f"per_stratum out of [1, inf]: {per_stratum}")
    exclude = exclude or set()
    excluded_n = sum(1 for gid in items if gid in exclude)
    eligible = {gid: wv for gid, wv in items.items() if gid not in exclude}
    if not eligible:
        return [], {"excluded": excluded_n}

    edges = equal_frequency_edges([r for _, r in eligible.values()], rating_groups)
    strata: dict[tuple[int, int], list[str]] = {}
    for gid in sorted(eligible):
        weight, rating = eligible[gid]
        band = 0
        for b in range(len(weight_bands) - 1):
            if weight >= weight_bands[b]:
                band = b
        group = quantile_group(rating, edges)
        strata.setdefault((band, group), []).append(gid)

    rng = random.Random(seed)
    chosen: list[str] = []
    sizes: dict[str, int] = {"excluded": excluded_n}
    for key in sorted(strata):
        pool = strata[key]
        take = min(per_stratum, len(pool))
        picks = rng.sample(pool, take)
        chosen.extend(sorted(picks))
        sizes[f"band{key[0]}_q{key[1]}"] = take
    return chosen, sizes
