"""Item popularity, mainstreaminess, user grouping and profile correlations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import InteractionStore
from .exceptions import DegenerateInputError, ValidationError
from .validation import check_positive_int, check_unit_interval

DEFAULT_POPULAR_QUANTILE = 0.2

GROUP_LOW = "LowMS"
GROUP_MED = "MedMS"
GROUP_HIGH = "HighMS"
GROUP_NAMES = (GROUP_LOW, GROUP_MED, GROUP_HIGH)


class PopularityTable:
    """Per-item listener counts, popularity ratios and top-quantile flags.

    popularity(a) is the fraction of users who listened to item a at least
    once. Flags stay unset until :func:`flag_top_popular` produces a flagged
    copy.
    """

    def __init__(
        self,
        item_ids: Sequence[str],
        listener_counts: np.ndarray,
        n_users: int,
        is_popular: np.ndarray | None = None,
        quantile: float | None = None,
    ):
        self._item_ids = tuple(item_ids)
        self._listener_counts = np.asarray(listener_counts, dtype=np.int64)
        self._n_users = int(n_users)
        if is_popular is None:
            is_popular = np.zeros(len(self._item_ids), dtype=bool)
        self._is_popular = np.asarray(is_popular, dtype=bool)
        self._quantile = quantile
        self._item_index = {iid: k for k, iid in enumerate(self._item_ids)}
        self._popularity = self._listener_counts / float(self._n_users)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._item_ids

    @property
    def n_items(self) -> int:
        return len(self._item_ids)

    @property
    def n_users(self) -> int:
        return self._n_users

    @property
    def listener_counts(self) -> np.ndarray:
        return self._ro(self._listener_counts)

    @property
    def popularity(self) -> np.ndarray:
        return self._ro(self._popularity)

    @property
    def is_popular(self) -> np.ndarray:
        return self._ro(self._is_popular)

    @property
    def quantile(self) -> float | None:
        """Quantile used for flagging, or None if flags are unset."""
        return self._quantile

    @property
    def flagged(self) -> bool:
        return self._quantile is not None

    @staticmethod
    def _ro(arr: np.ndarray) -> np.ndarray:
        view = arr.view()
        view.flags.writeable = False
        return view

    def item_idx(self, item_id: str) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise KeyError(f"unknown item {item_id!r}") from None

    def popularity_of(self, item_id: str) -> float:
        return float(self._popularity[self.item_idx(item_id)])

    def popular_item_ids(self) -> frozenset[str]:
        return frozenset(
            self._item_ids[i] for i in np.flatnonzero(self._is_popular)
        )


@dataclass(frozen=True)
class MainstreaminessScores:
    """Per-user overlap with the aggregate listening distribution, in [0, 1]."""

    user_ids: tuple[str, ...]
    scores: np.ndarray

    def score_of(self, user_id: str) -> float:
        try:
            pos = self.user_ids.index(user_id)
        except ValueError:
            raise KeyError(f"unknown user {user_id!r}") from None
        return float(self.scores[pos])


@dataclass(frozen=True)
class UserGroups:
    """Equal-size low / medium / high mainstreaminess user groups."""

    low: tuple[str, ...]
    med: tuple[str, ...]
    high: tuple[str, ...]
    group_size: int

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return {GROUP_LOW: self.low, GROUP_MED: self.med, GROUP_HIGH: self.high}

    def group_of(self, user_id: str) -> str | None:
        for name, members in self.as_dict().items():
            if user_id in set(members):
                return name
        return None

    def all_users(self) -> tuple[str, ...]:
        return self.low + self.med + self.high


@dataclass(frozen=True)
class CorrelationReport:
    """Profile-size correlation analysis over all users."""

    r_size_vs_popular_count: float
    r_size_vs_avg_popularity: float
    points: tuple[tuple[str, int, int, float], ...]
    """Per-user (user_id, profile_size, popular_count, mean_popularity)."""


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def item_popularity(store: InteractionStore) -> PopularityTable:
    """Distinct-listener counts and listener ratios for every catalog item."""
    if store.n_interactions == 0:
        raise ValidationError("cannot compute popularity of an empty store")
    listener_counts = np.bincount(store.items, minlength=store.n_items)
    return PopularityTable(store.item_ids, listener_counts, store.n_users)


def flag_top_popular(
    table: PopularityTable, quantile: float = DEFAULT_POPULAR_QUANTILE
) -> PopularityTable:
    """Flag the ceil(quantile * |I|) items with the most listeners.

    Ties at the cut are broken by external item id ascending.
    """
    check_unit_interval(quantile, "quantile", open_low=True)
    n_flagged = math.ceil(quantile * table.n_items)
    ids = np.array(table.item_ids)
    order = np.lexsort((ids, -table.listener_counts.astype(np.int64)))
    flags = np.zeros(table.n_items, dtype=bool)
    flags[order[:n_flagged]] = True
    return PopularityTable(
        table.item_ids,
        table.listener_counts,
        table.n_users,
        is_popular=flags,
        quantile=float(quantile),
    )


def profile_popular_ratio(
    store: InteractionStore, table: PopularityTable, user_id: str
) -> float:
    """Fraction of the user's distinct profile items that carry the popular flag."""
    if not table.flagged:
        raise ValidationError("popularity table has no flags; call flag_top_popular first")
    profile = store.profile(user_id)
    return float(table.is_popular[profile].sum() / len(profile))


def histogram_intersection(counts: np.ndarray, reference: np.ndarray) -> float:
    """Overlap of two nonnegative count vectors after normalising each to sum 1.

    Computed as 1 - 0.5 * sum |p - q|, which is the histogram intersection
    sum min(p, q) for probability vectors and returns exactly 1.0 when the
    normalised vectors coincide. Scaling either argument uniformly does not
    change the result.
    """
    counts = np.asarray(counts, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if counts.shape != reference.shape:
        raise ValidationError("count vectors must have the same length")
    total_c = counts.sum()
    total_r = reference.sum()
    if total_c <= 0 or total_r <= 0:
        raise ValidationError("count vectors must have positive mass")
    tv = 0.5 * np.abs(counts / total_c - reference / total_r).sum()
    return float(min(max(1.0 - tv, 0.0), 1.0))


def mainstreaminess_scores(store: InteractionStore) -> MainstreaminessScores:
    """Histogram intersection of each user's listening distribution with the
    aggregate distribution of all users (the user's own events included)."""
    if store.n_interactions == 0:
        raise ValidationError("cannot score an empty store")
    global_counts = np.bincount(
        store.items, weights=store.counts.astype(np.float64), minlength=store.n_items
    )
    p_global = global_counts / global_counts.sum()
    total_global = p_global.sum()

    scores = np.empty(store.n_users)
    for u in range(store.n_users):
        items, counts = store.profile_counts_by_idx(u)
        p_user = counts / counts.sum()
        on_profile = p_global[items]
        # |p_u - p_G| vanishes off-profile except for the mass p_G puts there.
        tv = 0.5 * (
            np.abs(p_user - on_profile).sum() + (total_global - on_profile.sum())
        )
        scores[u] = min(max(1.0 - tv, 0.0), 1.0)
    scores.flags.writeable = False
    return MainstreaminessScores(user_ids=store.user_ids, scores=scores)


def group_users(scores: MainstreaminessScores, group_size: int) -> UserGroups:
    """Split users into LowMS / MedMS / HighMS by mainstreaminess rank.

    Users are ordered by (score ascending, external id ascending); the low
    group is the first ``group_size`` users, the high group the last, and the
    medium group a contiguous window centered on the median rank.
    """
    check_positive_int(group_size, "group_size")
    n = len(scores.user_ids)
    if 3 * group_size > n:
        raise ValidationError(
            f"3 * group_size = {3 * group_size} exceeds the {n} scored users"
        )
    ids = np.array(scores.user_ids)
    order = np.lexsort((ids, scores.scores))
    ranked = ids[order]
    med_start = (n - group_size) // 2
    return UserGroups(
        low=tuple(ranked[:group_size]),
        med=tuple(ranked[med_start:med_start + group_size]),
        high=tuple(ranked[n - group_size:]),
        group_size=group_size,
    )


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient of two equal-length sequences."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise ValidationError("inputs must be equal-length 1-d sequences")
    if len(x) < 2:
        raise ValidationError("need at least 2 points to correlate")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson undefined for zero-variance input")
    r = float(np.dot(xc, yc)) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


def profile_points(
    store: InteractionStore, table: PopularityTable
) -> tuple[tuple[str, int, int, float], ...]:
    """Per-user (user_id, profile_size, popular_count, mean_popularity)."""
    if not table.flagged:
        raise ValidationError("popularity table has no flags; call flag_top_popular first")
    points = []
    for u, user_id in enumerate(store.user_ids):
        profile = store.profile_by_idx(u)
        points.append(
            (
                user_id,
                int(len(profile)),
                int(table.is_popular[profile].sum()),
                float(table.popularity[profile].mean()),
            )
        )
    return tuple(points)


def profile_size_correlations(
    store: InteractionStore, table: PopularityTable
) -> CorrelationReport:
    """Correlate profile size with popular-item count and mean item popularity."""
    if store.n_users < 2:
        raise ValidationError("need at least 2 users")
    points = profile_points(store, table)
    sizes = [p[1] for p in points]
    return CorrelationReport(
        r_size_vs_popular_count=pearson(sizes, [p[2] for p in points]),
        r_size_vs_avg_popularity=pearson(sizes, [p[3] for p in points]),
        points=points,
    )
