"""Test-set accuracy, significance testing, top-N lists and GAP metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .algorithms import RatingPredictor
from .dataset import RatingMatrix, SplitPair
from .exceptions import DegenerateInputError, ValidationError
from .profiling import GROUP_HIGH, GROUP_LOW, GROUP_MED, PopularityTable, UserGroups, pearson
from .validation import check_positive_int

DEFAULT_TOP_N = 10
DEFAULT_ALPHA = 0.005
OVERALL_GROUP = "All"


@dataclass(frozen=True)
class PredictionRecord:
    user: str
    item: str
    truth: float
    estimate: float
    fallback: bool


@dataclass(frozen=True)
class PredictionSet:
    """All test-set predictions of one model, ordered by (user, item) index."""

    model_kind: str
    records: tuple[PredictionRecord, ...]

    @cached_property
    def fallback_count(self) -> int:
        return sum(1 for r in self.records if r.fallback)

    @cached_property
    def absolute_errors(self) -> np.ndarray:
        errors = np.array([abs(r.truth - r.estimate) for r in self.records])
        errors.flags.writeable = False
        return errors

    def per_user_mean_errors(self) -> dict[str, float]:
        """Mean absolute error per user, keyed in first-record order."""
        sums: dict[str, list[float]] = {}
        for rec in self.records:
            sums.setdefault(rec.user, []).append(abs(rec.truth - rec.estimate))
        return {user: float(np.mean(errs)) for user, errs in sums.items()}

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TTestResult:
    """Welch two-sample test: statistic, Welch-Satterthwaite df, two-sided p."""

    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant_at: float = DEFAULT_ALPHA

    @property
    def significant(self) -> bool:
        return self.p_value < self.significant_at


@dataclass(frozen=True)
class GroupComparison:
    pair: tuple[str, str]
    test: TTestResult


@dataclass(frozen=True)
class GroupMae:
    group: str
    mae: float | None
    n_records: int
    n_users: int
    fallback_count: int
    per_user_means: tuple[tuple[str, float], ...] = field(repr=False)


@dataclass(frozen=True)
class MaeReport:
    """Per-group MAE for one model, plus LowMS-vs-others significance tests."""

    model_kind: str
    groups: tuple[GroupMae, ...]
    overall: GroupMae
    comparisons: tuple[GroupComparison, ...]

    def group(self, name: str) -> GroupMae:
        for cell in self.groups:
            if cell.group == name:
                return cell
        raise KeyError(f"no group {name!r} in report")


@dataclass(frozen=True)
class GapCell:
    """GAP of one (group, algorithm): profile side, recommendation side, delta."""

    group: str
    algorithm: str
    gap_profile: float
    gap_recommendation: float
    delta: float


@dataclass(frozen=True)
class GapReport:
    """All GAP cells of one experiment, one row per (group, algorithm)."""

    cells: tuple[GapCell, ...]

    def cell(self, group: str, algorithm: str) -> GapCell:
        for cell in self.cells:
            if (cell.group, cell.algorithm) == (group, algorithm):
                return cell
        raise KeyError(f"no GAP cell for ({group!r}, {algorithm!r})")


class RecommendationLists:
    """Ranked top-N item lists per user; never recommends train-profile items."""

    def __init__(self, lists: Sequence[tuple[str, tuple[str, ...]]], n: int):
        self._lists = tuple((user, tuple(items)) for user, items in lists)
        self._by_user = dict(self._lists)
        self.n = int(n)

    @property
    def users(self) -> tuple[str, ...]:
        return tuple(user for user, _ in self._lists)

    def items_for(self, user_id: str) -> tuple[str, ...]:
        try:
            return self._by_user[user_id]
        except KeyError:
            raise KeyError(f"no recommendation list for user {user_id!r}") from None

    def as_mapping(self) -> dict[str, tuple[str, ...]]:
        return dict(self._lists)

    def __len__(self) -> int:
        return len(self._lists)

    def __iter__(self):
        return iter(self._lists)


# ---------------------------------------------------------------------------
# Accuracy
# ---------------------------------------------------------------------------


def test_predictions(model: RatingPredictor, split: SplitPair) -> PredictionSet:
    """Predict every test record, ordered by (user index, item index)."""
    train = split.train
    ordered = sorted(split.test, key=lambda rec: (rec[0], rec[1]))
    records = []
    for u, i, truth in ordered:
        pred = model.predict(train.user_ids[u], train.item_ids[i])
        records.append(
            PredictionRecord(
                user=pred.user,
                item=pred.item,
                truth=float(truth),
                estimate=pred.estimate,
                fallback=pred.fallback,
            )
        )
    return PredictionSet(model_kind=model.kind, records=tuple(records))


def mae(predictions: PredictionSet) -> float:
    """Mean absolute error over all records."""
    if len(predictions) == 0:
        raise ValidationError("cannot compute MAE of an empty prediction set")
    return float(predictions.absolute_errors.mean())


def welch_t_test(
    sample_a: Sequence[float], sample_b: Sequence[float], alpha: float = DEFAULT_ALPHA
) -> TTestResult:
    """Welch's unequal-variance two-sample t-test, two-sided."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise ValidationError("each sample needs at least 2 observations")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        raise DegenerateInputError("both samples have zero variance")
    sq_a = var_a / len(a)
    sq_b = var_b / len(b)
    se = math.sqrt(sq_a + sq_b)
    t = (float(a.mean()) - float(b.mean())) / se
    df = (sq_a + sq_b) ** 2 / (
        (sq_a**2 / (len(a) - 1)) + (sq_b**2 / (len(b) - 1))
    )
    p = 2.0 * float(stats.t.sf(abs(t), df))
    return TTestResult(
        t_statistic=t,
        degrees_of_freedom=float(df),
        p_value=min(p, 1.0),
        significant_at=float(alpha),
    )


def mae_by_group(
    predictions: PredictionSet, groups: UserGroups, alpha: float = DEFAULT_ALPHA
) -> MaeReport:
    """Group-wise MAE plus Welch tests of LowMS against the other groups.

    Records of ungrouped users are excluded. A group with no test records
    gets mae=None rather than zero. Significance tests compare per-user mean
    absolute errors and are omitted when either side has fewer than 2 users.
    """
    if len(predictions) == 0:
        raise ValidationError("empty prediction set")
    per_user = predictions.per_user_mean_errors()
    membership = groups.as_dict()

    cells: list[GroupMae] = []
    errors_by_group: dict[str, list[float]] = {}
    all_errors: list[float] = []
    all_users = 0
    all_fallbacks = 0
    all_records = 0
    for name in (GROUP_LOW, GROUP_MED, GROUP_HIGH):
        members = set(membership[name])
        recs = [r for r in predictions.records if r.user in members]
        user_means = tuple(
            (user, score) for user, score in per_user.items() if user in members
        )
        errors = [abs(r.truth - r.estimate) for r in recs]
        fallbacks = sum(1 for r in recs if r.fallback)
        cells.append(
            GroupMae(
                group=name,
                mae=float(np.mean(errors)) if errors else None,
                n_records=len(recs),
                n_users=len(user_means),
                fallback_count=fallbacks,
                per_user_means=user_means,
            )
        )
        errors_by_group[name] = [score for _, score in user_means]
        all_errors.extend(errors)
        all_users += len(user_means)
        all_fallbacks += fallbacks
        all_records += len(recs)

    overall = GroupMae(
        group=OVERALL_GROUP,
        mae=float(np.mean(all_errors)) if all_errors else None,
        n_records=all_records,
        n_users=all_users,
        fallback_count=all_fallbacks,
        per_user_means=tuple(),
    )

    comparisons = []
    low = errors_by_group[GROUP_LOW]
    for other in (GROUP_MED, GROUP_HIGH):
        sample = errors_by_group[other]
        if len(low) >= 2 and len(sample) >= 2:
            try:
                result = welch_t_test(low, sample, alpha=alpha)
            except DegenerateInputError:
                continue
            comparisons.append(
                GroupComparison(pair=(GROUP_LOW, other), test=result)
            )
    return MaeReport(
        model_kind=predictions.model_kind,
        groups=tuple(cells),
        overall=overall,
        comparisons=tuple(comparisons),
    )


# ---------------------------------------------------------------------------
# Top-N and popularity bias
# ---------------------------------------------------------------------------


def top_n(
    model: RatingPredictor,
    train: RatingMatrix,
    users: Iterable[str],
    n: int = DEFAULT_TOP_N,
    min_listeners: int = 0,
    popularity: PopularityTable | None = None,
) -> RecommendationLists:
    """Rank each user's unconsumed catalog items and keep the best n.

    Candidates are the full catalog minus the user's train profile; with
    ``min_listeners`` > 0 the catalog is first filtered by listener count
    (requires ``popularity``). Ties are broken by item id ascending.
    """
    check_positive_int(n, "n")
    user_list = sorted(set(users), key=train.user_idx)
    item_ids = np.array(train.item_ids)
    catalog = np.arange(train.n_items)
    if min_listeners > 0:
        if popularity is None:
            raise ValidationError("min_listeners filtering needs a popularity table")
        catalog = catalog[popularity.listener_counts >= min_listeners]
    lists = []
    for user_id in user_list:
        u = train.user_idx(user_id)
        profile, _ = train.user_ratings(u)
        candidates = catalog[~np.isin(catalog, profile, assume_unique=True)]
        if len(candidates) == 0:
            lists.append((user_id, tuple()))
            continue
        scores = model.score_items(user_id, candidates)
        order = np.lexsort((item_ids[candidates], -scores))[:n]
        lists.append((user_id, tuple(item_ids[candidates[order]])))
    return RecommendationLists(lists, n=n)


def rec_popularity_correlation(
    recs: RecommendationLists, table: PopularityTable
) -> tuple[np.ndarray, float]:
    """Catalog-wide recommendation frequencies and their Pearson correlation
    with item popularity. Never-recommended items count with frequency 0."""
    if len(recs) == 0:
        raise ValidationError("no recommendation lists")
    freq = np.zeros(table.n_items)
    for _, items in recs:
        for item_id in items:
            freq[table.item_idx(item_id)] += 1.0
    r = pearson(table.popularity, freq)
    freq.flags.writeable = False
    return freq, r


def group_average_popularity(
    group: Iterable[str],
    item_lists: Mapping[str, Sequence[str]],
    table: PopularityTable,
) -> float:
    """GAP(g): mean over the group's users of their mean item popularity."""
    members = sorted(set(group))
    if not members:
        raise ValidationError("group is empty")
    user_means = []
    for user_id in members:
        items = item_lists.get(user_id)
        if items is None or len(items) == 0:
            raise ValidationError(f"user {user_id!r} has an empty item list")
        pops = np.array([table.popularity[table.item_idx(i)] for i in items])
        user_means.append(float(pops.mean()))
    return float(np.mean(user_means))


def delta_gap(gap_r: float, gap_p: float) -> float:
    """Relative change of recommendation GAP against profile GAP.

    Zero means the recommendations match the group's profile popularity
    level; positive values mean too-popular recommendations.
    """
    if not gap_p > 0.0:
        raise ValidationError(f"profile GAP must be positive, got {gap_p!r}")
    return (gap_r - gap_p) / gap_p
