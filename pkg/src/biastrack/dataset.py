"""Interaction data: loading, preference scaling, splitting, synthesis.

The on-disk format is UTF-8 text, one record per line,
``user_id<TAB>item_id<TAB>listen_count``. Lines starting with ``#`` and
blank lines are ignored. Duplicate (user, item) lines are summed because
listening logs are append-only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import ParseError, ValidationError
from .validation import (
    check_open_unit,
    check_positive_int,
    check_seed,
    check_unit_interval,
)

RATING_SCALE = (0.0, 1000.0)


def _readonly_view(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class Interaction:
    """One deduplicated (user, item, listen_count) record."""

    user_id: str
    item_id: str
    listen_count: int

    def __post_init__(self):
        if self.listen_count < 1:
            raise ValidationError(
                f"listen_count must be >= 1, got {self.listen_count} "
                f"for ({self.user_id!r}, {self.item_id!r})"
            )


class InteractionStore:
    """Deduplicated interactions with dense, assignment-order indexing.

    User and item indices are assigned in order of first appearance, so a
    store is a pure function of its input record sequence. Instances are
    immutable after construction and safe for concurrent reads.
    """

    def __init__(self, records: Iterable[tuple[str, str, int] | Interaction]):
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        totals: dict[tuple[int, int], int] = {}
        for rec in records:
            if isinstance(rec, Interaction):
                user_id, item_id, count = rec.user_id, rec.item_id, rec.listen_count
            else:
                user_id, item_id, count = rec
            if count < 1:
                raise ValidationError(
                    f"listen_count must be >= 1, got {count} for ({user_id!r}, {item_id!r})"
                )
            u = user_index.setdefault(user_id, len(user_index))
            i = item_index.setdefault(item_id, len(item_index))
            totals[(u, i)] = totals.get((u, i), 0) + int(count)
        if not totals:
            raise ValidationError("interaction store must contain at least one record")

        self._user_index = user_index
        self._item_index = item_index
        self._user_ids = tuple(user_index)
        self._item_ids = tuple(item_index)
        pairs = np.array(list(totals.keys()), dtype=np.int64)
        self._users = pairs[:, 0]
        self._items = pairs[:, 1]
        self._counts = np.array(list(totals.values()), dtype=np.int64)

    # -- basic accessors -------------------------------------------------

    @property
    def n_users(self) -> int:
        return len(self._user_ids)

    @property
    def n_items(self) -> int:
        return len(self._item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self._counts)

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self._user_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._item_ids

    @property
    def user_index(self) -> dict[str, int]:
        return dict(self._user_index)

    @property
    def item_index(self) -> dict[str, int]:
        return dict(self._item_index)

    @property
    def users(self) -> np.ndarray:
        """Record-aligned user indices (read-only view)."""
        return _readonly_view(self._users)

    @property
    def items(self) -> np.ndarray:
        return _readonly_view(self._items)

    @property
    def counts(self) -> np.ndarray:
        return _readonly_view(self._counts)

    def user_idx(self, user_id: str) -> int:
        try:
            return self._user_index[user_id]
        except KeyError:
            raise KeyError(f"unknown user {user_id!r}") from None

    def item_idx(self, item_id: str) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise KeyError(f"unknown item {item_id!r}") from None

    @cached_property
    def _profile_table(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        order = np.lexsort((self._items, self._users))
        users = self._users[order]
        items = self._items[order]
        counts = self._counts[order]
        bounds = np.searchsorted(users, np.arange(self.n_users + 1))
        return {
            u: (items[bounds[u]:bounds[u + 1]], counts[bounds[u]:bounds[u + 1]])
            for u in range(self.n_users)
        }

    def profile(self, user_id: str) -> np.ndarray:
        """Distinct item indices in the user's profile, ascending."""
        return self._profile_table[self.user_idx(user_id)][0]

    def profile_by_idx(self, u: int) -> np.ndarray:
        return self._profile_table[u][0]

    def profile_counts_by_idx(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """(item indices, listen counts) of the user's profile, item-ascending."""
        return self._profile_table[u]

    def interactions(self) -> Iterator[Interaction]:
        """Records in first-appearance order."""
        for u, i, c in zip(self._users, self._items, self._counts):
            yield Interaction(self._user_ids[u], self._item_ids[i], int(c))

    def __len__(self) -> int:
        return self.n_interactions

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionStore):
            return NotImplemented
        mine = {(r.user_id, r.item_id): r.listen_count for r in self.interactions()}
        theirs = {(r.user_id, r.item_id): r.listen_count for r in other.interactions()}
        return mine == theirs

    def __repr__(self) -> str:
        return (
            f"InteractionStore(users={self.n_users}, items={self.n_items}, "
            f"interactions={self.n_interactions})"
        )


class RatingMatrix:
    """Sparse user x item preference matrix on the [0, 1000] scale.

    Shares the external-id vocabularies of the store it was derived from;
    the index space covers the full catalog even if a partition (e.g. a
    train split) holds no rating for some users or items.
    """

    def __init__(
        self,
        users: np.ndarray,
        items: np.ndarray,
        values: np.ndarray,
        user_ids: Sequence[str],
        item_ids: Sequence[str],
    ):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (len(users) == len(items) == len(values)):
            raise ValidationError("users, items and values must be aligned")
        lo, hi = RATING_SCALE
        if len(values) and (values.min() < lo or values.max() > hi):
            raise ValidationError(f"preferences must lie in [{lo}, {hi}]")
        self._users = users
        self._items = items
        self._values = values
        self._user_ids = tuple(user_ids)
        self._item_ids = tuple(item_ids)
        self._user_index = {uid: k for k, uid in enumerate(self._user_ids)}
        self._item_index = {iid: k for k, iid in enumerate(self._item_ids)}

    @property
    def users(self) -> np.ndarray:
        return _readonly_view(self._users)

    @property
    def items(self) -> np.ndarray:
        return _readonly_view(self._items)

    @property
    def values(self) -> np.ndarray:
        return _readonly_view(self._values)

    @property
    def n_users(self) -> int:
        return len(self._user_ids)

    @property
    def n_items(self) -> int:
        return len(self._item_ids)

    @property
    def n_ratings(self) -> int:
        return len(self._values)

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self._user_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._item_ids

    @property
    def scale(self) -> tuple[float, float]:
        return RATING_SCALE

    def user_idx(self, user_id: str) -> int:
        try:
            return self._user_index[user_id]
        except KeyError:
            raise KeyError(f"unknown user {user_id!r}") from None

    def item_idx(self, item_id: str) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise KeyError(f"unknown item {item_id!r}") from None

    def has_user(self, user_id: str) -> bool:
        return user_id in self._user_index

    def has_item(self, item_id: str) -> bool:
        return item_id in self._item_index

    @cached_property
    def global_mean(self) -> float:
        if self.n_ratings == 0:
            raise ValidationError("rating matrix is empty")
        return float(self._values.mean())

    @cached_property
    def _by_user(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        order = np.lexsort((self._items, self._users))
        bounds = np.searchsorted(self._users[order], np.arange(self.n_users + 1))
        return order, self._users[order], bounds

    @cached_property
    def _by_item(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        order = np.lexsort((self._users, self._items))
        bounds = np.searchsorted(self._items[order], np.arange(self.n_items + 1))
        return order, self._items[order], bounds

    def user_ratings(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """(item indices, values) rated by user index u, item-ascending."""
        order, _, bounds = self._by_user
        sel = order[bounds[u]:bounds[u + 1]]
        return self._items[sel], self._values[sel]

    def item_ratings(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(user indices, values) who rated item index i, user-ascending."""
        order, _, bounds = self._by_item
        sel = order[bounds[i]:bounds[i + 1]]
        return self._users[sel], self._values[sel]

    @cached_property
    def user_rating_counts(self) -> np.ndarray:
        return np.bincount(self._users, minlength=self.n_users)

    @cached_property
    def item_rating_counts(self) -> np.ndarray:
        return np.bincount(self._items, minlength=self.n_items)

    @cached_property
    def user_means(self) -> np.ndarray:
        """Per-user mean rating; users without ratings fall back to the global mean."""
        sums = np.bincount(self._users, weights=self._values, minlength=self.n_users)
        counts = self.user_rating_counts
        means = np.full(self.n_users, self.global_mean)
        rated = counts > 0
        means[rated] = sums[rated] / counts[rated]
        return means

    def triples(self) -> Iterator[tuple[int, int, float]]:
        for u, i, v in zip(self._users, self._items, self._values):
            yield int(u), int(i), float(v)

    def __len__(self) -> int:
        return self.n_ratings

    def __repr__(self) -> str:
        return (
            f"RatingMatrix(users={self.n_users}, items={self.n_items}, "
            f"ratings={self.n_ratings})"
        )


@dataclass(frozen=True)
class SplitPair:
    """Disjoint train/test partition of one rating matrix."""

    train: RatingMatrix
    test: tuple[tuple[int, int, float], ...]
    seed: int
    ratio: float


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the desk-scale synthetic interaction generator."""

    n_users: int
    n_items: int
    interactions_per_user: int
    zipf_exponent: float = 1.0
    mainstream_mix: float = 0.7

    def __post_init__(self):
        check_positive_int(self.n_users, "n_users")
        check_positive_int(self.interactions_per_user, "interactions_per_user")
        if not isinstance(self.n_items, int) or self.n_items < 2:
            raise ValidationError(f"n_items must be an integer >= 2, got {self.n_items!r}")
        if not self.zipf_exponent > 0:
            raise ValidationError(f"zipf_exponent must be > 0, got {self.zipf_exponent!r}")
        check_unit_interval(self.mainstream_mix, "mainstream_mix")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def load_interactions(path: str | os.PathLike) -> InteractionStore:
    """Load a tab-separated interaction file into a store.

    Raises OSError if the file cannot be read, ParseError for malformed
    lines and ValidationError for non-positive listen counts.
    """
    records: list[tuple[str, str, int]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"expected 'user<TAB>item<TAB>count', got {line!r}",
                    path=path,
                    line_number=lineno,
                )
            user_id, item_id, count_text = parts
            try:
                count = int(count_text)
            except ValueError:
                raise ParseError(
                    f"listen count {count_text!r} is not an integer",
                    path=path,
                    line_number=lineno,
                ) from None
            if count < 1:
                raise ValidationError(
                    f"{path}:{lineno}: listen_count must be >= 1, got {count}"
                )
            records.append((user_id, item_id, count))
    if not records:
        raise ValidationError(f"{path}: no interaction records found")
    return InteractionStore(records)


def write_interactions(store: InteractionStore, path: str | os.PathLike) -> None:
    """Dump a store in the tab-separated input format (newline-terminated)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for rec in store.interactions():
            handle.write(f"{rec.user_id}\t{rec.item_id}\t{rec.listen_count}\n")


def scale_preferences(store: InteractionStore) -> RatingMatrix:
    """Turn listen counts into preferences on [0, 1000], per-user max scaling.

    preference(u, a) = 1000 * count(u, a) / max_a' count(u, a'), so every
    user's top item maps to exactly 1000 and no stored preference is zero.
    """
    if store.n_interactions == 0:
        raise ValidationError("cannot scale an empty store")
    counts = store.counts.astype(np.float64)
    user_max = np.zeros(store.n_users)
    np.maximum.at(user_max, store.users, counts)
    values = 1000.0 * (counts / user_max[store.users])
    return RatingMatrix(store.users, store.items, values, store.user_ids, store.item_ids)


def split_ratings(matrix: RatingMatrix, ratio: float, seed: int) -> SplitPair:
    """Uniform random global partition of rating records into train/test.

    |train| = round(ratio * total) with half counts rounded up; the rest is
    test. Deterministic for fixed (matrix, ratio, seed).
    """
    check_open_unit(ratio, "ratio")
    check_seed(seed)
    total = matrix.n_ratings
    if total < 2:
        raise ValidationError("need at least 2 ratings to split")
    n_train = int(np.floor(ratio * total + 0.5))
    n_train = min(max(n_train, 0), total)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    train_sel = np.sort(perm[:n_train])
    test_sel = np.sort(perm[n_train:])
    train = RatingMatrix(
        matrix.users[train_sel],
        matrix.items[train_sel],
        matrix.values[train_sel],
        matrix.user_ids,
        matrix.item_ids,
    )
    test = tuple(
        (int(u), int(i), float(v))
        for u, i, v in zip(
            matrix.users[test_sel], matrix.items[test_sel], matrix.values[test_sel]
        )
    )
    return SplitPair(train=train, test=test, seed=int(seed), ratio=float(ratio))


def generate_synthetic(config: SyntheticConfig, seed: int) -> InteractionStore:
    """Generate a long-tail interaction store, deterministic per seed.

    Item draw weights follow a Zipf law over item rank. Each user draws a
    Poisson-sized batch of items from a mixture of popularity-proportional
    and uniform choice; the per-user mixture weight is Beta-distributed
    around ``mainstream_mix``. Listen counts per draw are shifted-geometric
    with a mean that grows with item weight, so popular items also tend to
    collect higher counts (the shape real listening data shows).
    """
    check_seed(seed)
    rng = np.random.default_rng(seed)
    n_users = config.n_users
    n_items = config.n_items

    ranks = np.arange(1, n_items + 1, dtype=np.float64)
    weights = ranks ** (-config.zipf_exponent)
    pop_probs = weights / weights.sum()
    rel_weight = weights / weights[0]

    # Per-draw listen-count level: popular items draw longer-tailed counts.
    geom_p = 1.0 / (1.0 + 9.0 * np.sqrt(rel_weight))

    mix = config.mainstream_mix
    if mix in (0.0, 1.0):
        user_mix = np.full(n_users, mix)
    else:
        concentration = 10.0
        user_mix = rng.beta(mix * concentration, (1.0 - mix) * concentration, size=n_users)

    records: list[tuple[str, str, int]] = []
    item_pad = len(str(n_items - 1))
    user_pad = len(str(n_users - 1))
    for u in range(n_users):
        n_draws = max(1, int(rng.poisson(config.interactions_per_user)))
        mainstream = rng.random(n_draws) < user_mix[u]
        n_main = int(mainstream.sum())
        drawn = np.empty(n_draws, dtype=np.int64)
        if n_main:
            drawn[:n_main] = rng.choice(n_items, size=n_main, p=pop_probs)
        if n_draws - n_main:
            drawn[n_main:] = rng.integers(0, n_items, size=n_draws - n_main)
        counts = rng.geometric(geom_p[drawn])
        uid = f"u{u:0{user_pad}d}"
        for item, count in zip(drawn, counts):
            records.append((uid, f"i{item:0{item_pad}d}", int(count)))
    return InteractionStore(records)
