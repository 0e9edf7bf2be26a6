"""Six rating predictors behind one sklearn-style fit/predict contract.

Every estimator takes hyperparameters in ``__init__`` (so ``get_params`` /
``set_params`` / ``clone`` work), fits on a train :class:`RatingMatrix`, and
answers ``predict(user, item)`` for *any* pair: entities the model has not
seen take a flagged fallback path instead of raising, so evaluation over
random splits never aborts on cold-start records. Estimates are always
finite and clipped to the [0, 1000] preference scale.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import ndtri
from sklearn.base import BaseEstimator

from .dataset import RATING_SCALE, RatingMatrix
from .exceptions import ValidationError
from .profiling import PopularityTable
from .validation import check_fitted, check_non_negative, check_positive_int, check_seed

# Dense pairwise similarity is computed exactly below this user count and
# via expanded sparse products above it (faster, same values to ~1e-12).
_EXACT_SIM_MAX_USERS = 2048

_NMF_DENOM_FLOOR = 1e-12
_NMF_INIT_FLOOR = 1e-9


@dataclass(frozen=True)
class Prediction:
    """One (user, item) estimate with its cold-start flag."""

    user: str
    item: str
    estimate: float
    fallback: bool = False


def _clip(value: float) -> float:
    lo, hi = RATING_SCALE
    return float(min(max(value, lo), hi))


def _stable_key(text: str) -> int:
    # zlib.crc32 is stable across processes, unlike hash().
    return zlib.crc32(text.encode("utf-8"))


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_USER_SALT = 0xD6E8FEB86659FD93


def _mix64(z: int) -> int:
    """splitmix64 finalizer on Python ints (no uint64 scalar overflow noise)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _hashed_standard_normals(seed: int, user_key: int, item_keys: np.ndarray) -> np.ndarray:
    """One reproducible N(0, 1) draw per (seed, user, item) triple."""
    base = _mix64((seed & _MASK64) ^ ((user_key * _USER_SALT) & _MASK64))
    z = item_keys.astype(np.uint64) * np.uint64(_MIX_B) ^ np.uint64(base)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    z = z ^ (z >> np.uint64(31))
    uniforms = ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniforms)


class RatingPredictor(BaseEstimator):
    """Base class: vocabulary resolution, fallback plumbing, batch scoring."""

    kind = "?"

    def _check_train(self, train: RatingMatrix) -> None:
        if not isinstance(train, RatingMatrix):
            raise ValidationError("fit expects a RatingMatrix")
        if train.n_ratings == 0:
            raise ValidationError(f"{self.kind}: train matrix is empty")

    def _fit_summary(self, train: RatingMatrix) -> None:
        self.train_ = train
        self.global_mean_ = train.global_mean
        self.user_means_ = train.user_means
        self.rated_users_ = train.user_rating_counts > 0
        self.rated_items_ = train.item_rating_counts > 0

    def _resolve(self, user_id: str, item_id: str) -> tuple[int | None, int | None]:
        """Vocab indices, with entities lacking any train rating mapped to None."""
        u = self.train_.user_idx(user_id) if self.train_.has_user(user_id) else None
        i = self.train_.item_idx(item_id) if self.train_.has_item(item_id) else None
        if u is not None and not self.rated_users_[u]:
            u = None
        if i is not None and not self.rated_items_[i]:
            i = None
        return u, i

    def predict(self, user: str, item: str) -> Prediction:
        """Estimate the preference of ``user`` for ``item``, clipped to scale."""
        check_fitted(self, "train_")
        estimate, fallback = self._estimate_pair(str(user), str(item))
        return Prediction(user=str(user), item=str(item), estimate=_clip(estimate),
                          fallback=bool(fallback))

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        raise NotImplementedError

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        """Clipped estimates for one user against catalog item indices."""
        check_fitted(self, "train_")
        item_ids = self.train_.item_ids
        out = np.empty(len(item_indices))
        for pos, i in enumerate(item_indices):
            est, _ = self._estimate_pair(user_id, item_ids[i])
            out[pos] = _clip(est)
        return out


class RandomPredictor(RatingPredictor):
    """Draws from a normal distribution fitted to the train ratings.

    Each (user, item) pair gets one reproducible draw derived from the seed
    and the pair, so a fitted model is stateless and concurrency-safe; a
    zero-variance train set degenerates to the constant mean.
    """

    kind = "Random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, train: RatingMatrix) -> "RandomPredictor":
        self._check_train(train)
        check_seed(self.seed)
        self._fit_summary(train)
        values = train.values
        self.mean_ = float(values.mean())
        self.std_ = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        self._item_keys = np.array(
            [_stable_key(iid) for iid in train.item_ids], dtype=np.uint64
        )
        return self

    def _draw_many(self, user_id: str, item_keys: np.ndarray) -> np.ndarray:
        normals = _hashed_standard_normals(self.seed, _stable_key(user_id), item_keys)
        return self.mean_ + self.std_ * normals

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        keys = np.array([_stable_key(item_id)], dtype=np.uint64)
        return float(self._draw_many(user_id, keys)[0]), False

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        draws = self._draw_many(user_id, self._item_keys[np.asarray(item_indices)])
        return np.clip(draws, *RATING_SCALE)


class MostPopular(RatingPredictor):
    """Scores every item by its listener ratio, scaled so the most popular
    item maps to 1000. User-independent; its top-N ranking is the global
    popularity ranking. Items outside the catalog score 0 with a flag."""

    kind = "MostPopular"

    def fit(self, train: RatingMatrix, popularity: PopularityTable) -> "MostPopular":
        self._check_train(train)
        if popularity is None or popularity.n_items == 0:
            raise ValidationError("MostPopular needs a non-empty popularity table")
        if popularity.item_ids != train.item_ids:
            raise ValidationError(
                "popularity table and train matrix cover different item universes"
            )
        self._fit_summary(train)
        pop = popularity.popularity
        self.item_scores_ = 1000.0 * (pop / pop.max())
        return self

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        if not self.train_.has_item(item_id):
            return 0.0, True
        return float(self.item_scores_[self.train_.item_idx(item_id)]), False

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        return np.clip(self.item_scores_[item_indices], *RATING_SCALE)


class UserItemAvg(RatingPredictor):
    """Global mean plus regularized user and item bias terms.

    Biases are fitted by alternating least squares: each epoch solves the
    item biases given the user biases, then the user biases given the item
    biases. An entity without train ratings contributes zero bias; the
    prediction is flagged as fallback only when both sides are unknown.
    """

    kind = "UserItemAvg"

    def __init__(self, epochs: int = 10, reg_u: float = 15.0, reg_i: float = 10.0):
        self.epochs = epochs
        self.reg_u = reg_u
        self.reg_i = reg_i

    def fit(self, train: RatingMatrix) -> "UserItemAvg":
        self._check_train(train)
        check_positive_int(self.epochs, "epochs")
        reg_u = check_non_negative(self.reg_u, "reg_u")
        reg_i = check_non_negative(self.reg_i, "reg_i")
        self._fit_summary(train)
        users, items, values = train.users, train.items, train.values
        mu = self.global_mean_
        n_u = train.user_rating_counts.astype(np.float64)
        n_i = train.item_rating_counts.astype(np.float64)
        bu = np.zeros(train.n_users)
        bi = np.zeros(train.n_items)
        den_i = reg_i + n_i
        den_u = reg_u + n_u
        for _ in range(self.epochs):
            resid = values - mu - bu[users]
            sums = np.bincount(items, weights=resid, minlength=train.n_items)
            bi = np.divide(sums, den_i, out=np.zeros_like(sums), where=den_i > 0)
            resid = values - mu - bi[items]
            sums = np.bincount(users, weights=resid, minlength=train.n_users)
            bu = np.divide(sums, den_u, out=np.zeros_like(sums), where=den_u > 0)
        self.user_bias_ = bu
        self.item_bias_ = bi
        return self

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        u, i = self._resolve(user_id, item_id)
        estimate = self.global_mean_
        if u is not None:
            estimate += self.user_bias_[u]
        if i is not None:
            estimate += self.item_bias_[i]
        return estimate, u is None and i is None

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        base = self.global_mean_
        if self.train_.has_user(user_id):
            base += self.user_bias_[self.train_.user_idx(user_id)]
        return np.clip(base + self.item_bias_[item_indices], *RATING_SCALE)


def _msd_similarity(train: RatingMatrix, min_support: int) -> np.ndarray:
    """Symmetric mean-squared-difference similarity, sim = 1 / (msd + 1).

    Pairs with fewer than ``min_support`` co-rated items get similarity 0;
    the diagonal is 0 so a user is never their own neighbor.
    """
    n_users = train.n_users
    if n_users <= _EXACT_SIM_MAX_USERS:
        ssd = np.zeros((n_users, n_users))
        n_co = np.zeros((n_users, n_users), dtype=np.int64)
        for i in range(train.n_items):
            raters, vals = train.item_ratings(i)
            if len(raters) < 2:
                continue
            diff = vals[:, None] - vals[None, :]
            block = np.ix_(raters, raters)
            ssd[block] += diff * diff
            n_co[block] += 1
    else:
        mat = sparse.csr_matrix(
            (train.values, (train.users, train.items)),
            shape=(n_users, train.n_items),
        )
        pattern = mat.copy()
        pattern.data = np.ones_like(pattern.data)
        n_co = (pattern @ pattern.T).toarray().astype(np.int64)
        sq = (mat.multiply(mat) @ pattern.T).toarray()
        ssd = sq + sq.T - 2.0 * (mat @ mat.T).toarray()
        np.maximum(ssd, 0.0, out=ssd)
    sim = np.zeros((n_users, n_users))
    enough = n_co >= max(min_support, 1)
    sim[enough] = 1.0 / (ssd[enough] / n_co[enough] + 1.0)
    np.fill_diagonal(sim, 0.0)
    return sim


class _NeighborhoodPredictor(RatingPredictor):
    """Shared machinery for the two user-based KNN models."""

    def __init__(self, k: int = 40, min_k: int = 1, min_support: int = 1):
        self.k = k
        self.min_k = min_k
        self.min_support = min_support

    def fit(self, train: RatingMatrix):
        self._check_train(train)
        check_positive_int(self.k, "k")
        check_positive_int(self.min_k, "min_k")
        check_positive_int(self.min_support, "min_support")
        if train.n_users < 2:
            raise ValidationError(f"{self.kind}: need at least 2 users")
        self._fit_summary(train)
        self.similarity_ = _msd_similarity(train, self.min_support)
        return self

    def _neighborhood(self, u: int, i: int):
        """(sims, ratings, neighbor indices) of the up-to-k most similar
        raters of item i with positive similarity, or None if fewer than
        min_k are usable."""
        raters, vals = self.train_.item_ratings(i)
        if len(raters) == 0:
            return None
        sims = self.similarity_[u, raters]
        usable = sims > 0.0
        if int(usable.sum()) < self.min_k:
            return None
        raters, vals, sims = raters[usable], vals[usable], sims[usable]
        if len(raters) > self.k:
            top = np.lexsort((raters, -sims))[: self.k]
            raters, vals, sims = raters[top], vals[top], sims[top]
        return sims, vals, raters

    # Batch path: one sparse matvec covers every item whose full rater set
    # fits in k; only head items need per-item top-k selection.
    def _batch_tables(self):
        if not hasattr(self, "_rated_mat"):
            train = self.train_
            mat = sparse.csr_matrix(
                (train.values, (train.users, train.items)),
                shape=(train.n_users, train.n_items),
            )
            centered = sparse.csr_matrix(
                (train.values - self.user_means_[train.users],
                 (train.users, train.items)),
                shape=(train.n_users, train.n_items),
            )
            pattern = mat.copy()
            pattern.data = np.ones_like(pattern.data)
            self._rated_mat = mat
            self._centered_mat = centered
            self._pattern_mat = pattern
            self._head_items = train.item_rating_counts > self.k
        return self._rated_mat, self._centered_mat, self._pattern_mat

    def _batch_neighbor_sums(self, u: int, item_indices: np.ndarray, centered: bool):
        mat, cent, pattern = self._batch_tables()
        sims = self.similarity_[u]
        source = cent if centered else mat
        num = (source.T @ sims)[item_indices]
        den = (pattern.T @ sims)[item_indices]
        cnt = (pattern.T @ (sims > 0.0).astype(np.float64))[item_indices]
        ok = cnt >= self.min_k
        # Head items: redo with the exact k-capped neighborhood.
        head = self._head_items[item_indices]
        for pos in np.flatnonzero(head):
            hood = self._neighborhood(u, int(item_indices[pos]))
            if hood is None:
                ok[pos] = False
                continue
            sims_k, vals_k, raters_k = hood
            if centered:
                vals_k = vals_k - self.user_means_[raters_k]
            num[pos] = float(np.dot(sims_k, vals_k))
            den[pos] = float(sims_k.sum())
            ok[pos] = True
        return num, den, ok


class UserKNN(_NeighborhoodPredictor):
    """Similarity-weighted mean of the neighbors' ratings for the item.

    Neighborhoods are the up-to-k most similar users who rated the item
    (MSD similarity, ties broken by user index); when fewer than min_k are
    usable the global train mean is returned with the fallback flag set.
    """

    kind = "UserKNN"

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        u, i = self._resolve(user_id, item_id)
        if u is None or i is None:
            return self.global_mean_, True
        hood = self._neighborhood(u, i)
        if hood is None:
            return self.global_mean_, True
        sims, vals, _ = hood
        return float(np.dot(sims, vals) / sims.sum()), False

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        item_indices = np.asarray(item_indices, dtype=np.int64)
        out = np.full(len(item_indices), self.global_mean_)
        if not self.train_.has_user(user_id):
            return np.clip(out, *RATING_SCALE)
        u = self.train_.user_idx(user_id)
        num, den, ok = self._batch_neighbor_sums(u, item_indices, centered=False)
        ok &= den > 0.0
        out[ok] = num[ok] / den[ok]
        return np.clip(out, *RATING_SCALE)


class UserKNNAvg(_NeighborhoodPredictor):
    """UserKNN blended with per-user means: the neighbors vote on the
    *deviation* from their own mean, anchored at the target user's mean."""

    kind = "UserKNNAvg"

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        u, i = self._resolve(user_id, item_id)
        if u is None:
            return self.global_mean_, True
        base = float(self.user_means_[u])
        if i is None:
            return base, True
        hood = self._neighborhood(u, i)
        if hood is None:
            return base, True
        sims, vals, raters = hood
        deviations = vals - self.user_means_[raters]
        return base + float(np.dot(sims, deviations) / sims.sum()), False

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        item_indices = np.asarray(item_indices, dtype=np.int64)
        if not self.train_.has_user(user_id):
            return np.clip(np.full(len(item_indices), self.global_mean_), *RATING_SCALE)
        u = self.train_.user_idx(user_id)
        base = float(self.user_means_[u])
        out = np.full(len(item_indices), base)
        num, den, ok = self._batch_neighbor_sums(u, item_indices, centered=True)
        ok &= den > 0.0
        out[ok] = base + num[ok] / den[ok]
        return np.clip(out, *RATING_SCALE)


class NMF(RatingPredictor):
    """Non-negative matrix factorization with regularized multiplicative
    updates; factors stay non-negative at every epoch boundary.

    Per epoch, numerators and denominators are accumulated over the train
    ratings with the epoch-start factors, then user factors and item
    factors are rescaled factor-by-factor. Denominators are floored at
    1e-12 and the initialization lower bound is clamped to 1e-9, so updates
    never divide by zero or get absorbed at zero.
    """

    kind = "NMF"

    def __init__(
        self,
        n_factors: int = 15,
        epochs: int = 50,
        reg_pu: float = 0.06,
        reg_qi: float = 0.06,
        init_low: float = 0.0,
        init_high: float = 1.0,
        seed: int = 0,
    ):
        self.n_factors = n_factors
        self.epochs = epochs
        self.reg_pu = reg_pu
        self.reg_qi = reg_qi
        self.init_low = init_low
        self.init_high = init_high
        self.seed = seed

    def fit(self, train: RatingMatrix) -> "NMF":
        self._check_train(train)
        check_positive_int(self.n_factors, "n_factors")
        check_positive_int(self.epochs, "epochs")
        reg_pu = check_non_negative(self.reg_pu, "reg_pu")
        reg_qi = check_non_negative(self.reg_qi, "reg_qi")
        check_seed(self.seed)
        if self.init_low < 0 or self.init_high < self.init_low:
            raise ValidationError("need 0 <= init_low <= init_high")
        low = max(float(self.init_low), _NMF_INIT_FLOOR)
        high = max(float(self.init_high), low)
        self._fit_summary(train)

        order = np.lexsort((train.items, train.users))
        rows = train.users[order]
        cols = train.items[order]
        vals = train.values[order]
        n_users, n_items = train.n_users, train.n_items
        indptr = np.searchsorted(rows, np.arange(n_users + 1))
        rating_mat = sparse.csr_matrix(
            (vals, cols.copy(), indptr), shape=(n_users, n_items)
        )
        estimate_mat = sparse.csr_matrix(
            (np.zeros_like(vals), cols.copy(), indptr.copy()),
            shape=(n_users, n_items),
        )
        n_u = train.user_rating_counts.astype(np.float64)[:, None]
        n_i = train.item_rating_counts.astype(np.float64)[:, None]

        rng = np.random.default_rng(self.seed)
        pu = rng.uniform(low, high, (n_users, self.n_factors))
        qi = rng.uniform(low, high, (n_items, self.n_factors))

        epoch_mae: list[float] = []
        epoch_min_factor: list[float] = []
        for _ in range(self.epochs):
            # User factors first, then item factors against the refreshed
            # estimates: the simultaneous variant oscillates on consistent
            # low-rank instances instead of converging.
            est = np.einsum("nf,nf->n", pu[rows], qi[cols])
            estimate_mat.data = est
            user_num = rating_mat @ qi
            user_den = estimate_mat @ qi
            pu = pu * (
                user_num / np.maximum(user_den + reg_pu * n_u * pu, _NMF_DENOM_FLOOR)
            )
            est = np.einsum("nf,nf->n", pu[rows], qi[cols])
            estimate_mat.data = est
            item_num = rating_mat.T @ pu
            item_den = estimate_mat.T @ pu
            qi = qi * (
                item_num / np.maximum(item_den + reg_qi * n_i * qi, _NMF_DENOM_FLOOR)
            )
            after = np.einsum("nf,nf->n", pu[rows], qi[cols])
            epoch_mae.append(float(np.abs(vals - np.clip(after, *RATING_SCALE)).mean()))
            epoch_min_factor.append(float(min(pu.min(), qi.min())))

        self.user_factors_ = pu
        self.item_factors_ = qi
        self.epoch_train_mae_ = tuple(epoch_mae)
        self.epoch_min_factor_ = tuple(epoch_min_factor)
        return self

    def _estimate_pair(self, user_id: str, item_id: str) -> tuple[float, bool]:
        u, i = self._resolve(user_id, item_id)
        if u is None or i is None:
            return self.global_mean_, True
        return float(np.dot(self.user_factors_[u], self.item_factors_[i])), False

    def score_items(self, user_id: str, item_indices: np.ndarray) -> np.ndarray:
        check_fitted(self, "train_")
        item_indices = np.asarray(item_indices, dtype=np.int64)
        if not self.train_.has_user(user_id):
            return np.clip(np.full(len(item_indices), self.global_mean_), *RATING_SCALE)
        u = self.train_.user_idx(user_id)
        if not self.rated_users_[u]:
            return np.clip(np.full(len(item_indices), self.global_mean_), *RATING_SCALE)
        out = self.item_factors_[item_indices] @ self.user_factors_[u]
        unrated = ~self.rated_items_[item_indices]
        out[unrated] = self.global_mean_
        return np.clip(out, *RATING_SCALE)


MODEL_KINDS: dict[str, type[RatingPredictor]] = {
    cls.kind: cls
    for cls in (RandomPredictor, MostPopular, UserItemAvg, UserKNN, UserKNNAvg, NMF)
}


def make_model(kind: str, **params) -> RatingPredictor:
    """Instantiate a predictor by its kind name with hyperparameters."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}"
        ) from None
    return cls(**params)


def fit_model(
    model: RatingPredictor,
    train: RatingMatrix,
    popularity: PopularityTable | None = None,
) -> RatingPredictor:
    """Fit any predictor, supplying the popularity table where required."""
    if isinstance(model, MostPopular):
        if popularity is None:
            raise ValidationError("MostPopular requires a popularity table")
        return model.fit(train, popularity)
    return model.fit(train)


# Functional aliases for the uniform fit surface.


def fit_random(train: RatingMatrix, seed: int = 0) -> RandomPredictor:
    return RandomPredictor(seed=seed).fit(train)


def fit_most_popular(train: RatingMatrix, popularity: PopularityTable) -> MostPopular:
    return MostPopular().fit(train, popularity)


def fit_user_item_avg(train: RatingMatrix, **params) -> UserItemAvg:
    return UserItemAvg(**params).fit(train)


def fit_user_knn(train: RatingMatrix, **params) -> UserKNN:
    return UserKNN(**params).fit(train)


def fit_user_knn_avg(train: RatingMatrix, **params) -> UserKNNAvg:
    return UserKNNAvg(**params).fit(train)


def fit_nmf(train: RatingMatrix, **params) -> NMF:
    return NMF(**params).fit(train)
