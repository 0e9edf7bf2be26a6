import numpy as np
import pytest

from biastrack.dataset import InteractionStore, scale_preferences

# Hand-checkable fixture used throughout: 4 users, 5 items, 8 interactions.
F1_RECORDS = [
    ("u1", "a", 10),
    ("u1", "b", 5),
    ("u2", "a", 2),
    ("u2", "c", 4),
    ("u3", "a", 1),
    ("u3", "b", 2),
    ("u3", "d", 8),
    ("u4", "e", 3),
]


@pytest.fixture
def f1_store() -> InteractionStore:
    return InteractionStore(F1_RECORDS)


@pytest.fixture
def f1_matrix(f1_store):
    return scale_preferences(f1_store)


@pytest.fixture
def f1_file(tmp_path):
    path = tmp_path / "f1.tsv"
    lines = [f"{u}\t{i}\t{c}" for u, i, c in F1_RECORDS]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def random_triples(rng: np.random.Generator, n_users: int, n_items: int):
    """Random sparse rating triples; every user and item index may appear."""
    pairs = [(u, i) for u in range(n_users) for i in range(n_items)]
    keep = rng.random(len(pairs)) < 0.55
    triples = [
        (u, i, float(rng.integers(1, 1001)))
        for (u, i), kept in zip(pairs, keep)
        if kept
    ]
    if len(triples) < 2:
        triples = [(0, 0, 400.0), (1, 1, 700.0)]
    return triples


def matrix_from_triples(triples, n_users: int, n_items: int):
    from biastrack.dataset import RatingMatrix

    users = np.array([t[0] for t in triples])
    items = np.array([t[1] for t in triples])
    values = np.array([t[2] for t in triples])
    user_ids = [f"u{k}" for k in range(n_users)]
    item_ids = [f"i{k}" for k in range(n_items)]
    return RatingMatrix(users, items, values, user_ids, item_ids)
