"""CSV and manifest emission. Every file gets a one-line header and ends
with a newline; numbers use the shortest round-trip representation so that
identical runs produce byte-identical files."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import InteractionStore
from .exceptions import ValidationError
from .profiling import (
    MainstreaminessScores,
    PopularityTable,
    UserGroups,
    profile_popular_ratio,
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def safe_label(label: str) -> str:
    """Algorithm label as a filename fragment."""
    return re.sub(r"[^A-Za-z0-9_-]+", "-", label)


def write_figure1a(path: Path, table: PopularityTable) -> int:
    ids = np.array(table.item_ids)
    order = np.lexsort((ids, -table.listener_counts.astype(np.int64)))
    rows = [
        (rank, int(table.listener_counts[idx]))
        for rank, idx in enumerate(order, start=1)
    ]
    write_csv(path, ["rank", "listener_count"], rows)
    return len(rows)


def write_figure1b(path: Path, store: InteractionStore, table: PopularityTable) -> int:
    rows = [
        (user_id, profile_popular_ratio(store, table, user_id))
        for user_id in store.user_ids
    ]
    write_csv(path, ["user_id", "popular_ratio"], rows)
    return len(rows)


def write_figure2(path: Path, points) -> int:
    write_csv(
        path, ["user_id", "profile_size", "popular_count", "mean_popularity"], points
    )
    return len(points)


def write_groups(
    path: Path, groups: UserGroups, scores: MainstreaminessScores | None
) -> int:
    score_map = {}
    if scores is not None:
        score_map = dict(zip(scores.user_ids, scores.scores))
    rows = []
    for name, members in groups.as_dict().items():
        for user_id in members:
            score = score_map.get(user_id)
            rows.append((user_id, None if score is None else float(score), name))
    write_csv(path, ["user_id", "score", "group"], rows)
    return len(rows)


def read_groups(path: Path) -> UserGroups:
    """Load a precomputed groups.csv (as emitted by write_groups)."""
    members: dict[str, list[str]] = {"LowMS": [], "MedMS": [], "HighMS": []}
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user_id", "score", "group"]:
            raise ValidationError(
                f"{path}: expected header 'user_id,score,group', got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 columns")
            user_id, _, group = row
            if group not in members:
                raise ValidationError(
                    f"{path}:{lineno}: group must be one of LowMS/MedMS/HighMS"
                )
            if user_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate user {user_id!r}")
            seen.add(user_id)
            members[group].append(user_id)
    sizes = {name: len(m) for name, m in members.items()}
    if len(set(sizes.values())) != 1 or 0 in sizes.values():
        raise ValidationError(
            f"{path}: groups must be non-empty and equal-sized, got {sizes}"
        )
    return UserGroups(
        low=tuple(members["LowMS"]),
        med=tuple(members["MedMS"]),
        high=tuple(members["HighMS"]),
        group_size=sizes["LowMS"],
    )


def write_figure3(path: Path, table: PopularityTable, frequencies: np.ndarray) -> int:
    rows = [
        (item_id, float(table.popularity[i]), int(frequencies[i]))
        for i, item_id in enumerate(table.item_ids)
    ]
    write_csv(path, ["item_id", "popularity", "frequency"], rows)
    return len(rows)


def write_figure4(path: Path, rows) -> int:
    write_csv(path, ["group", "algorithm", "gap_p", "gap_r", "delta_gap"], rows)
    return len(rows)


def write_table1(path: Path, rows) -> int:
    write_csv(path, ["group", "algorithm", "mae", "n_records", "fallback_count"], rows)
    return len(rows)


def write_ttests(path: Path, rows) -> int:
    write_csv(path, ["algorithm", "group_pair", "t", "df", "p"], rows)
    return len(rows)


@dataclass
class StageRecord:
    name: str
    seconds: float
    records: int


@dataclass
class RunManifest:
    """Reproducibility record: config echo, stage log, file digests."""

    toolkit_version: str
    config: dict[str, str]
    stages: list[StageRecord]
    outputs: dict[str, str]

    def to_json(self) -> str:
        payload = {
            "toolkit_version": self.toolkit_version,
            "config": dict(sorted(self.config.items())),
            "stages": [
                {"name": s.name, "seconds": round(s.seconds, 6), "records": s.records}
                for s in self.stages
            ],
            "outputs": [
                {"file": name, "sha256": digest}
                for name, digest in sorted(self.outputs.items())
            ],
        }
        return json.dumps(payload, indent=2) + "\n"


def write_manifest(path: Path, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(manifest.to_json())


class OutputTracker:
    """Remembers files written during a run so failures can clean them up."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        target = self.out_dir / name
        self.written.append(target)
        return target

    def digests(self) -> dict[str, str]:
        return {p.name: sha256_of(p) for p in self.written if p.exists()}

    def discard_all(self) -> None:
        for target in self.written:
            try:
                if target.exists():
                    os.unlink(target)
            except OSError:
                pass
