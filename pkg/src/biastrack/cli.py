"""Command-line entry points: full experiment runs plus single-stage tools.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
error. All emitted CSV files carry a one-line header; a run with identical
configuration (seeds included) reproduces byte-identical report files.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import fit_model, make_model
from .config import ExperimentConfig, load_config
from .dataset import (
    InteractionStore,
    generate_synthetic,
    load_interactions,
    scale_preferences,
    split_ratings,
    write_interactions,
)
from .evaluation import (
    GapCell,
    GapReport,
    delta_gap,
    group_average_popularity,
    mae_by_group,
    rec_popularity_correlation,
    test_predictions,
    top_n,
)
from .exceptions import (
    BiastrackError,
    ConfigError,
    DegenerateInputError,
    ParseError,
    ValidationError,
)
from .profiling import (
    flag_top_popular,
    group_users,
    item_popularity,
    mainstreaminess_scores,
    profile_points,
    profile_size_correlations,
)
from .reports import (
    OutputTracker,
    RunManifest,
    StageRecord,
    read_groups,
    safe_label,
    sha256_of,
    write_figure1a,
    write_figure1b,
    write_figure2,
    write_figure3,
    write_figure4,
    write_groups,
    write_manifest,
    write_table1,
    write_ttests,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

KNOWN_REPORT_FILES = (
    "figure1a.csv",
    "figure1b.csv",
    "figure2.csv",
    "groups.csv",
    "figure4.csv",
    "table1.csv",
    "ttests.csv",
    "synthetic.tsv",
)


class _Stages:
    def __init__(self):
        self.records: list[StageRecord] = []

    def run(self, name: str, func):
        start = time.perf_counter()
        result, count = func()
        self.records.append(
            StageRecord(name=name, seconds=time.perf_counter() - start, records=count)
        )
        return result


def _load_store(config: ExperimentConfig) -> InteractionStore:
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic, config.synthetic_seed)
    return load_interactions(config.input_path)


def _build_groups(store: InteractionStore, config: ExperimentConfig):
    """(groups, scores) per config; a groups file bypasses scoring."""
    if config.groups_file is not None:
        groups = read_groups(config.groups_file)
        known = set(store.user_ids)
        missing = [u for u in groups.all_users() if u not in known]
        if missing:
            raise ValidationError(
                f"groups file names {len(missing)} users absent from the data "
                f"(first: {missing[0]!r})"
            )
        return groups, None
    scores = mainstreaminess_scores(store)
    group_size = config.group_size
    if group_size is None:
        group_size = store.n_users // 3
    return group_users(scores, group_size), scores


def _profile_lists(store: InteractionStore) -> dict[str, tuple[str, ...]]:
    item_ids = store.item_ids
    return {
        user_id: tuple(item_ids[j] for j in store.profile_by_idx(u))
        for u, user_id in enumerate(store.user_ids)
    }


def _mae_rows(report, label: str) -> list[tuple]:
    return [
        (cell.group, label, cell.mae, cell.n_records, cell.fallback_count)
        for cell in (*report.groups, report.overall)
    ]


def _ttest_rows(report, label: str) -> list[tuple]:
    return [
        (
            label,
            f"{c.pair[0]}_vs_{c.pair[1]}",
            c.test.t_statistic,
            c.test.degrees_of_freedom,
            c.test.p_value,
        )
        for c in report.comparisons
    ]


def run_experiment(config: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Execute the full pipeline and emit every figure, table and manifest."""
    tracker = OutputTracker(Path(out_dir))
    stages = _Stages()
    try:
        def _load():
            loaded = _load_store(config)
            return loaded, loaded.n_interactions

        store = stages.run("load", _load)
        print(
            f"data: {store.n_users} users, {store.n_items} items, "
            f"{store.n_interactions} interactions"
        )
        if config.synthetic is not None:
            write_interactions(store, tracker.path("synthetic.tsv"))

        matrix = stages.run(
            "scale", lambda: (scale_preferences(store), store.n_interactions)
        )

        def _popularity():
            table = flag_top_popular(item_popularity(store), config.popularity_quantile)
            return table, store.n_items

        table = stages.run("popularity", _popularity)
        points = profile_points(store, table)
        write_figure1a(tracker.path("figure1a.csv"), table)
        write_figure1b(tracker.path("figure1b.csv"), store, table)
        write_figure2(tracker.path("figure2.csv"), points)
        try:
            correlations = profile_size_correlations(store, table)
            print(
                "profile-size correlations: "
                f"R(popular count)={correlations.r_size_vs_popular_count:.3f} "
                f"R(mean popularity)={correlations.r_size_vs_avg_popularity:.3f}"
            )
        except (DegenerateInputError, ValidationError) as exc:
            print(f"profile-size correlations: not computable ({exc})")

        def _groups():
            groups, scores = _build_groups(store, config)
            return (groups, scores), 3 * groups.group_size

        groups, scores = stages.run("groups", _groups)
        write_groups(tracker.path("groups.csv"), groups, scores)

        split = stages.run(
            "split",
            lambda: (
                split_ratings(matrix, config.split_ratio, config.split_seed),
                matrix.n_ratings,
            ),
        )
        print(
            f"split: {split.train.n_ratings} train / {len(split.test)} test "
            f"(ratio {config.split_ratio}, seed {config.split_seed})"
        )

        profile_lists = _profile_lists(store)
        gap_profile = {
            name: group_average_popularity(members, profile_lists, table)
            for name, members in groups.as_dict().items()
        }

        table1_rows = []
        ttest_rows = []
        figure4_rows = []
        for spec in config.algorithms:
            def _one_algorithm(spec=spec):
                model = make_model(spec.kind, **spec.params)
                fit_model(model, split.train, popularity=table)
                predictions = test_predictions(model, split)
                report = mae_by_group(predictions, groups, alpha=config.alpha)
                lists = top_n(
                    model,
                    split.train,
                    store.user_ids,
                    n=config.top_n,
                    min_listeners=config.candidate_min_listeners,
                    popularity=table,
                )
                return (model, predictions, report, lists), len(predictions)

            _, _, report, lists = stages.run(f"algorithm:{spec.label}", _one_algorithm)
            table1_rows.extend(_mae_rows(report, spec.label))
            ttest_rows.extend(_ttest_rows(report, spec.label))
            frequencies, corr = None, None
            try:
                frequencies, corr = rec_popularity_correlation(lists, table)
            except DegenerateInputError as exc:
                frequencies = np.zeros(table.n_items)
                for _, items in lists:
                    for item_id in items:
                        frequencies[table.item_idx(item_id)] += 1
                print(f"{spec.label}: no popularity correlation computable ({exc})")
            write_figure3(
                tracker.path(f"figure3_{safe_label(spec.label)}.csv"),
                table,
                frequencies,
            )
            rec_map = lists.as_mapping()
            for name, members in groups.as_dict().items():
                gap_r = group_average_popularity(members, rec_map, table)
                figure4_rows.append(
                    GapCell(
                        group=name,
                        algorithm=spec.label,
                        gap_profile=gap_profile[name],
                        gap_recommendation=gap_r,
                        delta=delta_gap(gap_r, gap_profile[name]),
                    )
                )
            overall = report.overall.mae
            corr_text = "n/a" if corr is None else f"{corr:.3f}"
            mae_text = "n/a" if overall is None else f"{overall:.3f}"
            print(f"{spec.label}: MAE(all)={mae_text} popularity-frequency R={corr_text}")

        write_table1(tracker.path("table1.csv"), table1_rows)
        write_ttests(tracker.path("ttests.csv"), ttest_rows)
        gap_report = GapReport(cells=tuple(figure4_rows))
        write_figure4(
            tracker.path("figure4.csv"),
            [
                (c.group, c.algorithm, c.gap_profile, c.gap_recommendation, c.delta)
                for c in gap_report.cells
            ],
        )

        manifest = RunManifest(
            toolkit_version=__version__,
            config=config.echo(),
            stages=stages.records,
            outputs=tracker.digests(),
        )
        write_manifest(tracker.path("manifest.json"), manifest)
        return manifest
    except BaseException:
        tracker.discard_all()
        raise


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    config = load_config(args.config)
    run_experiment(config, args.output_dir)
    return EXIT_OK


def _cmd_stats(args) -> int:
    store = load_interactions(args.input)
    table = flag_top_popular(item_popularity(store), args.quantile)
    counts = np.sort(table.listener_counts)[::-1]
    n_top = int(np.ceil(args.quantile * store.n_items))
    top_share = counts[:n_top].sum() / counts.sum()
    print(f"users: {store.n_users}")
    print(f"items: {store.n_items}")
    print(f"interactions: {store.n_interactions}")
    print(
        f"long-tail: top {args.quantile:.0%} of items hold {top_share:.1%} of "
        f"listener events; max listeners {int(counts[0])}, median {int(np.median(counts))}"
    )
    if args.output_dir is not None:
        tracker = OutputTracker(Path(args.output_dir))
        try:
            write_figure1a(tracker.path("figure1a.csv"), table)
            write_figure1b(tracker.path("figure1b.csv"), store, table)
            write_figure2(tracker.path("figure2.csv"), profile_points(store, table))
        except BaseException:
            tracker.discard_all()
            raise
    return EXIT_OK


def _cmd_groups(args) -> int:
    store = load_interactions(args.input)
    if args.groups_file is not None:
        groups = read_groups(Path(args.groups_file))
        scores = None
    else:
        scores = mainstreaminess_scores(store)
        group_size = args.group_size
        if group_size is None:
            group_size = store.n_users // 3
        groups = group_users(scores, group_size)
    tracker = OutputTracker(Path(args.output_dir))
    try:
        count = write_groups(tracker.path("groups.csv"), groups, scores)
    except BaseException:
        tracker.discard_all()
        raise
    print(f"groups.csv: {count} users in 3 groups of {groups.group_size}")
    return EXIT_OK


def _pipeline_prefix(config: ExperimentConfig):
    store = _load_store(config)
    matrix = scale_preferences(store)
    table = flag_top_popular(item_popularity(store), config.popularity_quantile)
    groups, _ = _build_groups(store, config)
    split = split_ratings(matrix, config.split_ratio, config.split_seed)
    return store, matrix, table, groups, split


def _cmd_train_eval(args) -> int:
    config = load_config(args.config)
    store, _, table, groups, split = _pipeline_prefix(config)
    table1_rows = []
    ttest_rows = []
    for spec in config.algorithms:
        model = make_model(spec.kind, **spec.params)
        fit_model(model, split.train, popularity=table)
        predictions = test_predictions(model, split)
        report = mae_by_group(predictions, groups, alpha=config.alpha)
        table1_rows.extend(_mae_rows(report, spec.label))
        ttest_rows.extend(_ttest_rows(report, spec.label))
        mae_text = "n/a" if report.overall.mae is None else f"{report.overall.mae:.3f}"
        print(f"{spec.label}: MAE(all)={mae_text}")
    tracker = OutputTracker(Path(args.output_dir))
    try:
        write_table1(tracker.path("table1.csv"), table1_rows)
        write_ttests(tracker.path("ttests.csv"), ttest_rows)
    except BaseException:
        tracker.discard_all()
        raise
    return EXIT_OK


def _cmd_gap(args) -> int:
    config = load_config(args.config)
    store, _, table, groups, split = _pipeline_prefix(config)
    profile_lists = _profile_lists(store)
    gap_profile = {
        name: group_average_popularity(members, profile_lists, table)
        for name, members in groups.as_dict().items()
    }
    figure4_rows = []
    tracker = OutputTracker(Path(args.output_dir))
    try:
        for spec in config.algorithms:
            model = make_model(spec.kind, **spec.params)
            fit_model(model, split.train, popularity=table)
            lists = top_n(
                model,
                split.train,
                store.user_ids,
                n=config.top_n,
                min_listeners=config.candidate_min_listeners,
                popularity=table,
            )
            try:
                frequencies, corr = rec_popularity_correlation(lists, table)
            except DegenerateInputError:
                corr = None
                frequencies = np.zeros(table.n_items)
                for _, items in lists:
                    for item_id in items:
                        frequencies[table.item_idx(item_id)] += 1
            write_figure3(
                tracker.path(f"figure3_{safe_label(spec.label)}.csv"), table, frequencies
            )
            rec_map = lists.as_mapping()
            for name, members in groups.as_dict().items():
                gap_r = group_average_popularity(members, rec_map, table)
                figure4_rows.append(
                    GapCell(
                        group=name,
                        algorithm=spec.label,
                        gap_profile=gap_profile[name],
                        gap_recommendation=gap_r,
                        delta=delta_gap(gap_r, gap_profile[name]),
                    )
                )
            corr_text = "n/a" if corr is None else f"{corr:.3f}"
            print(f"{spec.label}: popularity-frequency R={corr_text}")
        write_figure4(
            tracker.path("figure4.csv"),
            [
                (c.group, c.algorithm, c.gap_profile, c.gap_recommendation, c.delta)
                for c in figure4_rows
            ],
        )
    except BaseException:
        tracker.discard_all()
        raise
    return EXIT_OK


def _cmd_report(args) -> int:
    out_dir = Path(args.output_dir)
    if not out_dir.is_dir():
        raise ValidationError(f"no such output directory: {out_dir}")
    outputs = {}
    for name in sorted(p.name for p in out_dir.iterdir() if p.is_file()):
        if name == "manifest.json":
            continue
        if name in KNOWN_REPORT_FILES or name.startswith("figure3_"):
            outputs[name] = sha256_of(out_dir / name)
    if not outputs:
        raise ValidationError(
            f"{out_dir}: no report files found (expected e.g. table1.csv, "
            "figure4.csv, groups.csv); run the pipeline stages first"
        )
    manifest = RunManifest(
        toolkit_version=__version__, config={}, stages=[], outputs=outputs
    )
    write_manifest(out_dir / "manifest.json", manifest)
    print(f"manifest.json: {len(outputs)} files digested")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biastrack",
        description="Audit popularity bias of rating-based recommenders.",
    )
    parser.add_argument("--version", action="version", version=f"biastrack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline: data -> reports")
    p_run.add_argument("-c", "--config", required=True, help="experiment config file")
    p_run.add_argument("-o", "--output-dir", default=".", help="report directory")
    p_run.set_defaults(handler=_cmd_run)

    p_stats = sub.add_parser("stats", help="dataset statistics and long-tail figures")
    p_stats.add_argument("-i", "--input", required=True, help="interaction TSV file")
    p_stats.add_argument("--quantile", type=float, default=0.2)
    p_stats.add_argument("-o", "--output-dir", default=None)
    p_stats.set_defaults(handler=_cmd_stats)

    p_groups = sub.add_parser("groups", help="mainstreaminess user groups")
    p_groups.add_argument("-i", "--input", required=True, help="interaction TSV file")
    p_groups.add_argument("--groups-file", default=None, help="precomputed groups.csv")
    p_groups.add_argument("--group-size", type=int, default=None)
    p_groups.add_argument("-o", "--output-dir", default=".")
    p_groups.set_defaults(handler=_cmd_groups)

    p_tr = sub.add_parser("train-eval", help="fit models, MAE per group, t-tests")
    p_tr.add_argument("-c", "--config", required=True)
    p_tr.add_argument("-o", "--output-dir", default=".")
    p_tr.set_defaults(handler=_cmd_train_eval)

    p_gap = sub.add_parser("gap", help="top-N lists, frequency correlation, GAP")
    p_gap.add_argument("-c", "--config", required=True)
    p_gap.add_argument("-o", "--output-dir", default=".")
    p_gap.set_defaults(handler=_cmd_gap)

    p_rep = sub.add_parser("report", help="digest emitted files into manifest.json")
    p_rep.add_argument("-o", "--output-dir", default=".")
    p_rep.set_defaults(handler=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"data error: {message}", file=sys.stderr)
        return EXIT_DATA
    except BiastrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
