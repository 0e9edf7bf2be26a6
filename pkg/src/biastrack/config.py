"""Experiment configuration: a flat INI file with one section per algorithm.

Example::

    [data]
    input = interactions.tsv

    [split]
    ratio = 0.8
    seed = 42

    [algorithm:NMF]
    n_factors = 15
    seed = 3

Exactly one of ``[data] input`` and a ``[synthetic]`` section must be
present. Unknown sections or keys are rejected so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .algorithms import MODEL_KINDS
from .dataset import SyntheticConfig
from .exceptions import ConfigError, ValidationError
from .evaluation import DEFAULT_ALPHA, DEFAULT_TOP_N
from .profiling import DEFAULT_POPULAR_QUANTILE

_KNOWN_SECTIONS = {"data", "synthetic", "split", "groups", "popularity", "evaluation"}
_SECTION_KEYS = {
    "data": {"input"},
    "synthetic": {
        "n_users",
        "n_items",
        "interactions_per_user",
        "zipf_exponent",
        "mainstream_mix",
        "seed",
    },
    "split": {"ratio", "seed"},
    "groups": {"group_size", "groups_file"},
    "popularity": {"quantile"},
    "evaluation": {"top_n", "alpha", "candidate_min_listeners"},
}


@dataclass(frozen=True)
class AlgorithmSpec:
    """One model to train: report label, kind and hyperparameters."""

    label: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    input_path: Path | None
    synthetic: SyntheticConfig | None
    synthetic_seed: int
    split_ratio: float
    split_seed: int
    group_size: int | None
    groups_file: Path | None
    popularity_quantile: float
    top_n: int
    alpha: float
    candidate_min_listeners: int
    algorithms: tuple[AlgorithmSpec, ...]

    def echo(self) -> dict[str, str]:
        """Flat effective-value dump for the run manifest."""
        flat: dict[str, str] = {}
        if self.input_path is not None:
            flat["data.input"] = str(self.input_path)
        if self.synthetic is not None:
            syn = self.synthetic
            flat.update(
                {
                    "synthetic.n_users": str(syn.n_users),
                    "synthetic.n_items": str(syn.n_items),
                    "synthetic.interactions_per_user": str(syn.interactions_per_user),
                    "synthetic.zipf_exponent": str(syn.zipf_exponent),
                    "synthetic.mainstream_mix": str(syn.mainstream_mix),
                    "synthetic.seed": str(self.synthetic_seed),
                }
            )
        flat["split.ratio"] = str(self.split_ratio)
        flat["split.seed"] = str(self.split_seed)
        if self.group_size is not None:
            flat["groups.group_size"] = str(self.group_size)
        if self.groups_file is not None:
            flat["groups.groups_file"] = str(self.groups_file)
        flat["popularity.quantile"] = str(self.popularity_quantile)
        flat["evaluation.top_n"] = str(self.top_n)
        flat["evaluation.alpha"] = str(self.alpha)
        flat["evaluation.candidate_min_listeners"] = str(self.candidate_min_listeners)
        for spec in self.algorithms:
            prefix = f"algorithm:{spec.label}"
            flat[f"{prefix}.kind"] = spec.kind
            for key, value in sorted(spec.params.items()):
                flat[f"{prefix}.{key}"] = str(value)
        return flat


def _parse_scalar(section: str, key: str, text: str, target_type: type):
    try:
        if target_type is bool:
            raise ConfigError(f"[{section}] {key}: boolean parameters are not supported")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {text!r} as {target_type.__name__}"
        ) from None
    return text


def _algorithm_spec(section: str, parser: configparser.ConfigParser) -> AlgorithmSpec:
    label = section.split(":", 1)[1].strip()
    if not label:
        raise ConfigError(f"[{section}]: empty algorithm label")
    options = dict(parser.items(section))
    kind = options.pop("kind", label)
    if kind not in MODEL_KINDS:
        raise ConfigError(
            f"[{section}] kind: unknown algorithm {kind!r}; "
            f"expected one of {sorted(MODEL_KINDS)}"
        )
    defaults = MODEL_KINDS[kind]().get_params()
    params = {}
    for key, text in options.items():
        if key not in defaults:
            raise ConfigError(
                f"[{section}] {key}: {kind} accepts {sorted(defaults)}"
            )
        params[key] = _parse_scalar(section, key, text, type(defaults[key]))
    return AlgorithmSpec(label=label, kind=kind, params=params)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Parse and validate an experiment configuration file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    base = Path(path).resolve().parent
    algorithms: list[AlgorithmSpec] = []
    for section in parser.sections():
        if section.startswith("algorithm:"):
            algorithms.append(_algorithm_spec(section, parser))
            continue
        if section not in _KNOWN_SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        unknown = set(parser.options(section)) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(f"[{section}] {sorted(unknown)[0]}: unknown key")

    def get(section: str, key: str, target_type: type, default):
        if not parser.has_option(section, key):
            return default
        return _parse_scalar(section, key, parser.get(section, key), target_type)

    input_path = None
    if parser.has_option("data", "input"):
        input_path = (base / parser.get("data", "input")).resolve()
    has_synthetic = parser.has_section("synthetic")
    if (input_path is None) == (not has_synthetic):
        raise ConfigError(
            "[data] input / [synthetic]: exactly one input source must be configured"
        )

    synthetic = None
    synthetic_seed = 0
    if has_synthetic:
        for key in ("n_users", "n_items", "interactions_per_user"):
            if not parser.has_option("synthetic", key):
                raise ConfigError(f"[synthetic] {key}: required")
        try:
            synthetic = SyntheticConfig(
                n_users=get("synthetic", "n_users", int, None),
                n_items=get("synthetic", "n_items", int, None),
                interactions_per_user=get("synthetic", "interactions_per_user", int, None),
                zipf_exponent=get("synthetic", "zipf_exponent", float, 1.0),
                mainstream_mix=get("synthetic", "mainstream_mix", float, 0.7),
            )
        except ValidationError as exc:
            raise ConfigError(f"[synthetic]: {exc}") from None
        synthetic_seed = get("synthetic", "seed", int, 0)
    elif input_path is not None and not input_path.is_file():
        raise ConfigError(f"[data] input: no such file {input_path}")

    groups_file = None
    if parser.has_option("groups", "groups_file"):
        groups_file = (base / parser.get("groups", "groups_file")).resolve()
        if not groups_file.is_file():
            raise ConfigError(f"[groups] groups_file: no such file {groups_file}")

    split_ratio = get("split", "ratio", float, 0.8)
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError("[split] ratio: must lie strictly between 0 and 1")
    split_seed = get("split", "seed", int, 42)
    if split_seed < 0:
        raise ConfigError("[split] seed: must be non-negative")

    group_size = get("groups", "group_size", int, None)
    if group_size is not None and group_size < 1:
        raise ConfigError("[groups] group_size: must be a positive integer")

    quantile = get("popularity", "quantile", float, DEFAULT_POPULAR_QUANTILE)
    if not 0.0 < quantile <= 1.0:
        raise ConfigError("[popularity] quantile: must lie in (0, 1]")

    top_n = get("evaluation", "top_n", int, DEFAULT_TOP_N)
    if top_n < 1:
        raise ConfigError("[evaluation] top_n: must be a positive integer")
    alpha = get("evaluation", "alpha", float, DEFAULT_ALPHA)
    if not 0.0 < alpha < 1.0:
        raise ConfigError("[evaluation] alpha: must lie strictly between 0 and 1")
    min_listeners = get("evaluation", "candidate_min_listeners", int, 0)
    if min_listeners < 0:
        raise ConfigError("[evaluation] candidate_min_listeners: must be >= 0")

    if not algorithms:
        raise ConfigError("[algorithm:*]: at least one algorithm section is required")
    labels = [spec.label for spec in algorithms]
    if len(labels) != len(set(labels)):
        raise ConfigError("[algorithm:*]: duplicate algorithm labels")

    return ExperimentConfig(
        input_path=input_path,
        synthetic=synthetic,
        synthetic_seed=synthetic_seed,
        split_ratio=split_ratio,
        split_seed=split_seed,
        group_size=group_size,
        groups_file=groups_file,
        popularity_quantile=quantile,
        top_n=top_n,
        alpha=alpha,
        candidate_min_listeners=min_listeners,
        algorithms=tuple(algorithms),
    )
