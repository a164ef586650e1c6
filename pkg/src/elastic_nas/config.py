"""Run configuration: one strict JSON document wiring every stage together.

A run config has five sections (`space`, `train`, `search`, `eval`, `paths`),
each optional and each filled with toy-scale defaults. Parsing is strict:
any key not in the schema is a fatal error, so a typo in a hyperparameter
name cannot silently fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .archspace import PRESETS, SearchSpaceSpec
from .elastic_net import TrainConfig
from .linas import SearchConfig
from .nsga2 import GAConfig

# Fine-tuning settings quoted for the 7B-scale reference runs. Documented
# constants only: desk-scale training never uses them.
FINETUNE_7B_REFERENCE = {
    "epochs": 6,
    "learning_rate": 1e-5,
    "global_batch_size": 128,
}

# Toy-scale training defaults (see also TrainConfig).
DEFAULT_CORPUS_TOKENS = 131072

EVALUATOR_IDS = ("toy", "surrogate")
DEFAULT_SURROGATE_SEED = 42


class ConfigError(ValueError):
    """Raised for malformed run-config documents (unknown keys, bad types)."""


@dataclass(frozen=True)
class EvalSettings:
    suite_seed: int = 123
    n_items: int = 500


@dataclass(frozen=True)
class PathSettings:
    """Default artifact locations; CLI flags override them."""

    checkpoint: str | None = None
    history: str | None = None
    csv_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    space: SearchSpaceSpec
    space_preset: str | None
    train: TrainConfig
    corpus_tokens: int
    corpus_seed: int | None
    search: SearchConfig
    ga_generations: int
    evaluator_id: str
    surrogate_seed: int
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def resolved_corpus_seed(self) -> int:
        """Corpus stream follows the training seed unless pinned explicitly."""
        return self.train.seed if self.corpus_seed is None else self.corpus_seed

    def standalone_ga(self, seed: int) -> GAConfig:
        base = self.search.ga or GAConfig(generations=self.ga_generations, seed=0)
        return GAConfig(
            generations=self.ga_generations,
            seed=seed,
            pop_size=base.pop_size,
            p_crossover=base.p_crossover,
            eta_crossover=base.eta_crossover,
            p_mutation=base.p_mutation,
            eta_mutation=base.eta_mutation,
        )


def _require_mapping(doc: Any, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(doc).__name__}")
    return doc


def _reject_unknown(doc: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {where}: {', '.join(unknown)} "
            f"(allowed: {', '.join(allowed)})"
        )


def _get_int(doc: dict, key: str, default: int, where: str) -> int:
    val = doc.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {val!r}")
    return val


def _get_float(doc: dict, key: str, default: float, where: str) -> float:
    val = doc.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {val!r}")
    return float(val)


def _get_str(doc: dict, key: str, default: str, where: str) -> str:
    val = doc.get(key, default)
    if not isinstance(val, str):
        raise ConfigError(f"{where}.{key} must be a string, got {val!r}")
    return val


def _parse_space(doc: Any) -> tuple[SearchSpaceSpec, str | None]:
    if isinstance(doc, str):
        if doc not in PRESETS:
            raise ConfigError(
                f"unknown space preset {doc!r} (available: {', '.join(sorted(PRESETS))})"
            )
        return PRESETS[doc](), doc
    spec_doc = _require_mapping(doc, "space")
    _reject_unknown(spec_doc, ("dims", "layer_choices", "inter_choices"), "space")
    try:
        return SearchSpaceSpec.from_json_dict(spec_doc), None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid explicit space: {exc}") from exc


def _parse_train(doc: dict) -> tuple[TrainConfig, int, int | None]:
    _reject_unknown(
        doc,
        (
            "steps",
            "batch_size",
            "seq_len",
            "learning_rate",
            "seed",
            "alternation",
            "corpus_tokens",
            "corpus_seed",
        ),
        "train",
    )
    alternation = _get_str(doc, "alternation", "SUPERNET_FIRST", "train")
    corpus_seed = None
    if "corpus_seed" in doc:
        corpus_seed = _get_int(doc, "corpus_seed", 0, "train")
    try:
        cfg = TrainConfig(
            steps=_get_int(doc, "steps", 2000, "train"),
            batch_size=_get_int(doc, "batch_size", 32, "train"),
            seq_len=_get_int(doc, "seq_len", 64, "train"),
            learning_rate=_get_float(doc, "learning_rate", 3e-4, "train"),
            seed=_get_int(doc, "seed", 0, "train"),
            alternation=alternation,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc
    return cfg, _get_int(doc, "corpus_tokens", DEFAULT_CORPUS_TOKENS, "train"), corpus_seed


def _parse_ga(doc: dict) -> tuple[GAConfig, int]:
    _reject_unknown(
        doc,
        (
            "generations",
            "pop_size",
            "p_crossover",
            "eta_crossover",
            "p_mutation",
            "eta_mutation",
        ),
        "search.ga",
    )
    generations = _get_int(doc, "generations", 50, "search.ga")
    try:
        cfg = GAConfig(
            generations=generations,
            seed=0,
            pop_size=_get_int(doc, "pop_size", 50, "search.ga"),
            p_crossover=_get_float(doc, "p_crossover", 0.9, "search.ga"),
            eta_crossover=_get_float(doc, "eta_crossover", 15.0, "search.ga"),
            p_mutation=_get_float(doc, "p_mutation", 0.02, "search.ga"),
            eta_mutation=_get_float(doc, "eta_mutation", 20.0, "search.ga"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid search.ga section: {exc}") from exc
    return cfg, generations


def _parse_search(doc: dict) -> tuple[SearchConfig, int, str, int]:
    _reject_unknown(
        doc,
        (
            "budget",
            "pop_size",
            "inner_generations",
            "seed",
            "evaluator",
            "surrogate_seed",
            "ga",
        ),
        "search",
    )
    evaluator_id = _get_str(doc, "evaluator", "surrogate", "search")
    if evaluator_id not in EVALUATOR_IDS:
        raise ConfigError(
            f"search.evaluator must be one of {', '.join(EVALUATOR_IDS)}, got {evaluator_id!r}"
        )
    ga_doc = doc.get("ga", {})
    ga, ga_generations = _parse_ga(_require_mapping(ga_doc, "search.ga"))
    try:
        cfg = SearchConfig(
            budget=_get_int(doc, "budget", 250, "search"),
            pop_size=_get_int(doc, "pop_size", 50, "search"),
            inner_generations=_get_int(doc, "inner_generations", 100, "search"),
            ga=ga,
            seed=_get_int(doc, "seed", 0, "search"),
            evaluator_id=evaluator_id,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid search section: {exc}") from exc
    surrogate_seed = _get_int(doc, "surrogate_seed", DEFAULT_SURROGATE_SEED, "search")
    return cfg, ga_generations, evaluator_id, surrogate_seed


def _parse_eval(doc: dict) -> EvalSettings:
    _reject_unknown(doc, ("suite_seed", "n_items"), "eval")
    n_items = _get_int(doc, "n_items", 500, "eval")
    if n_items < 1:
        raise ConfigError(f"eval.n_items must be >= 1, got {n_items}")
    return EvalSettings(suite_seed=_get_int(doc, "suite_seed", 123, "eval"), n_items=n_items)


def _parse_paths(doc: dict) -> PathSettings:
    _reject_unknown(doc, ("checkpoint", "history", "csv_dir"), "paths")
    out = {}
    for key in ("checkpoint", "history", "csv_dir"):
        if key in doc:
            out[key] = _get_str(doc, key, "", "paths")
    return PathSettings(**out)


def parse_run_config(doc: Any) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig; unknown keys are fatal."""
    top = _require_mapping(doc, "run config")
    _reject_unknown(top, ("space", "train", "search", "eval", "paths"), "run config")
    space, preset = _parse_space(top.get("space", "toy"))
    train, corpus_tokens, corpus_seed = _parse_train(
        _require_mapping(top.get("train", {}), "train")
    )
    if corpus_tokens < train.batch_size * train.seq_len:
        raise ConfigError(
            f"train.corpus_tokens={corpus_tokens} is smaller than one batch "
            f"({train.batch_size}x{train.seq_len} tokens)"
        )
    search, ga_generations, evaluator_id, surrogate_seed = _parse_search(
        _require_mapping(top.get("search", {}), "search")
    )
    return RunConfig(
        space=space,
        space_preset=preset,
        train=train,
        corpus_tokens=corpus_tokens,
        corpus_seed=corpus_seed,
        search=search,
        ga_generations=ga_generations,
        evaluator_id=evaluator_id,
        surrogate_seed=surrogate_seed,
        eval=_parse_eval(_require_mapping(top.get("eval", {}), "eval")),
        paths=_parse_paths(_require_mapping(top.get("paths", {}), "paths")),
    )


def load_run_config(path: str) -> RunConfig:
    """Read and validate a run-config JSON file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_run_config(doc)
