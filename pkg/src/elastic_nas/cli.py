"""Command-line workflow: train -> search -> front/analyze -> quantize -> eval -> size.

Exit codes: 0 success, 2 usage or config error, 3 training divergence,
4 empty analysis subset. Every command is reproducible from (config, seed);
artifacts differ only in timestamps across reruns.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

from . import store
from .analysis import (
    EmptySubsetError,
    inter_size_probs,
    layer_count_probs,
    pareto_front,
    write_front_csv,
    write_inter_probs_csv,
    write_layer_probs_csv,
)
from .archspace import (
    BytePolicy,
    GenomeParseError,
    InvalidGenomeError,
    PRESETS,
    model_bytes,
    parse_genome,
    phenotype,
)
from .config import ConfigError, RunConfig, load_run_config, parse_run_config
from .elastic_net import (
    DivergenceError,
    NonFiniteError,
    SupernetWeights,
    init_supernet,
    subnet_extract,
    train_instatune,
)
from .linas import EvalRecord, SearchConfig, SearchHistory, linas_run, random_search
from .nsga2 import ObjectiveVector, nsga2_run
from .quant import QuantizedSubnet, forward_quantized, quantize_subnet
from .tasks import (
    SurrogateEvaluator,
    ToyEvaluator,
    eval_accuracy,
    eval_accuracy_fwd,
    gen_corpus,
    gen_mc_suite,
)

GIB = float(2**30)


class CliError(Exception):
    """Usage-level failure; message goes to stderr, exit code 2."""


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_run_config({})
    return load_run_config(path)


def _write_trace_csv(path: str, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "tag", "loss", "phenotype"])
        for entry in trace:
            pheno_text = f"{len(entry.phenotype)}:" + ",".join(
                str(s) for s in entry.phenotype
            )
            writer.writerow([entry.step, entry.tag, repr(entry.loss), pheno_text])


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = type(train_cfg)(
            steps=train_cfg.steps,
            batch_size=train_cfg.batch_size,
            seq_len=train_cfg.seq_len,
            learning_rate=train_cfg.learning_rate,
            seed=args.seed,
            alternation=train_cfg.alternation,
        )
    corpus_seed = cfg.corpus_seed if cfg.corpus_seed is not None else train_cfg.seed
    corpus = gen_corpus(seed=corpus_seed, n_tokens=cfg.corpus_tokens)
    weights = init_supernet(
        cfg.space.dims, max(cfg.space.inter_choices), seed=train_cfg.seed
    )

    def progress(step: int, loss: float) -> None:
        if step % 100 == 0 or step == train_cfg.steps - 1:
            print(f"step={step} loss={loss:.4f}", file=sys.stderr)

    weights, trace = train_instatune(
        weights, cfg.space, corpus, train_cfg, progress=progress
    )
    store.save_checkpoint(weights, args.out, seed=train_cfg.seed)
    _write_trace_csv(args.out + ".trace.csv", trace)
    print(f"checkpoint: {args.out}")
    print(f"trace: {args.out}.trace.csv ({len(trace)} steps)")
    return 0


class _BudgetExhausted(Exception):
    pass


class _RecordingEvaluator:
    """Adapts a real evaluator to the GA objective protocol with a budget cap.

    Measures each phenotype once; a fresh phenotype past the budget stops the
    run, so the history holds at most `budget` real evaluations.
    """

    def __init__(self, evaluator, space, budget: int):
        self.evaluator = evaluator
        self.space = space
        self.budget = budget
        self.history = SearchHistory()
        self._cache: dict = {}

    def __call__(self, genome):
        key = phenotype(genome, self.space)
        hit = self._cache.get(key)
        if hit is None:
            if len(self.history) >= self.budget:
                raise _BudgetExhausted
            res = self.evaluator.measure(genome)
            self.history.records.append(
                EvalRecord(
                    genome=genome,
                    size_bytes=res.size_bytes,
                    accuracy=res.accuracy,
                    measured=res.measured,
                    round_index=0,
                    seed=res.seed,
                    timestamp=time.time(),
                    throughput_tok_per_s=res.throughput_tok_per_s,
                )
            )
            hit = self._cache[key] = ObjectiveVector(
                size_bytes=float(res.size_bytes), accuracy=res.accuracy
            )
        return hit


def _build_evaluator(args, cfg: RunConfig):
    evaluator_id = args.evaluator or cfg.evaluator_id
    if evaluator_id == "surrogate":
        seed = args.surrogate_seed if args.surrogate_seed is not None else cfg.surrogate_seed
        return SurrogateEvaluator(cfg.space, seed), evaluator_id
    if evaluator_id == "toy":
        if not args.ckpt:
            raise CliError("the toy evaluator requires --ckpt (a trained supernet)")
        model = store.load_checkpoint(args.ckpt)
        if not isinstance(model, SupernetWeights):
            raise CliError(f"{args.ckpt} is not a supernet checkpoint")
        if model.dims != cfg.space.dims:
            raise CliError("checkpoint dims do not match the configured space")
        return (
            ToyEvaluator(model, cfg.space, cfg.eval.suite_seed, cfg.eval.n_items),
            evaluator_id,
        )
    raise CliError(f"unknown evaluator {evaluator_id!r}")


def _print_front(history: SearchHistory) -> None:
    front = pareto_front(history)
    print("size_bytes\tsize_gb\taccuracy\tgenome")
    for point in front.points:
        print(
            f"{point.size_bytes}\t{point.size_bytes / GIB:.6f}"
            f"\t{point.accuracy:.6f}\t{point.genome.to_text()}"
        )


def cmd_search(args) -> int:
    cfg = _load_config(args.config)
    evaluator, evaluator_id = _build_evaluator(args, cfg)
    budget = args.budget if args.budget is not None else cfg.search.budget
    seed = args.seed if args.seed is not None else cfg.search.seed
    try:
        search_cfg = SearchConfig(
            budget=budget,
            pop_size=cfg.search.pop_size,
            inner_generations=cfg.search.inner_generations,
            ga=cfg.search.ga,
            seed=seed,
            evaluator_id=evaluator_id,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    if args.method == "linas":
        history = linas_run(cfg.space, evaluator, search_cfg)
    elif args.method == "random":
        history = random_search(cfg.space, evaluator, budget, seed)
    else:
        recorder = _RecordingEvaluator(evaluator, cfg.space, budget)
        try:
            nsga2_run(cfg.space, recorder, cfg.standalone_ga(seed))
        except RuntimeError as exc:
            if not isinstance(exc.__cause__, _BudgetExhausted):
                raise
            print("budget exhausted; stopping the GA early", file=sys.stderr)
        history = recorder.history

    with open(args.history, "w"):
        pass
    for record in history.records:
        store.append_history(record, args.history)
    _print_front(history)
    print(f"history: {args.history} ({len(history)} records)", file=sys.stderr)
    return 0


def cmd_front(args) -> int:
    history = store.load_history(args.history)
    front = pareto_front(history)
    os.makedirs(args.csv_dir, exist_ok=True)
    out = os.path.join(args.csv_dir, "front.csv")
    write_front_csv(front, out)
    _print_front(history)
    print(f"front: {out}", file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    history = store.load_history(args.history)
    os.makedirs(args.csv_dir, exist_ok=True)
    table = layer_count_probs(history, args.percentile)
    layer_path = os.path.join(args.csv_dir, "layer_probs.csv")
    write_layer_probs_csv(table, layer_path)
    print(f"layer_probs: {layer_path}", file=sys.stderr)
    if args.layer_count is not None:
        tables = inter_size_probs(history, args.layer_count, args.percentile)
        inter_path = os.path.join(args.csv_dir, "inter_probs.csv")
        write_inter_probs_csv(tables, inter_path)
        print(f"inter_probs: {inter_path}", file=sys.stderr)
    return 0


def _load_supernet(path: str, cfg: RunConfig) -> SupernetWeights:
    model = store.load_checkpoint(path)
    if not isinstance(model, SupernetWeights):
        raise CliError(f"{path} is not a supernet checkpoint")
    if model.dims != cfg.space.dims:
        raise CliError("checkpoint dims do not match the configured space")
    return model


def cmd_quantize(args) -> int:
    cfg = _load_config(args.config)
    weights = _load_supernet(args.ckpt, cfg)
    genome = parse_genome(args.genome, cfg.space)
    pheno = phenotype(genome, cfg.space)
    subnet = subnet_extract(weights, pheno)
    qsubnet = quantize_subnet(subnet, pheno)
    store.save_checkpoint(qsubnet, args.out)
    fp16 = model_bytes(pheno, cfg.space.dims, BytePolicy.FP16_ALL).bytes
    int8 = model_bytes(pheno, cfg.space.dims, BytePolicy.INT8_LINEAR).bytes
    print(f"fp16 bytes: {fp16}")
    print(f"int8 bytes: {int8}")
    print(f"int8/fp16 ratio: {int8 / fp16:.4f}")
    print(f"quantized checkpoint: {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    suite_seed = args.suite_seed if args.suite_seed is not None else cfg.eval.suite_seed
    n_items = args.n_items if args.n_items is not None else cfg.eval.n_items
    suite = gen_mc_suite(suite_seed, n_items)
    genome = parse_genome(args.genome, cfg.space)
    pheno = phenotype(genome, cfg.space)
    if args.quantized:
        model = store.load_checkpoint(args.ckpt)
        if not isinstance(model, QuantizedSubnet):
            raise CliError(f"{args.ckpt} is not a quantized checkpoint")
        if tuple(model.phenotype) != pheno:
            raise CliError(
                f"genome phenotype {pheno} does not match checkpoint "
                f"phenotype {tuple(model.phenotype)}"
            )
        acc = eval_accuracy_fwd(lambda tokens: forward_quantized(model, tokens), suite)
        size = model_bytes(pheno, cfg.space.dims, BytePolicy.INT8_LINEAR)
        label = "int8"
    else:
        weights = _load_supernet(args.ckpt, cfg)
        acc = eval_accuracy(weights, pheno, suite)
        size = model_bytes(pheno, cfg.space.dims, BytePolicy.FP16_ALL)
        label = "fp16"
    print(f"accuracy: {acc:.4f}")
    print(f"size ({label}): {size.bytes} bytes = {size.display_gb:.1f} GB")
    return 0


def cmd_size(args) -> int:
    space = PRESETS[args.preset]()
    genome = parse_genome(args.genome, space)
    policy = BytePolicy.INT8_LINEAR if args.int8 else BytePolicy.FP16_ALL
    breakdown = model_bytes(phenotype(genome, space), space.dims, policy)
    print(f"params: {breakdown.total_params}")
    print(f"size: {breakdown.display_gb:.1f} GB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastic-nas",
        description="One-shot NAS for elastic decoder transformers: "
        "supernet training, predictor-guided search, and INT8 deployment sizing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a weight-shared supernet")
    p.add_argument("--config", help="run-config JSON (defaults: toy preset)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="multi-objective architecture search")
    p.add_argument("--method", choices=("linas", "random", "nsga2"), required=True)
    p.add_argument("--evaluator", choices=("toy", "surrogate"))
    p.add_argument("--budget", type=int, help="real-evaluation budget")
    p.add_argument("--ckpt", help="trained supernet (required for --evaluator toy)")
    p.add_argument("--history", required=True, help="history output path (JSON lines)")
    p.add_argument("--seed", type=int, help="search seed")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--surrogate-seed", type=int, help="surrogate coefficient seed")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("front", help="extract the Pareto front from a history")
    p.add_argument("--history", required=True)
    p.add_argument("--csv-dir", required=True)
    p.set_defaults(func=cmd_front)

    p = sub.add_parser("analyze", help="architecture-probability tables by percentile")
    p.add_argument("--history", required=True)
    p.add_argument("--percentile", type=float, default=100.0)
    p.add_argument("--layer-count", type=int, help="stratify inter-size probabilities")
    p.add_argument("--csv-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("quantize", help="extract a subnet and quantize linear weights to INT8")
    p.add_argument("--ckpt", required=True, help="trained supernet checkpoint")
    p.add_argument("--genome", required=True)
    p.add_argument("--out", required=True, help="quantized checkpoint output path")
    p.add_argument("--config", help="run-config JSON")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="multiple-choice accuracy of a subnet")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--genome", required=True)
    p.add_argument("--quantized", action="store_true", help="ckpt is a quantized subnet")
    p.add_argument("--suite-seed", type=int)
    p.add_argument("--n-items", type=int)
    p.add_argument("--config", help="run-config JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("size", help="analytic parameter count and deployed size")
    p.add_argument("--preset", choices=tuple(sorted(PRESETS)), required=True)
    p.add_argument("--genome", required=True)
    p.add_argument("--int8", action="store_true", help="INT8-linear byte policy")
    p.set_defaults(func=cmd_size)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CliError, ConfigError, GenomeParseError, InvalidGenomeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NonFiniteError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    except EmptySubsetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
