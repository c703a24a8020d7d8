"""
messyseg Command Line
Generate data, train, predict, evaluate, run the ablation grid and run the numeric self-checks
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from messyseg import __version__
from messyseg.ablation import parse_grid, run_ablation
from messyseg.checkpoint import save_checkpoint
from messyseg.config import NoiseConfig, SynthStyle, build_model_config, load_json_config, resolve_workers
from messyseg.corpus import CorpusSplit, Document, corpus_stats, parse_corpus, split_corpus, write_corpus
from messyseg.crf import OUTSIDE
from messyseg.errors import MessysegError, UsageError
from messyseg.evaluation import convert_scheme, evaluate_corpus
from messyseg.model import load_model, train
from messyseg.selfcheck import run_selfcheck
from messyseg.synth import synth_generate

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _parse_ratios(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"ratios must be comma-separated numbers, got {text!r}")


def _parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise UsageError("at least one seed is required")
    return seeds


def _require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not Path(path).exists():
        raise UsageError(f"{flag} file not found: {path}")
    return path


def model_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """ModelConfig values given on the command line; None means not given"""
    overrides: Dict[str, Any] = {
        "scheme": args.scheme,
        "seed": args.seed,
        "embeddings_path": args.embeddings,
        "contextual_sidecar": args.contextual_sidecar,
        "contextual_provider": args.contextual_provider,
        "use_contextual": args.use_contextual,
        "use_static": args.use_static,
        "use_distance": args.use_distance,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "protocol": args.protocol,
        "hidden_size": args.hidden_size,
        "dropout": args.dropout,
    }
    if args.contextual_sidecar and not args.contextual_provider:
        overrides["contextual_provider"] = "file"
    return overrides


def _load_split(args: argparse.Namespace, default_ratios: str) -> CorpusSplit:
    docs = parse_corpus(_require_file(args.corpus, "--corpus"))
    if getattr(args, "dev", None):
        dev = parse_corpus(_require_file(args.dev, "--dev"))
        return CorpusSplit(train=docs, dev=dev, test=[])
    ratios = _parse_ratios(args.split or default_ratios)
    split = split_corpus(docs, ratios, args.split_seed)
    logger.info(f"Split corpus into train/dev/test sizes {split.sizes()}")
    return split


def cmd_synth(args: argparse.Namespace) -> int:
    """Write a synthetic corpus and print its statistics"""
    try:
        if args.noise_config:
            noise = NoiseConfig(**load_json_config(args.noise_config))
        else:
            noise = NoiseConfig.uniform(args.noise, seed=args.seed)
        style = SynthStyle(**load_json_config(args.style_config))
    except ValidationError as e:
        raise UsageError(f"invalid synthesis settings: {str(e)}")
    docs = synth_generate(args.n, args.seed, style, noise)
    write_corpus(docs, args.out)

    if args.split:
        split = split_corpus(docs, _parse_ratios(args.split), args.seed)
        out = Path(args.out)
        for name, part in zip(("train", "dev", "test"), (split.train, split.dev, split.test)):
            write_corpus(part, str(out.with_name(f"{out.stem}.{name}{out.suffix}")))

    stats = corpus_stats(docs)
    print(
        f"documents={stats.documents} segments={stats.segments} "
        f"median_segments_per_doc={stats.median_segments_per_doc:g} "
        f"median_segment_chars={stats.median_segment_chars:g} "
        f"median_doc_chars={stats.median_doc_chars:g}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model and write the checkpoint with its per-epoch log"""
    if not args.checkpoint:
        raise UsageError("--checkpoint (output path) is required")
    config = build_model_config(load_json_config(args.config), model_overrides(args))
    split = _load_split(args, "0.8,0.2,0.0")
    train_docs = convert_scheme(split.train, config.scheme, config.segment_class)
    dev_docs = convert_scheme(split.dev, config.scheme, config.segment_class)
    result = train(train_docs, dev_docs, config)

    checkpoint_path = Path(args.checkpoint)
    save_checkpoint(result.checkpoint, str(checkpoint_path))
    log_path = checkpoint_path.with_suffix(".log.tsv")
    result.history_frame().to_csv(log_path, sep="\t", index=False, float_format="%.6f")
    print(
        f"epochs={len(result.history)} best_epoch={result.best_epoch} protocol={result.protocol} "
        f"stop_reason={result.stop_reason!r} checkpoint={checkpoint_path} log={log_path}"
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    """Write a copy of the corpus with predicted labels"""
    model = load_model(_require_file(args.checkpoint, "--checkpoint"), args.embeddings, args.contextual_sidecar)
    docs = parse_corpus(_require_file(args.corpus, "--corpus"))
    predicted = [
        Document(doc.doc_id, doc.tokens, model.predict(doc).labels, list(doc.entities)) for doc in docs
    ]
    write_corpus(predicted, args.out)
    print(f"predicted={len(predicted)} out={args.out}")
    return 0


def _check_prediction_labels(docs: Sequence[Document], predictions: Sequence[List[str]], segment_class: str):
    allowed = {OUTSIDE, f"B-{segment_class}", f"I-{segment_class}"}
    for doc, labels in zip(docs, predictions):
        unknown = set(labels) - allowed
        if unknown:
            raise UsageError(f"document {doc.doc_id}: predicted labels {sorted(unknown)} are not in tag set {sorted(allowed)}")


def _predictions_from_file(gold: Sequence[Document], path: str) -> List[List[str]]:
    by_id = {doc.doc_id: doc for doc in parse_corpus(path)}
    predictions = []
    for doc in gold:
        predicted = by_id.get(doc.doc_id)
        if predicted is None or predicted.labels is None:
            raise UsageError(f"predictions file {path} has no labels for document {doc.doc_id}")
        predictions.append(predicted.labels)
    return predictions


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint or a predictions corpus against gold documents"""
    gold = parse_corpus(_require_file(args.corpus, "--corpus"))
    if not gold:
        raise UsageError("gold corpus is empty")
    if args.predictions:
        predictions = _predictions_from_file(gold, _require_file(args.predictions, "--predictions"))
        segment_class = args.segment_class
        metadata: Dict[str, Any] = {"predictions": args.predictions}
    else:
        model = load_model(_require_file(args.checkpoint, "--checkpoint"), args.embeddings, args.contextual_sidecar)
        predictions = [model.predict(doc).labels for doc in gold]
        segment_class = model.config.segment_class
        metadata = {"checkpoint": args.checkpoint, "scheme": model.config.scheme}
    _check_prediction_labels(gold, predictions, segment_class)

    report = evaluate_corpus(gold, predictions, segment_class, metadata)
    if args.report:
        report.write(args.report)
    print(report.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Train the grid over several seeds and write run and summary tables"""
    base = build_model_config(load_json_config(args.config), model_overrides(args))
    split = _load_split(args, "0.58,0.22,0.20")
    seeds = _parse_seeds(args.seeds) if args.seeds else list(range(args.num_seeds))
    workers = resolve_workers(args.workers)
    report = run_ablation(
        split,
        base,
        parse_grid(args.grid),
        seeds,
        out_dir=args.report,
        workers=workers,
        progress=not args.quiet,
    )
    if args.report:
        report.write(args.report)
    columns = ["cell", "runs", "failed", "pk_mean", "pk_sd", "f1_mean", "f1_sd", "p_f1_vs_baseline"]
    print(report.summary[columns].to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_selfcheck(args: argparse.Namespace) -> int:
    """Run gradient checks and oracles; exit 0 only if all pass"""
    results = run_selfcheck()
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name:<16} {result.seconds:6.1f}s  {result.detail}")
    return 0 if all(r.passed for r in results) else 3


def _add_model_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file with ModelConfig values")
    parser.add_argument("--scheme", choices=["bio", "bi"])
    parser.add_argument("--no-contextual", dest="use_contextual", action="store_const", const=False)
    parser.add_argument("--no-static", dest="use_static", action="store_const", const=False)
    parser.add_argument("--no-distance", dest="use_distance", action="store_const", const=False)
    parser.add_argument("--contextual-provider", choices=["degenerate", "window", "file"])
    parser.add_argument("--max-epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--protocol", choices=["early_stopping", "combined"])
    parser.add_argument("--hidden-size", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--split", help="train,dev,test ratios used when --dev is not given")
    parser.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--quiet", action="store_true", help="warnings only")
    common.add_argument("--seed", type=int)
    common.add_argument("--corpus")
    common.add_argument("--embeddings", help="static embeddings text file")
    common.add_argument("--contextual-sidecar", help="JSON Lines file of precomputed contextual layers")
    common.add_argument("--checkpoint")
    common.add_argument("--report")

    parser = argparse.ArgumentParser(prog="messyseg", description="Segment OCR'd announcement lists")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--noise", type=float, default=0.0, help="uniform OCR noise rate")
    synth.add_argument("--noise-config", help="JSON NoiseConfig (overrides --noise)")
    synth.add_argument("--style-config", help="JSON SynthStyle")
    synth.add_argument("--split", help="also write train/dev/test files with these ratios")
    synth.set_defaults(handler=cmd_synth, seed=0)

    train_parser = commands.add_parser("train", parents=[common], help="train a model")
    _add_model_flags(train_parser)
    train_parser.add_argument("--dev", help="dev corpus (otherwise split from --corpus)")
    train_parser.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", parents=[common], help="label a corpus")
    predict.add_argument("--out", required=True)
    predict.set_defaults(handler=cmd_predict)

    evaluate = commands.add_parser("evaluate", parents=[common], help="score predictions against gold")
    evaluate.add_argument("--predictions", help="predicted corpus (instead of --checkpoint)")
    evaluate.add_argument("--segment-class", default="Marriage")
    evaluate.set_defaults(handler=cmd_evaluate)

    ablate = commands.add_parser("ablate", parents=[common], help="run the feature/scheme ablation grid")
    _add_model_flags(ablate)
    ablate.add_argument("--grid", default="default", help='"default", "full" or cell names like all/bio,no-static/bi')
    ablate.add_argument("--seeds", help="comma-separated model seeds")
    ablate.add_argument("--num-seeds", type=int, default=3)
    ablate.add_argument("--workers", type=int, help="worker processes (default MESSYSEG_THREADS)")
    ablate.set_defaults(handler=cmd_ablate)

    selfcheck = commands.add_parser("selfcheck", parents=[common], help="run numeric self-checks")
    selfcheck.set_defaults(handler=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the command and map errors to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if args.command == "evaluate" and not (args.checkpoint or args.predictions):
        logger.error("evaluate needs --checkpoint or --predictions")
        return 2
    try:
        return args.handler(args)
    except MessysegError as e:
        logger.error(f"Error in {args.command}: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
