"""
Main entry point for HD-VQA.
Dataset generation, end-to-end training, evaluation and single-image queries.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.concepts import Concept
from src.config import load_defaults
from src.errors import (
    CheckpointError,
    CodebookMismatchError,
    DatasetFormatError,
    DivergenceError,
    NonFiniteError,
    QuasiOrthogonalityError,
    QuestionParseError,
    ZeroNormError,
)
from src.hdc import Codebook, make_codebook
from src.manifest import RunManifest
from src.network import DEFAULT_LAYER_SIZES, forward, init_model
from src.queries import NAMED_SETS, clean_margin_report, parse_question, parse_questions, score
from src.scenes import (
    GENERALIZATION_LABELS,
    QUESTION_LABELS,
    SplitSpec,
    build_dataset,
    decode_attribute_detail,
    flatten_image,
)
from src.storage import (
    ENCODINGS_FILE,
    IMAGES_FILE,
    LABELS_FILE,
    read_checkpoint,
    read_dataset,
    read_manifest,
    read_ppm,
    write_checkpoint,
    write_dataset,
    write_ppm,
)
from src.training import TrainConfig, evaluate, history_frame, train
from src.utils import atomic_write_text, sha256_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

logger = logging.getLogger("hdvqa")


class UsageError(Exception):
    """Bad command-line arguments detected after parsing."""


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors here exit with 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def banner(title: str) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def resolve_codebook(args, dataset_seed: Optional[int] = None, dataset_dim: Optional[int] = None) -> Codebook:
    """
    Codebook from the global flags, falling back to the dataset, then to defaults.

    Raises:
        CodebookMismatchError: If explicit flags contradict the dataset.
    """
    defaults = load_defaults()
    if dataset_seed is not None and args.codebook_seed is not None and args.codebook_seed != dataset_seed:
        raise CodebookMismatchError(f"--codebook-seed {args.codebook_seed} but the dataset uses {dataset_seed}")
    if dataset_dim is not None and args.dim is not None and args.dim != dataset_dim:
        raise CodebookMismatchError(f"--dim {args.dim} but the dataset uses {dataset_dim}")
    seed = next(v for v in (args.codebook_seed, dataset_seed, defaults.codebook_seed) if v is not None)
    dim = next(v for v in (args.dim, dataset_dim, defaults.dim) if v is not None)
    return make_codebook(seed, dim)


def write_manifest(args, manifest: RunManifest, default_path: Optional[Path] = None) -> None:
    path = args.manifest_out or default_path
    if path is not None:
        manifest.save(path)
        print(f"Run manifest written to {path}")


def cmd_generate(args) -> int:
    """Builds, labels, splits and writes the whole dataset."""
    defaults = load_defaults()
    cb = resolve_codebook(args)
    spec = SplitSpec(split_seed=args.split_seed if args.split_seed is not None else defaults.split_seed,
                     test_fraction=args.test_fraction, dedupe=args.dedupe)

    print(f"\n--- Generating dataset (dedupe={spec.dedupe}, codebook seed={cb.seed}, D={cb.dim}) ---")
    dataset = build_dataset(cb, spec)
    out_dir = Path(args.out_dir)
    write_dataset(dataset, out_dir)
    if args.ppm_dir:
        for r in dataset.records:
            write_ppm(r.image, Path(args.ppm_dir) / f"{r.index:05d}.ppm")

    q = np.array([r.q for r in dataset.records])
    g = np.array([r.g for r in dataset.records])
    print(f"Records:       {len(dataset)}")
    print(f"Train / test:  {len(dataset.indices('train'))} / {len(dataset.indices('test'))}")
    print("Label base rates (fraction positive):")
    for name, rate in zip(QUESTION_LABELS + GENERALIZATION_LABELS, np.concatenate([q.mean(0), g.mean(0)])):
        print(f"  {name}: {rate:.4f}")
    print(f"Dataset written to {out_dir}")

    manifest = RunManifest(command="generate", codebook_seed=cb.seed, dim=cb.dim, split_seed=spec.split_seed,
                           dedupe=spec.dedupe, dataset=str(out_dir))
    for name in (IMAGES_FILE, ENCODINGS_FILE, LABELS_FILE):
        manifest.record(name, out_dir / name)
    write_manifest(args, manifest)
    return EXIT_OK


def _train_config(args, replay: Optional[RunManifest]) -> TrainConfig:
    if replay is not None and replay.config is not None:
        return replay.config.model_copy(update={"progress": not args.quiet})
    defaults = load_defaults()
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        momentum=args.momentum,
        shuffle_seed=args.shuffle_seed if args.shuffle_seed is not None else defaults.shuffle_seed,
        init_seed=args.init_seed if args.init_seed is not None else defaults.init_seed,
        early_stop=args.early_stop,
        progress=not args.quiet,
    )


def cmd_train(args) -> int:
    """Trains the perceiver end-to-end and writes checkpoint, log and run manifest."""
    replay = RunManifest.load(args.manifest) if args.manifest else None
    dataset_dir = args.dataset_dir or (replay.dataset if replay else None)
    if dataset_dir is None:
        raise UsageError("train needs a dataset directory (or --manifest naming one)")
    dataset_dir = Path(dataset_dir)

    if replay is not None:
        args.codebook_seed = replay.codebook_seed if args.codebook_seed is None else args.codebook_seed
        for name in (IMAGES_FILE, ENCODINGS_FILE, LABELS_FILE):
            expected = replay.artifacts.get(name)
            if expected is not None and sha256_file(dataset_dir / name) != expected:
                raise DatasetFormatError(f"{name} in {dataset_dir} differs from the replayed manifest")

    data_manifest = read_manifest(dataset_dir)
    cb = resolve_codebook(args, data_manifest.codebook_seed, data_manifest.dim)
    dataset = read_dataset(dataset_dir, cb)
    config = _train_config(args, replay)

    print(f"\n--- Training on {dataset_dir} ({len(dataset.indices('train'))} train records) ---")
    print(f"Optimizer: {config.optimizer}, lr={config.learning_rate}, batch={config.batch_size}, "
          f"epochs<={config.epochs}, early stop<{config.early_stop}")
    sizes = (DEFAULT_LAYER_SIZES[0], DEFAULT_LAYER_SIZES[1], DEFAULT_LAYER_SIZES[2], cb.dim)
    model = init_model(config.init_seed, sizes)
    result = train(model, dataset, cb, config)

    checkpoint = Path(args.checkpoint_out)
    write_checkpoint(result.model, cb.seed, checkpoint)
    log_path = Path(args.log_out) if args.log_out else checkpoint.with_suffix(".csv")
    atomic_write_text(log_path, history_frame(result.history).to_csv(index=False, lineterminator="\n"))

    last = result.history[-1]
    banner("TRAINING REPORT")
    print(f"Epochs run:        {last.epoch}{' (early stop)' if result.stopped_early else ''}")
    print(f"First epoch loss:  {result.history[0].mean_loss:.5f}")
    print(f"Final epoch loss:  {last.mean_loss:.5f}")
    print("Final E1..E5:      " + ", ".join(f"{getattr(last, c):.4f}" for c in ("E1", "E2", "E3", "E4", "E5")))
    print(f"Wall time:         {last.wall_seconds:.1f} s")
    print(f"Checkpoint:        {checkpoint}")
    print(f"Training log:      {log_path}")
    print("=" * 60)

    manifest = RunManifest(command="train", codebook_seed=cb.seed, dim=cb.dim,
                           split_seed=data_manifest.split.split_seed, dedupe=data_manifest.dedupe,
                           init_seed=config.init_seed, shuffle_seed=config.shuffle_seed,
                           dataset=str(dataset_dir), checkpoint=str(checkpoint),
                           config=config.model_copy(update={"progress": False}))
    for name in (IMAGES_FILE, ENCODINGS_FILE, LABELS_FILE):
        manifest.record(name, dataset_dir / name)
    manifest.record("checkpoint", checkpoint)
    manifest.record("training_log", log_path)
    write_manifest(args, manifest, default_path=checkpoint.with_suffix(".manifest.json"))
    return EXIT_OK


def _load_checkpoint_for(args, checkpoint: Path, dataset_seed: Optional[int], dataset_dim: Optional[int]):
    model, ckpt_seed = read_checkpoint(checkpoint)
    if dataset_seed is not None and ckpt_seed != dataset_seed:
        raise CodebookMismatchError(f"checkpoint was trained with codebook seed {ckpt_seed}, dataset uses {dataset_seed}")
    if dataset_dim is not None and model.output_dim != dataset_dim:
        raise CodebookMismatchError(f"checkpoint outputs {model.output_dim} dims, dataset uses {dataset_dim}")
    cb = resolve_codebook(args, ckpt_seed, model.output_dim)
    return model, cb


def cmd_eval(args) -> int:
    """Thresholded accuracy of a checkpoint on one split."""
    questions = parse_questions(args.questions)
    data_manifest = read_manifest(args.dataset_dir)
    model, cb = _load_checkpoint_for(args, Path(args.checkpoint), data_manifest.codebook_seed, data_manifest.dim)
    dataset = read_dataset(args.dataset_dir, cb)
    idx = dataset.indices(args.split)
    report = evaluate(model, [dataset.records[i] for i in idx], questions, cb, split=args.split)

    banner(f"EVALUATION REPORT: split={args.split}, records={report.record_count}")
    for q in report.questions:
        published = f"  (published {q.published_accuracy:.0%})" if q.published_accuracy is not None else ""
        flag = "" if q.above_base_rate else "  [!] not above base rate"
        print(f"{q.question:<34} accuracy {q.accuracy:7.2%}  base {q.base_rate:7.2%}{published}{flag}")
    if report.cross_is_worst is not None:
        print(f"Cross is the worst generalization question: {'yes' if report.cross_is_worst else 'no'}")
    print("=" * 60)

    out = Path(args.report_out) if args.report_out else Path(args.checkpoint).with_suffix(f".eval-{args.split}.json")
    atomic_write_text(out, report.model_dump_json(indent=2) + "\n")
    print(f"Report written to {out}")

    manifest = RunManifest(command="eval", codebook_seed=cb.seed, dim=cb.dim, dataset=str(args.dataset_dir),
                           checkpoint=str(args.checkpoint))
    manifest.record("checkpoint", args.checkpoint)
    manifest.record("report", out)
    write_manifest(args, manifest)
    return EXIT_OK


def _query_vector(args) -> Tuple[np.ndarray, Codebook, str]:
    """The hypervector addressed by ``--clean``/``--checkpoint`` and the target."""
    target = args.target
    is_image_path = target.lower().endswith((".ppm", ".pnm", ".png"))
    if args.clean and is_image_path:
        raise UsageError("--clean needs a record index, not an image path")
    if not args.clean and not args.checkpoint:
        raise UsageError("give --checkpoint or --clean")

    dataset = None
    if not is_image_path or args.clean:
        if not args.dataset:
            raise UsageError("a record index needs --dataset")
        try:
            index = int(target)
        except ValueError:
            raise UsageError(f"'{target}' is neither a record index nor an image path") from None
        data_manifest = read_manifest(args.dataset)
        if args.clean:
            cb = resolve_codebook(args, data_manifest.codebook_seed, data_manifest.dim)
            dataset = read_dataset(args.dataset, cb)
        else:
            model, cb = _load_checkpoint_for(args, Path(args.checkpoint), data_manifest.codebook_seed, data_manifest.dim)
            dataset = read_dataset(args.dataset, cb)
        if not 0 <= index < len(dataset):
            raise UsageError(f"record index {index} out of range 0..{len(dataset) - 1}")
        record = dataset.records[index]
        label = f"record {index} ({record.scene.describe()})"
        if args.clean:
            return record.m, cb, label + " [clean encoding]"
        return forward(model, flatten_image(record.image)).out, cb, label

    model, cb = _load_checkpoint_for(args, Path(args.checkpoint), None, None)
    image = read_ppm(target)
    return forward(model, flatten_image(image)).out, cb, f"image {target}"


def cmd_query(args) -> int:
    """Scores one question on one image (network output or clean encoding)."""
    question = parse_question(args.question)
    vector, cb, label = _query_vector(args)
    result = score(question, vector, cb)
    print(f"Target:     {label}")
    print(f"Question:   {question.compact()}")
    print(f"Score:      {result.value:.6f}")
    print(f"Threshold:  {result.threshold}")
    print(f"Answer:     {'yes' if result.answer else 'no'}")
    return EXIT_OK


def cmd_decode(args) -> int:
    """Reads back the shape or color stored at one position."""
    vector, cb, label = _query_vector(args)
    value, margin, sims = decode_attribute_detail(vector, Concept(args.position), Concept(args.key), cb)
    print(f"Target:     {label}")
    print(f"Decoded {args.key} at {args.position}: {value.value} (margin {margin:.4f})")
    for concept, s in sims.items():
        print(f"  {concept.value:<10} {s:+.4f}")
    return EXIT_OK


def cmd_margins(args) -> int:
    """Distribution of clean-encoding scores around the decision thresholds."""
    data_manifest = read_manifest(args.dataset_dir)
    cb = resolve_codebook(args, data_manifest.codebook_seed, data_manifest.dim)
    dataset = read_dataset(args.dataset_dir, cb)
    report = clean_margin_report(dataset.scenes(), cb, NAMED_SETS["all"])

    rows = []
    for q in report.questions:
        for kind, groups in (("truth", q.by_truth), ("occurrences", q.by_occurrences)):
            for group, stats in groups.items():
                rows.append({"question": q.question, "threshold": q.threshold, "group_kind": kind,
                             "group": group, "count": stats.count, "min": stats.min,
                             "mean": stats.mean, "max": stats.max})
    frame = pd.DataFrame(rows)

    out_dir = Path(args.out_dir) if args.out_dir else Path(args.dataset_dir)
    atomic_write_text(out_dir / "margins.csv", frame.to_csv(index=False, lineterminator="\n"))
    atomic_write_text(out_dir / "margins.json", report.model_dump_json(indent=2) + "\n")

    banner(f"CLEAN MARGIN REPORT ({report.scene_count} scenes)")
    for q in report.questions:
        parts = [f"{k}x mean {s.mean:+.3f}" for k, s in q.by_occurrences.items() if s.mean is not None]
        print(f"{q.question:<34} thr {q.threshold:.2f}  clean acc {q.accuracy:6.2%}  " + "  ".join(parts))
    print("=" * 60)
    print(f"Margins written to {out_dir / 'margins.csv'}")
    write_manifest(args, RunManifest(command="margins", codebook_seed=cb.seed, dim=cb.dim,
                                     dataset=str(args.dataset_dir)))
    return EXIT_OK


def cmd_export_ppm(args) -> int:
    dataset = read_dataset(args.dataset_dir)
    if not 0 <= args.index < len(dataset):
        raise UsageError(f"record index {args.index} out of range 0..{len(dataset) - 1}")
    write_ppm(dataset.records[args.index].image, args.out)
    print(f"Record {args.index} ({dataset.records[args.index].scene.describe()}) written to {args.out}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="hdvqa", description="Hyperdimensional visual question answering.")
    parser.add_argument("--codebook-seed", type=int, default=None, help="codebook seed (default: dataset or env)")
    parser.add_argument("--dim", type=int, default=None, help="hypervector dimension (default: dataset or env)")
    parser.add_argument("--manifest-out", type=Path, default=None, help="write a run manifest JSON here")
    parser.add_argument("--log-level", default="WARNING", type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], help="logging level")
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("generate", help="enumerate, render, encode and split the dataset")
    p.add_argument("out_dir")
    p.add_argument("--dedupe", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.30)
    p.add_argument("--ppm-dir", default=None, help="also export every image as PPM")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the perceiver through the query losses")
    p.add_argument("dataset_dir", nargs="?")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log-out", default=None)
    p.add_argument("--manifest", default=None, help="replay the run described by this manifest")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["plain-sgd", "momentum-sgd", "adam"], default="adam")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--init-seed", type=int, default=None)
    p.add_argument("--early-stop", type=float, default=0.01)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of thresholded answers on a split")
    p.add_argument("checkpoint")
    p.add_argument("dataset_dir")
    p.add_argument("--questions", default="trained", help="comma separated questions or named sets")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--report-out", default=None)
    p.set_defaults(func=cmd_eval)

    for name, func, help_text in (("query", cmd_query, "score one question on one image"),
                                  ("decode", cmd_decode, "decode the shape/color at a position")):
        p = sub.add_parser(name, help=help_text)
        source = p.add_mutually_exclusive_group()
        source.add_argument("--checkpoint", default=None)
        source.add_argument("--clean", action="store_true", help="use the stored clean encoding")
        p.add_argument("--dataset", default=None, help="dataset directory (needed for a record index)")
        p.add_argument("target", help="record index or PPM path")
        if name == "query":
            p.add_argument("question")
        else:
            p.add_argument("position", choices=["top-left", "top-right", "bottom-left", "bottom-right"])
            p.add_argument("key", choices=["shape", "color"])
        p.set_defaults(func=func)

    p = sub.add_parser("margins", help="score distributions of clean encodings")
    p.add_argument("dataset_dir")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_margins)

    p = sub.add_parser("export-ppm", help="write one record image as PPM")
    p.add_argument("dataset_dir")
    p.add_argument("index", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_export_ppm)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logger.debug("running %s", args.command)

    try:
        return args.func(args)
    except (UsageError, QuestionParseError) as e:
        print(f"[!] Usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ZeroNormError, NonFiniteError) as e:
        print(f"[!] Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetFormatError, CheckpointError, CodebookMismatchError, QuasiOrthogonalityError,
            ValidationError, ValueError, OSError) as e:
        print(f"[!] Data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
