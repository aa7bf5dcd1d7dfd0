import argparse
import dataclasses
import json
import logging
import sys

from unistformer.core.accounting import ablation_grid, profile
from unistformer.core.attention import PoolingVariant
from unistformer.core.bootstrap import initialize_app_runtime
from unistformer.core.checkpoint import load_params, save_params
from unistformer.core.configuration import load_run_config, resolve_configs
from unistformer.core.dataset import MIN_SYNTH_FRAMES, SkeletonDataset, read_skel, synth_dataset
from unistformer.core.exceptions import ConfigError, GradCheckFailedError, ShapeError, UniSTError
from unistformer.core.export import block_attention, write_attention_csv
from unistformer.core.gradcheck import DEFAULT_TOLERANCE, run_checks
from unistformer.core.model import ModelConfig, UniSTFormer, tiny_config
from unistformer.core.runtime import get_runtime_config
from unistformer.core.skeleton import MODALITIES
from unistformer.core.training import TrainConfig, evaluate, train_loop

logger = logging.getLogger("unistformer.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PRESETS = ("full", "tiny")


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2, which is reserved for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _echo_config(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _emit_json(payload) -> None:
    print(json.dumps(payload, indent=2))


def _base_model(preset: str, **changes) -> ModelConfig:
    if preset == "tiny":
        return tiny_config(**changes)
    return ModelConfig(**changes)


def _model_overrides(args) -> dict:
    overrides = {"mlp_hidden": getattr(args, "mlp_hidden", None)}
    variant = getattr(args, "variant", None)
    overrides["variant"] = PoolingVariant(variant) if variant else None
    return overrides


def _train_overrides(args) -> dict:
    return {
        "lr": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "momentum": args.momentum,
        "weight_decay": args.weight_decay,
    }


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    _echo_config({
        "command": "gen", "seed": args.seed, "classes": args.classes,
        "per_class": args.per_class, "frames": args.frames, "out_dir": args.out_dir,
    })
    if args.frames < 1:
        raise ConfigError(f"--frames must be positive, got {args.frames}")
    dataset = synth_dataset(args.seed, args.classes, args.per_class, max(args.frames, MIN_SYNTH_FRAMES))
    if args.frames < MIN_SYNTH_FRAMES:
        dataset = dataset.resampled(args.frames)
    manifest_path = dataset.save(args.out_dir)
    print(manifest_path)
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = SkeletonDataset.load(args.data)
    run_config = load_run_config(args.config)
    base = _base_model(args.preset, graph=dataset.graph, num_classes=dataset.num_classes)
    model_config, train_config = resolve_configs(run_config, base, _model_overrides(args), _train_overrides(args))
    _echo_config({
        "command": "train", "data": args.data, "frames": args.frames, "modality": args.modality,
        "model": model_config.to_dict(), "train": train_config.to_dict(),
    })
    if model_config.num_joints != dataset.graph.num_joints:
        raise ShapeError(f"model expects {model_config.num_joints} joints, dataset has {dataset.graph.num_joints}")
    if model_config.num_classes < dataset.num_classes:
        raise ConfigError(f"model has {model_config.num_classes} classes, dataset needs {dataset.num_classes}")

    x, labels = dataset.arrays(args.frames, args.modality)
    model = UniSTFormer(model_config, seed=train_config.seed)
    if args.init_checkpoint:
        save_params(args.init_checkpoint, model.params)
    result = train_loop(model, x, labels, train_config, metrics_csv=args.metrics_csv, timing=not args.no_timing)
    save_params(args.out_checkpoint, result.model.params)
    _emit_json(result.metrics[-1].to_dict())
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = SkeletonDataset.load(args.data)
    config, params = load_params(args.checkpoint)
    _echo_config({
        "command": "eval", "data": args.data, "checkpoint": args.checkpoint,
        "frames": args.frames, "modality": args.modality, "model": config.to_dict(),
    })
    if config.num_joints != dataset.graph.num_joints:
        raise ShapeError(f"checkpoint expects {config.num_joints} joints, dataset has {dataset.graph.num_joints}")
    x, labels = dataset.arrays(args.frames, args.modality)
    if labels.max() >= config.num_classes:
        raise ConfigError(f"checkpoint has {config.num_classes} classes, dataset needs {dataset.num_classes}")
    metrics = evaluate(UniSTFormer(config, params=params), x, labels, args.batch_size)
    if args.no_timing:
        metrics = dataclasses.replace(metrics, seconds=0.0)
    _emit_json(metrics.to_dict())
    return EXIT_OK


def cmd_profile(args) -> int:
    run_config = load_run_config(args.config)
    config, _ = resolve_configs(run_config, _base_model(args.preset), _model_overrides(args))
    _echo_config({
        "command": "profile", "frames": args.frames, "format": args.format,
        "time_repeats": args.time_repeats, "model": config.to_dict(),
    })
    report = profile(config, args.frames, time_repeats=args.time_repeats)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.render_table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    _echo_config({"command": "gradcheck", "scope": args.scope, "tol": args.tol, "corrupt": args.corrupt})
    reports = run_checks(args.scope, tol=args.tol, corrupt=args.corrupt)
    if args.format == "json":
        _emit_json([r.to_dict() for r in reports])
    else:
        width = max(len(r.name) for r in reports)
        for r in reports:
            status = "ok" if r.passed else "FAIL"
            print(f"{r.name:<{width}}  {r.max_relative_error:.3e}  {status}")
    failed = [r for r in reports if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_relative_error)
        raise GradCheckFailedError(
            f"{len(failed)} of {len(reports)} checks failed; worst {worst.name}: "
            f"relative error {worst.max_relative_error:.3e} > {worst.tolerance:g}"
        )
    return EXIT_OK


def cmd_attn_export(args) -> int:
    _echo_config({
        "command": "attn-export", "checkpoint": args.checkpoint, "input": args.input,
        "block_index": args.block_index, "out": args.out, "pre_fusion": args.pre_fusion,
        "force_alpha": args.force_alpha, "png": args.png, "frames": args.frames, "modality": args.modality,
    })
    _, params = load_params(args.checkpoint)
    sequence = read_skel(args.input)
    matrix = block_attention(
        params, sequence, args.block_index,
        pre_fusion=args.pre_fusion, force_alpha=args.force_alpha,
        frames=args.frames, modality=args.modality,
    )
    write_attention_csv(args.out, matrix)
    if args.png:
        from unistformer.utils.plotting import render_heatmap

        kind = "A (pre-fusion)" if args.pre_fusion else "M (fused)"
        render_heatmap(matrix, args.png, title=f"block {args.block_index} {kind}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run_config = load_run_config(args.config)
    base, train_config = resolve_configs(
        run_config, _base_model(args.preset), train_overrides={"epochs": args.train_epochs or None, "seed": args.seed}
    )
    _echo_config({
        "command": "ablate", "frames": args.frames, "train_epochs": args.train_epochs,
        "model": base.to_dict(), "train": train_config.to_dict(),
    })
    rows = ablation_grid(base, args.frames)
    data = None
    if args.train_epochs:
        dataset = synth_dataset(args.seed, args.classes, args.per_class, args.train_frames, graph=base.graph)
        data = dataset.arrays()
    for row in rows:
        config = row.pop("config")
        if data is None:
            continue
        model = UniSTFormer(config.replace(num_classes=args.classes), seed=train_config.seed)
        last = train_loop(model, *data, train_config, timing=False).metrics[-1]
        row["loss"], row["top1"] = last.loss, last.top1

    if args.format == "json":
        _emit_json(rows)
    else:
        for row in rows:
            trained = f"  loss={row['loss']:.4f} top1={row['top1']:.4f}" if "loss" in row else ""
            print(f"{row['name']:<22}  params={row['params']:>9d}  flops={row['flops']:>13d}{trained}")
    return EXIT_OK


# --------------------------------------------------------------------- parser


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config with optional 'model' and 'train' objects")
    parser.add_argument("--preset", choices=PRESETS, default="full", help="Base model configuration before --config")


def _add_input_flags(parser: argparse.ArgumentParser, default_frames: int) -> None:
    parser.add_argument(
        "--frames", type=int, default=default_frames,
        help="Fit every sequence to this many frames (zero-pad short ones, subsample long ones)",
    )
    parser.add_argument("--modality", choices=MODALITIES, default="joint", help="Input stream derived at load time")


def build_parser() -> argparse.ArgumentParser:
    runtime = get_runtime_config()
    parser = CliParser(prog="unistformer", description="Unified spatial-temporal skeleton action recognition")
    parser.add_argument("--version", action="version", version=f"%(prog)s {runtime.app_version}")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = commands.add_parser("gen", help="Write a synthetic skeleton dataset")
    gen.add_argument("--seed", type=int, default=runtime.default_seed, help="Generator seed")
    gen.add_argument("--classes", type=int, default=runtime.default_classes, help="Number of classes")
    gen.add_argument("--per-class", type=int, default=runtime.default_per_class, help="Samples per class")
    gen.add_argument("--frames", type=int, default=runtime.default_frames, help="Frames per sequence")
    gen.add_argument("--out-dir", required=True, help="Output directory for SKEL files and manifest.json")
    gen.set_defaults(handler=cmd_gen)

    train = commands.add_parser("train", help="Train a model on a dataset directory")
    train.add_argument("--data", required=True, help="Dataset directory containing manifest.json")
    _add_model_flags(train)
    train.add_argument("--out-checkpoint", required=True, help="Checkpoint written after the last epoch")
    train.add_argument("--init-checkpoint", help="Also write the checkpoint before the first epoch")
    train.add_argument("--metrics-csv", help="Per-epoch metrics CSV")
    train.add_argument("--seed", type=int, help="Training seed (init, dropout and shuffling)")
    train.add_argument("--lr", type=float, help="Base learning rate")
    train.add_argument("--epochs", type=int, help="Number of epochs")
    train.add_argument("--batch-size", type=int, help="Mini-batch size")
    train.add_argument("--momentum", type=float, help="SGD momentum")
    train.add_argument("--weight-decay", type=float, help="L2 weight decay")
    train.add_argument("--variant", choices=[v.value for v in PoolingVariant], help="Pooling variant")
    train.add_argument("--mlp-hidden", type=int, help="Attention MLP hidden width")
    _add_input_flags(train, runtime.default_frames)
    train.add_argument("--no-timing", action="store_true", help="Record 0.0 seconds per epoch")
    train.set_defaults(handler=cmd_train)

    evaluate_cmd = commands.add_parser("eval", help="Evaluate a checkpoint on a dataset directory")
    evaluate_cmd.add_argument("--data", required=True, help="Dataset directory containing manifest.json")
    evaluate_cmd.add_argument("--checkpoint", required=True, help="Checkpoint to evaluate")
    evaluate_cmd.add_argument("--batch-size", type=int, default=128, help="Evaluation batch size")
    _add_input_flags(evaluate_cmd, runtime.default_frames)
    evaluate_cmd.add_argument("--no-timing", action="store_true", help="Report 0.0 seconds")
    evaluate_cmd.set_defaults(handler=cmd_eval)

    prof = commands.add_parser("profile", help="Per-layer parameter and FLOP report")
    _add_model_flags(prof)
    prof.add_argument("--frames", type=int, default=runtime.default_frames, help="Sequence length T")
    prof.add_argument("--format", choices=("json", "table"), default="table", help="Output format")
    prof.add_argument("--variant", choices=[v.value for v in PoolingVariant], help="Pooling variant")
    prof.add_argument("--mlp-hidden", type=int, help="Attention MLP hidden width")
    prof.add_argument("--time-repeats", type=int, default=0, help="Also time this many eval forwards")
    prof.set_defaults(handler=cmd_profile)

    check = commands.add_parser("gradcheck", help="Finite-difference gradient checks at float64")
    check.add_argument("--scope", choices=("op", "block", "model"), default="op", help="Which checks to run")
    check.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE, help="Maximum relative error")
    check.add_argument("--format", choices=("json", "table"), default="table", help="Output format")
    check.add_argument("--corrupt", action="store_true", help="Debug: perturb analytic gradients (must fail)")
    check.set_defaults(handler=cmd_gradcheck)

    export = commands.add_parser("attn-export", help="Export one block's attention map as CSV")
    export.add_argument("--checkpoint", required=True, help="Trained checkpoint")
    export.add_argument("--input", required=True, help="SKEL sequence file")
    export.add_argument("--block-index", type=int, default=0, help="Block to export")
    export.add_argument("--out", required=True, help="CSV output path")
    export.add_argument("--pre-fusion", action="store_true", help="Export the softmax map A instead of M")
    export.add_argument("--force-alpha", type=float, help="Debug: override the block's alpha")
    export.add_argument(
        "--force-alpha-zero", dest="force_alpha", action="store_const", const=0.0,
        help="Debug: alpha = 0, exporting the stored topology prior",
    )
    export.add_argument("--png", help="Also render a heat map PNG")
    _add_input_flags(export, runtime.default_frames)
    export.set_defaults(handler=cmd_attn_export)

    ablate = commands.add_parser("ablate", help="Hidden-width and pooling-variant grid")
    _add_model_flags(ablate)
    ablate.add_argument("--frames", type=int, default=runtime.default_frames, help="Sequence length T for FLOPs")
    ablate.add_argument("--format", choices=("json", "table"), default="table", help="Output format")
    ablate.add_argument("--train-epochs", type=int, default=0, help="Train every row for this many epochs")
    ablate.add_argument("--seed", type=int, default=runtime.default_seed, help="Seed for data and training")
    ablate.add_argument("--classes", type=int, default=runtime.default_classes, help="Synthetic classes")
    ablate.add_argument("--per-class", type=int, default=4, help="Synthetic samples per class")
    ablate.add_argument("--train-frames", type=int, default=16, help="Synthetic sequence length")
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    initialize_app_runtime(verbose=args.verbose)
    try:
        return args.handler(args)
    except UniSTError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
