"""
Command-line entry point for the chunked audio-video autoregressive model.

Commands:
  gen             synthesize a train/eval dataset
  train           train a model on a dataset, write checkpoint + metrics
  eval            exact-match evaluation of a checkpoint
  bench-combiner  activation counts and timings of the four combiners vs T
  ablate          T chunks x m dims against 1 chunk x T*m dims

Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
"""
import argparse
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.checkpoint import load_checkpoint, restore_model
from core.config import PRESETS, RunConfig, build_config, merge_config, validate_config
from core.errors import ChunkarError, ConfigError
from core.metrics import MetricsWriter, write_json
from core.model import TRAIN_STAGES, MultimodalModel
from core.timestamp_tracker import TimestampTracker
from core.training import (
    Trainer,
    ablation_equal_dims,
    batch_for,
    evaluate,
    synth_config_for,
)
from services.service_c_combiner_hub import COMBINER_VARIANTS
from utils.dataset_io import generate_clips, load_dataset, write_dataset
from utils.vocab import Vocab

# flag name -> RunConfig key
FLAG_KEYS = {
    "seed": "seed",
    "combiner": "combiner",
    "frames": "frames",
    "chunks": "chunks",
    "steps": "steps",
    "family": "family",
    "modalities": "modalities",
    "data": "data_dir",
    "out": "out_dir",
}


def banner(title: str):
    print("=" * 70)
    print(" " * 10 + title)
    print("=" * 70)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkar", description=__doc__.strip().splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (must carry schema_version)")
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--combiner", choices=COMBINER_VARIANTS)
    common.add_argument("--frames", type=int, help="N frames per clip")
    common.add_argument("--chunks", type=int, help="T chunks per clip")
    common.add_argument("--steps", type=int)
    common.add_argument("--family")
    common.add_argument("--modalities")
    common.add_argument("--timeline", action="store_true", help="print the stage timeline of one forward pass")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="synthesize a dataset")
    train = sub.add_parser("train", parents=[common], help="train a model")
    train.add_argument("--resume", help="checkpoint to continue from")
    evaluate_cmd = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", required=True)
    evaluate_cmd.add_argument("--zero-latents", action="store_true", help="replace h_hat with zeros")
    bench = sub.add_parser("bench-combiner", parents=[common], help="combiner scaling benchmark")
    bench.add_argument("--t-list", default="4,8,16,32")
    bench.add_argument("--repetitions", type=int, default=5)
    sub.add_parser("ablate", parents=[common], help="equal-total-dimension ablation")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items() if getattr(args, flag) is not None}
    return build_config(args.preset, args.config, flags)


def print_config(config: RunConfig, keys: List[str]):
    print("\n🔧 CONFIGURATION:")
    for key in keys:
        print(f"   {key}: {getattr(config, key)}")


# -- commands ---------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    out = Path(args.out or config.data_dir)
    banner("Synthetic Dataset Generation")
    print_config(config, ["family", "frames", "chunks", "num_clips", "eval_clips", "seed"])

    synth = synth_config_for(config)
    for split, count, root in (("train", config.num_clips, config.seed), ("eval", config.eval_clips, config.seed + 1)):
        clips = generate_clips(synth, count, root)
        manifest = write_dataset(out / split, clips, synth, root)
        print(f"\n✅ {split}: {len(clips)} clips -> {manifest}")
    Vocab.default(config.vocab_size).save(out / "vocab.txt")
    print(f"💾 Vocabulary saved to: {out / 'vocab.txt'}")
    return 0


def _show_timeline(model: MultimodalModel, batch):
    msg = model(batch.video[:1], batch.spectrogram[:1], batch.inputs[:1])
    TimestampTracker.display_pipeline_execution(msg, TRAIN_STAGES)


def cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    data = Path(config.data_dir)
    out = Path(config.out_dir)
    banner("Training")
    print_config(config, ["family", "combiner", "chunks", "combiner_tokens", "modalities",
                          "loss_weights", "lr", "batch_size", "steps", "seed"])

    train_clips, _ = load_dataset(data / "train")
    vocab = Vocab.default(config.vocab_size)
    trainer = Trainer(config, train_clips, vocab)
    eval_batch = None
    if (data / "eval").is_dir():
        eval_clips, _ = load_dataset(data / "eval")
        eval_batch = batch_for(config, eval_clips, vocab)

    if args.resume:
        trainer.restore(args.resume)
        print(f"\n↩️  Resumed from {args.resume} at step {trainer.step}")

    remaining = max(config.steps - trainer.step, 0)
    writer = MetricsWriter(out / "metrics.jsonl", append=bool(args.resume))
    print(f"\n🚀 Training for {remaining} steps...")

    def _progress(report):
        if report.step % config.eval_every == 0 or report.step == config.steps:
            print(f"   step {report.step:5d}  total={report.total:.4f}  latent={report.latent:.4f}  "
                  f"video={report.video_recon:.4f}  text={report.text_ce:.4f}")

    reports = trainer.fit(remaining, writer=writer, eval_batch=eval_batch, on_report=_progress)
    checkpoint = trainer.save(out / "checkpoint.ckpt")

    summary: Dict[str, Any] = {"config": config.to_dict(), "steps": trainer.step}
    if reports:
        summary["final"] = reports[-1].to_dict()
    if eval_batch is not None:
        result = evaluate(trainer.model, eval_batch, vocab)
        summary["eval"] = result.to_dict()
        print(f"\n📊 Exact-match accuracy: {result.accuracy:.3f} on {result.count} clips")
    write_json(out / "summary.json", summary)
    if args.timeline:
        _show_timeline(trainer.model, eval_batch or trainer.data)

    print(f"\n💾 Checkpoint saved to: {checkpoint}")
    print(f"💾 Metrics saved to: {writer.path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = validate_config(merge_config(RunConfig(), checkpoint.config))
    overrides = {key: getattr(args, flag) for flag, key in (("data", "data_dir"), ("out", "out_dir"))
                 if getattr(args, flag) is not None}
    config = merge_config(config, overrides)
    banner("Evaluation")
    print_config(config, ["family", "combiner", "chunks", "combiner_tokens", "modalities"])

    data = Path(config.data_dir)
    split = data / "eval" if (data / "eval").is_dir() else data / "train"
    clips, _ = load_dataset(split)
    vocab = Vocab.default(config.vocab_size)
    model = MultimodalModel(config)
    restore_model(model, checkpoint)
    batch = batch_for(config, clips, vocab)

    result = evaluate(model, batch, vocab, zero_latents=args.zero_latents)
    payload = dict(result.to_dict(), checkpoint=str(args.checkpoint), step=checkpoint.step)
    path = write_json(Path(config.out_dir) / "eval.json", payload)

    print(f"\n📊 Exact-match accuracy: {result.accuracy:.3f} on {result.count} clips")
    for family, accuracy in result.per_family.items():
        print(f"  - {family}: {accuracy:.3f}")
    if args.timeline:
        _show_timeline(model, batch)
    print(f"\n💾 Results saved to: {path}")
    return 0


def cmd_bench_combiner(args: argparse.Namespace) -> int:
    from core.bench import run_benchmark

    config = config_from_args(args)
    try:
        t_list = [int(t) for t in args.t_list.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--t-list must be integers, got '{args.t_list}'") from None
    banner("Combiner Scaling Benchmark")
    print_config(config, ["dim", "heads", "combiner_tokens", "combiner_layers", "memory_size", "read_size"])
    print(f"   features per chunk: {config.features_per_chunk}")

    report = run_benchmark(config, t_list, repetitions=args.repetitions)
    print(f"\n{'variant':<12}{'T':>5}{'total act.':>14}{'per step':>12}{'scores':>14}{'ms':>10}")
    print("-" * 67)
    for variant, result in report["variants"].items():
        for row in result["rows"]:
            print(f"{variant:<12}{row['chunks']:>5}{row['total_activations']:>14}"
                  f"{row['per_step_activations']:>12}{row['attention_scores']:>14}{row['wall_ms_median']:>10.2f}")
        slopes = result["slopes"]
        print(f"{'':<12}slopes: total {slopes['total_activations']:.2f}, "
              f"per step {slopes['per_step_activations']:.2f}, scores {slopes['attention_scores']:.2f}")
    print(f"\n📊 Single-chunk activation ratio (max/min): {report['single_chunk_ratio']:.2f}")
    path = write_json(Path(config.out_dir) / "bench.json", report)
    print(f"💾 Report saved to: {path}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    banner("Equal-Total-Dimension Ablation")
    print_config(config, ["family", "combiner", "chunks", "combiner_tokens", "steps", "seed"])
    report = ablation_equal_dims(config)
    for label in ("autoregressive", "baseline"):
        row = report[label]
        print(f"\n📊 {label}: {row['chunks']} chunk(s) x {row['combiner_tokens']} dims "
              f"= {row['total_dims']}  accuracy {row['accuracy']:.3f}")
    path = write_json(Path(config.out_dir) / "ablation.json", report)
    print(f"\n💾 Report saved to: {path}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-combiner": cmd_bench_combiner,
    "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"\n❌ Configuration error: {e}", file=sys.stderr)
        return 2
    except (ChunkarError, OSError) as e:
        print(f"\n❌ Error during {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"\n❌ Unexpected error during {args.command}: {e}", file=sys.stderr)
        traceback.print_exc()
        return 1
    print("\n" + "=" * 60)
    print(f"{args.command} completed successfully!")
    print("=" * 60 + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
