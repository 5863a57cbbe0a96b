"""Command-line interface.

    srdistill train        --config run.cfg [--checkpoint resume.ckpt]
    srdistill eval         --config run.cfg --checkpoint model.ckpt
    srdistill ablate       --config run.cfg --axis components
    srdistill stats        --config run.cfg [--checkpoint student.ckpt]
    srdistill count-params --config run.cfg

Exit codes: 0 success, 2 config error (message names the key), 3 data
error (missing/empty/undersized images), 4 non-finite training loss,
5 checkpoint/architecture mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import models as M
from .config import parse_config_file, registry_help
from .data import load_image_set
from .errors import (CheckpointMismatch, ConfigError, DataError,
                     NonFiniteLoss)
from .evaluation import evaluate, teacher_worse_rate
from .train import ABLATION_AXES, expand_axis, fit, run_ablation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONFINITE = 4
EXIT_CHECKPOINT = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srdistill",
        description="Teacher/student distillation for single-image "
                    "super-resolution.",
        epilog="Config keys:\n" + registry_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "train": "train a student (optionally resume from --checkpoint)",
        "eval": "score a checkpoint on eval_dir (Y-PSNR per image and mean)",
        "ablate": "train/evaluate every variant along --axis across seeds",
        "stats": "fraction of patches where the teacher is worse than the student",
        "count-params": "print parameter counts for the configured models",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a key=value file")
        p.add_argument("--checkpoint", default="",
                       help="checkpoint path (train: resume; eval/stats: "
                            "overrides student_ckpt)")
        if name == "ablate":
            p.add_argument("--axis", required=True,
                           help="one of: " + ", ".join(ABLATION_AXES))
    return parser


def _load_train_set(rc):
    if not rc.train_dir:
        raise ConfigError("config key 'train_dir' is required for this command")
    return load_image_set(rc.train_dir)


def _load_eval_set(rc):
    if not rc.eval_dir:
        raise ConfigError("config key 'eval_dir' is required for this command")
    return load_image_set(rc.eval_dir)


def _shave(rc):
    return None if rc.shave < 0 else rc.shave


def cmd_train(args) -> int:
    rc = parse_config_file(args.config)
    train_set = _load_train_set(rc)
    eval_set = load_image_set(rc.eval_dir) if rc.eval_dir else None
    result = fit(rc.to_train_config(), train_set, eval_set=eval_set,
                 out_dir=rc.out_dir, resume=args.checkpoint)
    print(f"trained {result.state.step} steps")
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"metrics: {result.metrics_path}")
    if result.final_eval is not None:
        print(f"final eval mean_psnr_db: {result.final_eval.mean_psnr:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = parse_config_file(args.config)
    path = args.checkpoint or rc.student_ckpt
    if not path:
        raise ConfigError("config key 'student_ckpt' (or --checkpoint) is "
                          "required for eval")
    eval_set = _load_eval_set(rc)
    model, meta = ckpt.build_from_checkpoint(path)
    if meta["arch"] != rc.arch:
        raise CheckpointMismatch(
            f"{path}: checkpoint arch {meta['arch']!r} does not match config "
            f"arch {rc.arch!r}")
    if model.scale != rc.scale:
        raise CheckpointMismatch(
            f"{path}: checkpoint scale {model.scale} does not match config "
            f"scale {rc.scale}")
    out_dir = Path(rc.out_dir)
    dump = out_dir / "images" if rc.dump_images else None
    report = evaluate(model, eval_set, rc.scale, shave=_shave(rc), dump_dir=dump)
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    table = report.format_table()
    (out_dir / "reports" / "eval.txt").write_text(table + "\n")
    with open(out_dir / "reports" / "eval.ndjson", "w") as f:
        for rec in report.to_records():
            f.write(json.dumps(rec) + "\n")
    print(table)
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = parse_config_file(args.config)
    train_set = _load_train_set(rc)
    eval_set = _load_eval_set(rc)
    base = rc.to_train_config()
    variants = expand_axis(base, args.axis)
    rows = run_ablation(variants, train_set, eval_set, rc.ablate_seeds,
                        rc.out_dir)
    from .train import format_ablation_table
    print(format_ablation_table(rows))
    return EXIT_OK


def cmd_stats(args) -> int:
    rc = parse_config_file(args.config)
    if not rc.teacher_ckpt:
        raise ConfigError("config key 'teacher_ckpt' is required for stats")
    student_path = args.checkpoint or rc.student_ckpt
    if not student_path:
        raise ConfigError("config key 'student_ckpt' (or --checkpoint) is "
                          "required for stats")
    if rc.n_samples < 1:
        raise ConfigError(f"config key 'n_samples' must be >= 1, got {rc.n_samples}")
    image_set = _load_train_set(rc)
    teacher, _ = ckpt.build_from_checkpoint(rc.teacher_ckpt)
    student, _ = ckpt.build_from_checkpoint(student_path)
    rate = teacher_worse_rate(teacher, student, image_set, rc.patch, rc.scale,
                              n_samples=rc.n_samples, seed=rc.seed)
    out_dir = Path(rc.out_dir)
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    (out_dir / "reports" / "stats.json").write_text(json.dumps(
        {"teacher_worse_rate": round(rate, 6), "n_samples": rc.n_samples,
         "patch": rc.patch, "scale": rc.scale, "seed": rc.seed}, indent=1))
    print(f"teacher_worse_rate {rate:.4f}")
    return EXIT_OK


def cmd_count_params(args) -> int:
    rc = parse_config_file(args.config)
    student = M.build_model(rc.arch, rc.student_config())
    print(f"student {rc.arch} params {M.param_count(student)}")
    t_arch = rc.teacher_arch or rc.arch
    teacher = M.build_model(t_arch, rc.teacher_config())
    print(f"teacher {t_arch} params {M.param_count(teacher)}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "stats": cmd_stats,
    "count-params": cmd_count_params,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLoss as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except CheckpointMismatch as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ValueError as exc:  # residual shape/value problems are usage errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
