"""Command-line entry point for generation, training, distillation,
evaluation, inference, gradient checking and attention export.

Every run is reproducible from its flags, config file and seed alone;
the effective configuration is echoed to stdout.
"""

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from .autodiff import no_grad
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import MODES, STUDENT_INPUTS, TrainConfig
from .gradcheck import grad_check
from .export import export_attention
from .model import apply_mode_freezing, build_model, multimodal_forward
from .synthdata import (
    GenConfig, generate_dataset, load_dataset, read_manifest, write_dataset,
)
from .train import (
    ensemble_evaluate, evaluate, infer, metrics_row, append_metrics,
    multimodal_loss, train_conventional, train_multimodal, train_student,
)

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_GEN_KEYS = {f.name for f in fields(GenConfig)}


def _load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must be a JSON object")
    unknown = set(data) - _TRAIN_KEYS - _GEN_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    return data


def _echo(label, cfg_dict):
    print(f"{label}: {json.dumps(cfg_dict, sort_keys=True)}")


def _train_config(args, data_dir=None, base=None) -> TrainConfig:
    values = (base.to_dict() if base else TrainConfig().to_dict())
    if args.config:
        file_values = _load_config_file(args.config)
        values.update({k: v for k, v in file_values.items() if k in _TRAIN_KEYS})
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("epochs", "epochs"),
                      ("lr", "lr"), ("batch", "batch_size"),
                      ("student_input", "student_input")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if data_dir is not None:
        manifest = read_manifest(data_dir)
        vocab = manifest["config"]["vocab_size"]
        if values["vocab_size"] != TrainConfig().vocab_size and values["vocab_size"] != vocab:
            raise ValueError(f"config vocab_size {values['vocab_size']} != "
                             f"dataset vocab_size {vocab}")
        values["vocab_size"] = vocab
    return TrainConfig.from_dict(values)


def _gen_config(args) -> GenConfig:
    values = GenConfig().to_dict()
    if args.config:
        file_values = _load_config_file(args.config)
        values.update({k: v for k, v in file_values.items() if k in _GEN_KEYS})
    if args.seed is not None:
        values["seed"] = args.seed
    if args.rho is not None:
        values["rho"] = args.rho
    return GenConfig.from_dict(values)


def _find_instance(data_dir, inst_id):
    for split, instances in load_dataset(data_dir).items():
        for inst in instances:
            if inst.id == inst_id:
                return inst
    raise ValueError(f"instance id {inst_id!r} not found in {data_dir}")


def cmd_gen_data(args):
    cfg = _gen_config(args)
    _echo("gen-data config", cfg.to_dict())
    write_dataset(args.out, generate_dataset(cfg), cfg)
    manifest = read_manifest(args.out)
    print(f"wrote train/dev/test + manifest to {args.out} "
          f"(ideal accuracies: {manifest['ideal_accuracy']})")
    return 0


def cmd_train(args):
    cfg = _train_config(args, data_dir=args.data_dir)
    if cfg.mode not in ("multimodal", "conventional-text", "conventional-audio"):
        raise ValueError(f"train handles multimodal/conventional modes, not {cfg.mode!r}; "
                         "use the distill subcommand for students")
    _echo("train config", cfg.to_dict())
    splits = load_dataset(args.data_dir)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    if cfg.mode == "multimodal":
        ckpt, _ = train_multimodal(splits, cfg, metrics_path, log=print)
    else:
        ckpt, _ = train_conventional(splits, cfg, cfg.mode.split("-")[1],
                                     metrics_path, log=print)
    ckpt_path = os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(ckpt_path, ckpt)
    print(f"best dev accuracy {ckpt.dev_metric:.4f} at epoch {ckpt.epoch}; "
          f"saved {ckpt_path}")
    return 0


def cmd_distill(args):
    teacher = load_checkpoint(args.checkpoint)
    cfg = _train_config(args, data_dir=args.data_dir, base=teacher.config)
    cfg = cfg.replace(mode=f"distill-{args.modality}")
    _echo("distill config", cfg.to_dict())
    splits = load_dataset(args.data_dir)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    ckpt, _ = train_student(splits, teacher, args.modality, cfg,
                            metrics_path, log=print)
    ckpt_path = os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(ckpt_path, ckpt)
    print(f"best dev accuracy {ckpt.dev_metric:.4f} at epoch {ckpt.epoch}; "
          f"saved {ckpt_path}")
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    splits = load_dataset(args.data_dir)
    report = evaluate(splits[args.split], ckpt, args.mode, split=args.split)
    print(report.summary())
    if args.out:
        append_metrics(args.out, [metrics_row(ckpt.epoch, args.split, args.mode,
                                              report.losses, report.accuracy)])
        print(f"appended metrics to {args.out}")
    return 0


def cmd_infer(args):
    ckpt = load_checkpoint(args.checkpoint)
    inst = _find_instance(args.data_dir, args.id)
    answer, logits = infer(inst, ckpt, args.mode)
    print(f"instance {inst.id} kind={inst.kind} gold={inst.label}")
    print(f"mode={args.mode} logits={[round(float(x), 6) for x in logits.scores.data]} "
          f"answer={answer}")
    return 0


def cmd_gradcheck(args):
    # tiny full-model closure: d=8, two heads, 3 audio frames, 4 passage tokens
    gen = GenConfig(n_train=1, n_dev=1, n_test=1, seed=args.seed or 0,
                    passage_len_min=4, passage_len_max=4,
                    frames_min=3, frames_max=3, vocab_size=24)
    inst = generate_dataset(gen)["train"][0]
    cfg = TrainConfig(d=8, n_heads=2, vocab_size=24, dropout=0.0,
                      seed=args.seed or 0)
    model = build_model(cfg)
    apply_mode_freezing(model, "multimodal")

    def loss():
        y_a, y_p, _ = multimodal_forward(model, inst)
        return multimodal_loss(y_a, y_p, inst.label)[0]

    report = grad_check(loss, model.tree, samples=args.samples,
                        tolerance=args.tolerance, seed=args.seed or 0)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_export_attention(args):
    ckpt = load_checkpoint(args.checkpoint)
    if "multimodal" not in ckpt.trained:
        raise ValueError("export-attention needs a multimodal checkpoint")
    model = model_from_checkpoint(ckpt)
    inst = _find_instance(args.data_dir, args.id)
    with no_grad():
        _, _, fo = multimodal_forward(model, inst)
    summary = export_attention(fo, inst, args.out, svg=args.svg)
    print(f"wrote {len(summary['paths'])} files to {args.out}")
    return 0


def cmd_ensemble_eval(args):
    text_ckpt = load_checkpoint(args.text_checkpoint)
    audio_ckpt = load_checkpoint(args.audio_checkpoint)
    splits = load_dataset(args.data_dir)
    report = ensemble_evaluate(splits[args.split], text_ckpt, audio_ckpt,
                               split=args.split)
    print(report.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuseqa",
        description="audio+text four-choice comprehension: fusion, distillation, "
                    "evaluation and verification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, seed=True):
        if config:
            p.add_argument("--config", help="JSON config file; flags override it")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("gen-data", help="write train/dev/test splits + manifest")
    common(p)
    p.add_argument("--rho", type=float, help="fraction of TONE-kind instances")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="stage 1 or a conventional baseline")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--mode", choices=[m for m in MODES if not m.startswith("distill")])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--out", required=True, help="output directory (checkpoint + metrics)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="stage 2: train one student block")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True, help="multimodal teacher checkpoint")
    p.add_argument("--modality", required=True, choices=["text", "audio"])
    p.add_argument("--student-input", dest="student_input", choices=list(STUDENT_INPUTS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, choices=["multimodal", "text", "audio"])
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--out", help="metrics CSV to append to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="answer one instance by id")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, choices=["multimodal", "text", "audio"])
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-attention", help="write attention CSV/SVG files")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("ensemble-eval", help="averaged-unimodal ensemble baseline")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--text-checkpoint", required=True)
    p.add_argument("--audio-checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.set_defaults(func=cmd_ensemble_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
