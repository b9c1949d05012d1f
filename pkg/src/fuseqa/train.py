"""Training stages, inference modes, evaluation and the ensemble baseline.

Stage 1 (multimodal) optimizes encoders + fusion + predictor with
CE(audio stream) + CE(text stream) + MSE(between the two logit vectors).
Stage 2 freezes all of that and trains one student block against the
frozen teacher's representations. Conventional unimodal baselines train
encoder + predictor directly with no fusion and no students.

All loops are single-threaded and fully determined by the config seed.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import add, backward_pass, cross_entropy, mse, no_grad, scale
from .checkpoint import Checkpoint, model_from_checkpoint
from .config import TrainConfig
from .distill import distill_loss, student_forward
from .encoders import Logits, encode_audio, encode_text
from .model import (
    Model, apply_mode_freezing, build_model, conventional_forward,
    multimodal_forward, student_mode_forward,
)
from .optim import AdamState, adam_step

METRICS_FIELDS = ("epoch", "split", "mode", "loss_ce_a", "loss_ce_p",
                  "loss_mse_logits", "loss_mkd", "accuracy")


class TrainingDivergedError(RuntimeError):
    pass


class UntrainedComponentError(RuntimeError):
    pass


@dataclass
class EvalReport:
    split: str
    mode: str
    accuracy: float
    per_kind: dict
    losses: dict
    n: int

    def summary(self) -> str:
        kinds = " ".join(f"{k}={v:.4f}" for k, v in sorted(self.per_kind.items()))
        losses = " ".join(f"{k}={v:.4f}" for k, v in sorted(self.losses.items()))
        return (f"[{self.split}] mode={self.mode} n={self.n} "
                f"accuracy={self.accuracy:.4f} ({kinds}) {losses}")


def multimodal_loss(y_audio: Logits, y_text: Logits, label: int,
                    mse_weight: float = 1.0, mse_backprop: bool = True):
    """CE(audio, label) + CE(text, label) + MSE(audio logits, text logits).

    Returns (total loss tensor, float parts). With mse_backprop off the
    MSE term is reported but detached from both streams.
    """
    ce_a = cross_entropy(y_audio.scores, label)
    ce_p = cross_entropy(y_text.scores, label)
    a = y_audio.scores if mse_backprop else y_audio.scores.detach()
    p = y_text.scores if mse_backprop else y_text.scores.detach()
    mse_l = mse(a, p)
    total = add(add(ce_a, ce_p), scale(mse_l, mse_weight) if mse_weight != 1.0 else mse_l)
    return total, {"ce_a": ce_a.item(), "ce_p": ce_p.item(), "mse_logits": mse_l.item()}


def _rngs(seed: int):
    """Independent streams (shuffle, dropout, stage-2 init) from one seed."""
    streams = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in streams)


def _route(trained, modality: str) -> str:
    """Pick the inference route a checkpoint supports for one modality."""
    if f"student.{modality}" in trained:
        return "student"
    if f"conventional-{modality}" in trained:
        return "conventional"
    raise UntrainedComponentError(
        f"{modality} inference needs a distilled student or a conventional "
        f"{modality} model; checkpoint has {trained or ['nothing trained']}")


def _infer_model(model: Model, inst, mode: str, trained, student_input: str):
    """(answer, logits) for one instance on an in-memory model, no dropout."""
    with no_grad():
        if mode == "multimodal":
            if "multimodal" not in trained:
                raise UntrainedComponentError("multimodal inference on a checkpoint "
                                              f"trained as {trained}")
            y_a, y_p, _ = multimodal_forward(model, inst)
            combined = Logits(scores=add(y_a.scores, y_p.scores), modality="combined")
            return combined.argmax(), combined
        if mode in ("text", "audio"):
            if _route(trained, mode) == "student":
                y, _ = student_mode_forward(model, inst, mode, student_input)
            else:
                y = conventional_forward(model, inst, mode)
            return y.argmax(), y
        raise ValueError(f"unknown inference mode {mode!r}")


def infer(inst, ckpt: Checkpoint, mode: str, model: Model = None):
    """Answer one instance from a checkpoint; ties break to the lowest index."""
    if model is None:
        model = model_from_checkpoint(ckpt)
    return _infer_model(model, inst, mode, ckpt.trained, ckpt.config.student_input)


def _eval_model(instances, model: Model, mode: str, trained, split: str,
                student_input: str = "intra") -> EvalReport:
    if not instances:
        raise ValueError("evaluate: empty split")
    correct, kind_n, kind_correct = 0, {}, {}
    sums = {}
    with no_grad():
        for inst in instances:
            if mode == "multimodal":
                y_a, y_p, _ = multimodal_forward(model, inst)
                _, parts = multimodal_loss(y_a, y_p, inst.label)
                answer = int(np.argmax(y_a.scores.data + y_p.scores.data))
            else:
                route = _route(trained, mode)
                if route == "student":
                    y, outs = student_mode_forward(model, inst, mode, student_input)
                    _, _, fo = multimodal_forward(model, inst)
                    parts = {f"ce_{'a' if mode == 'audio' else 'p'}":
                             cross_entropy(y.scores, inst.label).item(),
                             "mkd": distill_loss(fo, outs).item()}
                else:
                    y = conventional_forward(model, inst, mode)
                    parts = {f"ce_{'a' if mode == 'audio' else 'p'}":
                             cross_entropy(y.scores, inst.label).item()}
                answer = y.argmax()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            hit = int(answer == inst.label)
            correct += hit
            kind_n[inst.kind] = kind_n.get(inst.kind, 0) + 1
            kind_correct[inst.kind] = kind_correct.get(inst.kind, 0) + hit
    n = len(instances)
    return EvalReport(
        split=split, mode=mode, accuracy=correct / n,
        per_kind={k: kind_correct[k] / kind_n[k] for k in kind_n},
        losses={k: v / n for k, v in sums.items()}, n=n)


def evaluate(instances, ckpt: Checkpoint, mode: str, split: str = "test",
             model: Model = None) -> EvalReport:
    """Accuracy (overall and per instance kind) plus mean loss components."""
    if model is None:
        model = model_from_checkpoint(ckpt)
    return _eval_model(instances, model, mode, ckpt.trained, split,
                       ckpt.config.student_input)


def metrics_row(epoch, split, mode, losses: dict, accuracy) -> dict:
    return {
        "epoch": epoch, "split": split, "mode": mode,
        "loss_ce_a": losses.get("ce_a", ""),
        "loss_ce_p": losses.get("ce_p", ""),
        "loss_mse_logits": losses.get("mse_logits", ""),
        "loss_mkd": losses.get("mkd", ""),
        "accuracy": accuracy,
    }


def append_metrics(path, rows):
    """Append rows to the metrics CSV, writing the header on first use."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        if new:
            writer.writeheader()
        writer.writerows(rows)


def _seed_state(rng) -> dict:
    return rng.bit_generator.state


def _check_finite_loss(value: float, epoch: int, step: int):
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss {value} at epoch {epoch} step {step}")


def _epoch_batches(n, batch_size, shuffle_rng):
    perm = shuffle_rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_multimodal(splits: dict, config: TrainConfig, metrics_path=None,
                     log=None):
    """Stage 1: optimize encoders + fusion + predictor; best-dev checkpoint."""
    return _train_supervised(splits, config.replace(mode="multimodal"),
                             metrics_path, log)


def train_conventional(splits: dict, config: TrainConfig, modality: str,
                       metrics_path=None, log=None):
    """Unimodal baseline: encoder + predictor only."""
    return _train_supervised(splits, config.replace(mode=f"conventional-{modality}"),
                             metrics_path, log)


def _train_supervised(splits, config: TrainConfig, metrics_path, log):
    train_set, dev_set = splits["train"], splits["dev"]
    if not train_set:
        raise ValueError("train split is empty")
    mode = config.mode
    modality = mode.split("-")[1] if mode.startswith("conventional") else None
    eval_mode = "multimodal" if mode == "multimodal" else modality
    trained = [mode]

    model = build_model(config)
    apply_mode_freezing(model, mode)
    adam = AdamState(lr=config.lr)
    shuffle_rng, dropout_rng, _ = _rngs(config.seed)

    best = Checkpoint(config=config, values=model.tree.copy_values(),
                      trained=trained, seed_state=_seed_state(shuffle_rng))
    best_acc = -1.0
    rows = []
    for epoch in range(1, config.epochs + 1):
        sums, correct, steps = {}, 0, 0
        for batch in _epoch_batches(len(train_set), config.batch_size, shuffle_rng):
            steps += 1
            batch_losses = []
            for idx in batch:
                inst = train_set[idx]
                if mode == "multimodal":
                    y_a, y_p, _ = multimodal_forward(model, inst, dropout_rng, training=True)
                    loss, parts = multimodal_loss(
                        y_a, y_p, inst.label,
                        config.logit_mse_weight, config.logit_mse_backprop)
                    answer = int(np.argmax(y_a.scores.data + y_p.scores.data))
                else:
                    y = conventional_forward(model, inst, modality)
                    loss = cross_entropy(y.scores, inst.label)
                    parts = {f"ce_{'a' if modality == 'audio' else 'p'}": loss.item()}
                    answer = y.argmax()
                correct += int(answer == inst.label)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v
                batch_losses.append(loss)
            total = batch_losses[0]
            for extra in batch_losses[1:]:
                total = add(total, extra)
            total = scale(total, 1.0 / len(batch))
            _check_finite_loss(total.item(), epoch, steps)
            backward_pass(total, model.tree)
            adam_step(model.tree, adam)

        n = len(train_set)
        train_losses = {k: v / n for k, v in sums.items()}
        rows.append(metrics_row(epoch, "train", mode, train_losses, correct / n))
        dev = _eval_model(dev_set, model, eval_mode, trained, "dev",
                          config.student_input)
        rows.append(metrics_row(epoch, "dev", mode, dev.losses, dev.accuracy))
        if log:
            log(f"epoch {epoch:3d} train_acc={correct / n:.4f} dev_acc={dev.accuracy:.4f}")
        if dev.accuracy > best_acc:
            best_acc = dev.accuracy
            best = Checkpoint(config=config, values=model.tree.copy_values(),
                              epoch=epoch, dev_metric=dev.accuracy,
                              trained=trained, seed_state=_seed_state(shuffle_rng))
    if metrics_path:
        append_metrics(metrics_path, rows)
    return best, rows


def _reinit_student(model: Model, modality: str, rng):
    """Fresh scaled-normal init for one student block (stage-2 seed)."""
    std = 1.0 / np.sqrt(model.config.d)
    for path, t in model.tree.items():
        if path.startswith(f"student.{modality}."):
            if t.data.ndim == 2:
                t.data[...] = rng.normal(0.0, std, size=t.data.shape)
            else:
                t.data[...] = 0.0


def train_student(splits: dict, teacher: Checkpoint, modality: str,
                  config: TrainConfig, metrics_path=None, log=None):
    """Stage 2: freeze the teacher, train one student block on its
    representations; best-dev checkpoint judged by unimodal accuracy."""
    if modality not in ("text", "audio"):
        raise ValueError(f"unknown modality {modality!r}")
    if "multimodal" not in teacher.trained:
        raise ValueError("stage-2 training needs a multimodal teacher checkpoint")
    for key in ("d", "n_heads", "vocab_size", "audio_dim", "fusion_depth",
                "student_hidden", "max_len", "d_ff"):
        if getattr(config, key) != getattr(teacher.config, key):
            raise ValueError(f"teacher/config mismatch on {key}: "
                             f"{getattr(teacher.config, key)} != {getattr(config, key)}")
    mode = f"distill-{modality}"
    config = config.replace(mode=mode)
    train_set, dev_set = splits["train"], splits["dev"]
    if not train_set:
        raise ValueError("train split is empty")

    model = build_model(config)
    model.tree.load_values(teacher.values)
    shuffle_rng, _, init_rng = _rngs(config.seed)
    _reinit_student(model, modality, init_rng)
    apply_mode_freezing(model, mode)
    adam = AdamState(lr=config.lr)
    student = model.student_text if modality == "text" else model.student_audio
    trained = sorted(set(teacher.trained) | {f"student.{modality}"})

    best = Checkpoint(config=config, values=model.tree.copy_values(),
                      trained=trained, seed_state=_seed_state(shuffle_rng))
    best_acc = -1.0
    rows = []
    for epoch in range(1, config.epochs + 1):
        mkd_sum, correct, steps = 0.0, 0, 0
        for batch in _epoch_batches(len(train_set), config.batch_size, shuffle_rng):
            steps += 1
            batch_losses = []
            for idx in batch:
                inst = train_set[idx]
                with no_grad():
                    _, _, fo = multimodal_forward(model, inst)
                    if modality == "text":
                        feats_in = encode_text(inst.passage, model.text_enc,
                                               config.max_len)
                    else:
                        feats_in = encode_audio(inst.frames, model.audio_enc,
                                                config.max_len)
                outs = student_forward(feats_in, student)
                loss = distill_loss(fo, outs)
                mkd_sum += loss.item()
                batch_losses.append(loss)
                with no_grad():
                    y, _ = student_mode_forward(model, inst, modality,
                                                config.student_input)
                correct += int(y.argmax() == inst.label)
            total = batch_losses[0]
            for extra in batch_losses[1:]:
                total = add(total, extra)
            total = scale(total, 1.0 / len(batch))
            _check_finite_loss(total.item(), epoch, steps)
            backward_pass(total, model.tree)
            adam_step(model.tree, adam)

        n = len(train_set)
        rows.append(metrics_row(epoch, "train", mode, {"mkd": mkd_sum / n}, correct / n))
        dev = _eval_model(dev_set, model, modality, trained, "dev",
                          config.student_input)
        rows.append(metrics_row(epoch, "dev", mode, dev.losses, dev.accuracy))
        if log:
            log(f"epoch {epoch:3d} mkd={mkd_sum / n:.5f} dev_acc={dev.accuracy:.4f}")
        if dev.accuracy > best_acc:
            best_acc = dev.accuracy
            best = Checkpoint(config=config, values=model.tree.copy_values(),
                              epoch=epoch, dev_metric=dev.accuracy,
                              trained=trained, seed_state=_seed_state(shuffle_rng))
    if metrics_path:
        append_metrics(metrics_path, rows)
    return best, rows


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def ensemble_baseline(inst, text_ckpt: Checkpoint, audio_ckpt: Checkpoint,
                      text_model: Model = None, audio_model: Model = None) -> int:
    """argmax of the mean of the two softmax-normalized unimodal logit vectors."""
    if text_model is None:
        text_model = model_from_checkpoint(text_ckpt)
    if audio_model is None:
        audio_model = model_from_checkpoint(audio_ckpt)
    _, y_t = _infer_model(text_model, inst, "text", text_ckpt.trained,
                          text_ckpt.config.student_input)
    _, y_a = _infer_model(audio_model, inst, "audio", audio_ckpt.trained,
                          audio_ckpt.config.student_input)
    mean_probs = 0.5 * (_softmax(y_t.scores.data) + _softmax(y_a.scores.data))
    return int(np.argmax(mean_probs))


def ensemble_evaluate(instances, text_ckpt: Checkpoint, audio_ckpt: Checkpoint,
                      split: str = "test") -> EvalReport:
    if not instances:
        raise ValueError("evaluate: empty split")
    text_model = model_from_checkpoint(text_ckpt)
    audio_model = model_from_checkpoint(audio_ckpt)
    correct, kind_n, kind_correct = 0, {}, {}
    for inst in instances:
        hit = int(ensemble_baseline(inst, text_ckpt, audio_ckpt,
                                    text_model, audio_model) == inst.label)
        correct += hit
        kind_n[inst.kind] = kind_n.get(inst.kind, 0) + 1
        kind_correct[inst.kind] = kind_correct.get(inst.kind, 0) + hit
    n = len(instances)
    return EvalReport(split=split, mode="ensemble", accuracy=correct / n,
                      per_kind={k: kind_correct[k] / kind_n[k] for k in kind_n},
                      losses={}, n=n)
