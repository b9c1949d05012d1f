"""Parameter-tree construction and whole-model forward passes.

One builder creates every trainable tensor (encoders, fusion blocks,
predictor, both student blocks) under stable dot-separated paths, so
checkpoints, freezing and gradient checks address parameters uniformly.
"""

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .distill import MlpParams, StudentOutputs, StudentParams, student_forward
from .encoders import (
    AudioEncoderParams, Logits, PredictorParams, TextEncoderParams,
    encode_audio, encode_text, predictor_forward,
)
from .fusion import (
    AttnBlockParams, FfnParams, FusionBlockParams, FusionOutputs, GateParams,
    MhaParams, fusion_forward,
)
from .params import ParamTree


@dataclass
class Model:
    config: TrainConfig
    tree: ParamTree
    text_enc: TextEncoderParams
    audio_enc: AudioEncoderParams
    fusion_blocks: list
    predictor: PredictorParams
    student_text: StudentParams
    student_audio: StudentParams


def _mat(tree, path, rng, rows, cols, std):
    return tree.add(path, rng.normal(0.0, std, size=(rows, cols)))


def _zeros(tree, path, n):
    return tree.add(path, np.zeros(n))


def _attn_block(tree, prefix, rng, d, d_ff, n_heads, std) -> AttnBlockParams:
    attn = MhaParams(
        w_q=_mat(tree, f"{prefix}.attn.w_q", rng, d, d, std),
        w_k=_mat(tree, f"{prefix}.attn.w_k", rng, d, d, std),
        w_v=_mat(tree, f"{prefix}.attn.w_v", rng, d, d, std),
        n_heads=n_heads,
    )
    ffn = FfnParams(
        w1=_mat(tree, f"{prefix}.ffn.w1", rng, d, d_ff, std),
        b1=_zeros(tree, f"{prefix}.ffn.b1", d_ff),
        w2=_mat(tree, f"{prefix}.ffn.w2", rng, d_ff, d, std),
        b2=_zeros(tree, f"{prefix}.ffn.b2", d),
    )
    return AttnBlockParams(attn=attn, ffn=ffn)


def _mlp(tree, prefix, rng, d, d_h, std) -> MlpParams:
    return MlpParams(
        w1=_mat(tree, f"{prefix}.w1", rng, d, d_h, std),
        b1=_zeros(tree, f"{prefix}.b1", d_h),
        w2=_mat(tree, f"{prefix}.w2", rng, d_h, d, std),
        b2=_zeros(tree, f"{prefix}.b2", d),
    )


def build_model(config: TrainConfig, rng=None) -> Model:
    """Create all parameters: embedding uniform(-0.1, 0.1), projections
    scaled-normal with std 1/sqrt(d), biases zero."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d = config.d
    std = 1.0 / np.sqrt(d)
    tree = ParamTree()

    text_enc = TextEncoderParams(
        embedding=tree.add("text_encoder.embedding",
                           rng.uniform(-0.1, 0.1, size=(config.vocab_size, d))))
    audio_enc = AudioEncoderParams(
        weight=_mat(tree, "audio_encoder.weight", rng, config.audio_dim, d, std),
        bias=_zeros(tree, "audio_encoder.bias", d))

    blocks = []
    for i in range(config.fusion_depth):
        pfx = f"fusion.b{i}"
        blocks.append(FusionBlockParams(
            inter_audio=_attn_block(tree, f"{pfx}.inter.audio", rng, d, config.ff_width,
                                    config.n_heads, std),
            inter_text=_attn_block(tree, f"{pfx}.inter.text", rng, d, config.ff_width,
                                   config.n_heads, std),
            gates=GateParams(
                audio=_mat(tree, f"{pfx}.gate.audio", rng, d, d, std),
                text=_mat(tree, f"{pfx}.gate.text", rng, d, d, std)),
            intra_audio=_attn_block(tree, f"{pfx}.intra.audio", rng, d, config.ff_width,
                                    config.n_heads, std),
            intra_text=_attn_block(tree, f"{pfx}.intra.text", rng, d, config.ff_width,
                                   config.n_heads, std),
        ))

    predictor = PredictorParams(
        question_proj=_mat(tree, "predictor.question_proj", rng, d, d, std),
        score_bilinear=_mat(tree, "predictor.score_bilinear", rng, d, d, std))

    student_text = StudentParams(
        mlp1=_mlp(tree, "student.text.mlp1", rng, d, config.student_width, std),
        mlp2=_mlp(tree, "student.text.mlp2", rng, d, config.student_width, std),
        modality="text")
    student_audio = StudentParams(
        mlp1=_mlp(tree, "student.audio.mlp1", rng, d, config.student_width, std),
        mlp2=_mlp(tree, "student.audio.mlp2", rng, d, config.student_width, std),
        modality="audio")

    return Model(config=config, tree=tree, text_enc=text_enc, audio_enc=audio_enc,
                 fusion_blocks=blocks, predictor=predictor,
                 student_text=student_text, student_audio=student_audio)


def apply_mode_freezing(model: Model, mode: str):
    """Freeze the parameter subsets each training mode must not touch."""
    tree = model.tree
    tree.unfreeze_all()
    if mode == "multimodal":
        tree.freeze_prefix("student")
    elif mode == "conventional-text":
        tree.freeze_prefix("student")
        tree.freeze_prefix("fusion")
        tree.freeze_prefix("audio_encoder")
    elif mode == "conventional-audio":
        tree.freeze_prefix("student")
        tree.freeze_prefix("fusion")
    elif mode in ("distill-text", "distill-audio"):
        keep = "student.text" if mode == "distill-text" else "student.audio"
        other = "student.audio" if mode == "distill-text" else "student.text"
        for pfx in ("text_encoder", "audio_encoder", "fusion", "predictor", other):
            tree.freeze_prefix(pfx)
        assert not tree.is_frozen(keep + ".mlp1.w1")
    else:
        raise ValueError(f"unknown mode {mode!r}")


# -----------------------------------------------------------------------------
# whole-model forwards
# -----------------------------------------------------------------------------


def encode_question_choices(model: Model, inst):
    q = encode_text(inst.question, model.text_enc, model.config.max_len)
    cs = [encode_text(c, model.text_enc, model.config.max_len) for c in inst.choices]
    return q, cs


def multimodal_forward(model: Model, inst, rng=None, training=False):
    """Full fusion pass; returns (audio-stream logits, text-stream logits,
    fusion outputs)."""
    cfg = model.config
    audio = encode_audio(inst.frames, model.audio_enc, cfg.max_len)
    text = encode_text(inst.passage, model.text_enc, cfg.max_len)
    question, choices = encode_question_choices(model, inst)
    fo = fusion_forward(audio, text, model.fusion_blocks,
                        cfg.dropout, rng, training)
    y_audio = predictor_forward(fo.audio_intra, question, choices, model.predictor, "audio")
    y_text = predictor_forward(fo.text_intra, question, choices, model.predictor, "passage")
    return y_audio, y_text, fo


def conventional_forward(model: Model, inst, modality: str) -> Logits:
    """Encoder + predictor only; no fusion, no students."""
    cfg = model.config
    if modality == "text":
        fused = encode_text(inst.passage, model.text_enc, cfg.max_len)
        tag = "passage"
    elif modality == "audio":
        fused = encode_audio(inst.frames, model.audio_enc, cfg.max_len)
        tag = "audio"
    else:
        raise ValueError(f"unknown modality {modality!r}")
    question, choices = encode_question_choices(model, inst)
    return predictor_forward(fused, question, choices, model.predictor, tag)


def student_mode_forward(model: Model, inst, modality: str,
                         student_input: str = "intra"):
    """Single-modality inference through the student block and the shared
    predictor; returns (logits, student outputs)."""
    cfg = model.config
    if modality == "text":
        encoded = encode_text(inst.passage, model.text_enc, cfg.max_len)
        student, tag = model.student_text, "passage"
    elif modality == "audio":
        encoded = encode_audio(inst.frames, model.audio_enc, cfg.max_len)
        student, tag = model.student_audio, "audio"
    else:
        raise ValueError(f"unknown modality {modality!r}")
    s = student_forward(encoded, student)
    feats = s.intra if student_input == "intra" else s.inter
    question, choices = encode_question_choices(model, inst)
    return predictor_forward(feats, question, choices, model.predictor, tag), s
