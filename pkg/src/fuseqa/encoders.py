"""Input encoders and the shared four-choice predictor.

Text sequences (passages, questions, choices) share one embedding table.
Audio arrives as fixed-width 128-float frames and is projected row-wise
to the model dimension. The predictor attention-pools the fused context
with a question-derived query and scores each choice bilinearly; the same
parameters score the audio-side and text-side streams.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gather_rows, matmul, mean_axis, softmax_rows, stack_rows

AUDIO_FRAME_WIDTH = 128


class EncodingError(ValueError):
    """Invalid encoder input (empty, too long, out of vocabulary, bad width)."""


@dataclass
class TextEncoderParams:
    embedding: Tensor  # (vocab, d)


@dataclass
class AudioEncoderParams:
    weight: Tensor  # (128, d)
    bias: Tensor    # (d,)


@dataclass
class PredictorParams:
    question_proj: Tensor   # (d, d)
    score_bilinear: Tensor  # (d, d)


@dataclass
class Logits:
    """Four raw choice scores for one stream."""

    scores: Tensor  # (4,)
    modality: str   # audio | passage | combined

    def argmax(self) -> int:
        return int(np.argmax(self.scores.data))


def encode_text(tokens, params: TextEncoderParams, max_len: int = 384) -> Tensor:
    """Embed a token-id sequence into an (N, d) feature matrix."""
    ids = np.asarray(tokens, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise EncodingError("encode_text: empty token sequence")
    if ids.size > max_len:
        raise EncodingError(f"encode_text: length {ids.size} exceeds max_len {max_len}")
    vocab = params.embedding.data.shape[0]
    if ids.min() < 0 or ids.max() >= vocab:
        raise EncodingError(f"encode_text: token id out of vocabulary (size {vocab})")
    return gather_rows(params.embedding, ids)


def encode_audio(frames, params: AudioEncoderParams, max_len: int = 384) -> Tensor:
    """Project (M, 128) audio frames row-wise to an (M, d) feature matrix."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EncodingError(f"encode_audio: expected (M, {AUDIO_FRAME_WIDTH}) frames, got {arr.shape}")
    if arr.shape[1] != AUDIO_FRAME_WIDTH:
        raise EncodingError(f"encode_audio: frame width {arr.shape[1]} != {AUDIO_FRAME_WIDTH}")
    if arr.shape[0] > max_len:
        raise EncodingError(f"encode_audio: {arr.shape[0]} frames exceed max_len {max_len}")
    return matmul(Tensor(arr), params.weight) + params.bias


def predictor_forward(fused: Tensor, question: Tensor, choices,
                      params: PredictorParams, modality: str) -> Logits:
    """Score the four choices from a fused context stream.

    q = meanpool(question) @ question_proj; the context is the attention
    pool of `fused` under q; choice i scores context @ bilinear @
    meanpool(choice_i).
    """
    if len(choices) != 4:
        raise EncodingError(f"predictor_forward: expected 4 choices, got {len(choices)}")
    q = matmul(mean_axis(question, 0), params.question_proj)
    pool_weights = softmax_rows(matmul(fused, q))
    context = matmul(pool_weights, fused)
    u = matmul(context, params.score_bilinear)
    choice_means = stack_rows([mean_axis(c, 0) for c in choices])
    return Logits(scores=matmul(choice_means, u), modality=modality)
