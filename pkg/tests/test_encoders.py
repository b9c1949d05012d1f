import numpy as np
import numpy.testing as npt
import pytest

from fuseqa.autodiff import Tensor, cross_entropy
from fuseqa.encoders import (
    AudioEncoderParams, EncodingError, PredictorParams, TextEncoderParams,
    encode_audio, encode_text, predictor_forward,
)
from fuseqa.gradcheck import grad_check
from fuseqa.params import ParamTree


def make_text_params(vocab=16, d=6, rng=None):
    rng = rng or np.random.default_rng(0)
    return TextEncoderParams(embedding=Tensor(rng.uniform(-0.1, 0.1, (vocab, d)), requires_grad=True))


def make_audio_params(d=6, rng=None):
    rng = rng or np.random.default_rng(1)
    return AudioEncoderParams(
        weight=Tensor(rng.normal(0, 0.1, (128, d)), requires_grad=True),
        bias=Tensor(np.zeros(d), requires_grad=True))


def make_predictor_params(d=6, rng=None):
    rng = rng or np.random.default_rng(2)
    return PredictorParams(
        question_proj=Tensor(rng.normal(0, 0.3, (d, d)), requires_grad=True),
        score_bilinear=Tensor(rng.normal(0, 0.3, (d, d)), requires_grad=True))


def test_encode_text_is_table_lookup():
    p = make_text_params()
    out = encode_text([5], p)
    npt.assert_array_equal(out.data, p.embedding.data[5:6])
    rep = encode_text([3, 7, 3], p)
    npt.assert_array_equal(rep.data[0], rep.data[2])


def test_encode_text_length_limits():
    p = make_text_params()
    assert encode_text([1] * 384, p, max_len=384).shape == (384, 6)
    with pytest.raises(EncodingError, match="385"):
        encode_text([1] * 385, p, max_len=384)
    with pytest.raises(EncodingError, match="empty"):
        encode_text([], p)
    with pytest.raises(EncodingError, match="vocabulary"):
        encode_text([16], p)


def test_encode_audio_shapes_and_linearity():
    p = make_audio_params()
    frames = np.zeros((3, 128))
    npt.assert_array_equal(encode_audio(frames, p).data, np.zeros((3, 6)))
    out = encode_audio(np.random.default_rng(3).normal(size=(5, 128)), p)
    assert out.shape == (5, 6)
    with pytest.raises(EncodingError, match="width"):
        encode_audio(np.zeros((4, 64)), p)


def test_encode_audio_identity_projection():
    p = AudioEncoderParams(weight=Tensor(np.eye(128)), bias=Tensor(np.zeros(128)))
    frames = np.random.default_rng(4).normal(size=(4, 128))
    npt.assert_allclose(encode_audio(frames, p).data, frames, atol=1e-15)


def test_predictor_identical_choices_equal_logits():
    rng = np.random.default_rng(5)
    p = make_predictor_params()
    fused = Tensor(rng.normal(size=(7, 6)))
    question = Tensor(rng.normal(size=(2, 6)))
    choice = Tensor(rng.normal(size=(3, 6)))
    y = predictor_forward(fused, question, [choice] * 4, p, "passage")
    npt.assert_allclose(y.scores.data, y.scores.data[0], atol=1e-15)
    assert y.modality == "passage"


def test_predictor_single_row_fused_pools_that_row():
    rng = np.random.default_rng(6)
    p = make_predictor_params()
    fused = Tensor(rng.normal(size=(1, 6)))
    question = Tensor(rng.normal(size=(2, 6)))
    choices = [Tensor(rng.normal(size=(1, 6))) for _ in range(4)]
    y = predictor_forward(fused, question, choices, p, "audio")
    # single-key attention pool returns the row exactly
    u = fused.data[0] @ p.score_bilinear.data
    expect = np.array([c.data.mean(axis=0) @ u for c in choices])
    npt.assert_allclose(y.scores.data, expect, atol=1e-12)


def test_predictor_matches_straight_line_oracle():
    rng = np.random.default_rng(7)
    d = 6
    p = make_predictor_params(d)
    fused = rng.normal(size=(5, d))
    question = rng.normal(size=(3, d))
    choices = [rng.normal(size=(2, d)) for _ in range(4)]

    # independent straight-line evaluation of the stated formula
    q = question.mean(axis=0) @ p.question_proj.data
    s = fused @ q
    w = np.exp(s - s.max())
    w = w / w.sum()
    c = w @ fused
    u = c @ p.score_bilinear.data
    expect = np.array([ch.mean(axis=0) @ u for ch in choices])

    y = predictor_forward(Tensor(fused), Tensor(question),
                          [Tensor(ch) for ch in choices], p, "combined")
    npt.assert_allclose(y.scores.data, expect, atol=1e-12)


def test_predictor_choice_permutation_equivariance():
    rng = np.random.default_rng(8)
    p = make_predictor_params()
    fused = Tensor(rng.normal(size=(4, 6)))
    question = Tensor(rng.normal(size=(2, 6)))
    choices = [Tensor(rng.normal(size=(2, 6))) for _ in range(4)]
    base = predictor_forward(fused, question, choices, p, "passage").scores.data
    perm = [2, 0, 3, 1]
    shuffled = predictor_forward(fused, question, [choices[i] for i in perm],
                                 p, "passage").scores.data
    npt.assert_allclose(shuffled, base[perm], atol=1e-15)


def test_encoder_predictor_gradients_pass_grad_check():
    rng = np.random.default_rng(9)
    d = 6
    tree = ParamTree()
    emb = tree.add("emb", rng.uniform(-0.1, 0.1, (12, d)))
    aw = tree.add("aw", rng.normal(0, 0.1, (128, d)))
    ab = tree.add("ab", np.zeros(d))
    qp = tree.add("qp", rng.normal(0, 0.3, (d, d)))
    sb = tree.add("sb", rng.normal(0, 0.3, (d, d)))
    text_p = TextEncoderParams(embedding=emb)
    audio_p = AudioEncoderParams(weight=aw, bias=ab)
    pred_p = PredictorParams(question_proj=qp, score_bilinear=sb)
    frames = rng.normal(size=(4, 128))

    def loss():
        fused_t = encode_text([1, 5, 2], text_p)
        fused_a = encode_audio(frames, audio_p)
        question = encode_text([3, 4], text_p)
        choices = [encode_text([6 + i], text_p) for i in range(4)]
        y_t = predictor_forward(fused_t, question, choices, pred_p, "passage")
        y_a = predictor_forward(fused_a, question, choices, pred_p, "audio")
        return cross_entropy(y_t.scores, 1) + cross_entropy(y_a.scores, 2)

    report = grad_check(loss, tree, samples=6, tolerance=1e-4)
    assert report.passed, report.summary()
