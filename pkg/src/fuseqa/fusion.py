"""Cross-modal fusion block: inter-modality attention, conditional gates,
and gated intra-modality self-attention.

Each attention or feed-forward sublayer output passes through dropout,
a shortcut connection, then layer normalization, in that order. Residual
sources: the query stream for cross-attention, the ungated value stream
for self-attention, and the sublayer input for the feed-forward net.
"""

from dataclasses import dataclass, field

from .autodiff import (
    Tensor, add, attention_core, dropout, layer_norm, matmul, mean_axis,
    mul, relu, sigmoid,
)


@dataclass
class MhaParams:
    """Per-head projections stored column-concatenated: each of w_q/w_k/w_v
    is (d, d) holding n_heads blocks of width d / n_heads."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    n_heads: int

    def head_dim(self) -> int:
        return self.w_q.data.shape[1] // self.n_heads

    def head(self, which: str, h: int):
        """View of head h's (d, d_k) projection, for inspection and tests."""
        w = {"q": self.w_q, "k": self.w_k, "v": self.w_v}[which]
        dk = self.head_dim()
        return w.data[:, h * dk:(h + 1) * dk]


@dataclass
class FfnParams:
    w1: Tensor  # (d, d_ff)
    b1: Tensor  # (d_ff,)
    w2: Tensor  # (d_ff, d)
    b2: Tensor  # (d,)


@dataclass
class GateParams:
    audio: Tensor  # (d, d), applied to mean-pooled raw audio features
    text: Tensor   # (d, d), applied to mean-pooled raw text features


@dataclass
class AttnBlockParams:
    attn: MhaParams
    ffn: FfnParams


@dataclass
class FusionBlockParams:
    inter_audio: AttnBlockParams  # audio queries text
    inter_text: AttnBlockParams   # text queries audio
    gates: GateParams
    intra_audio: AttnBlockParams
    intra_text: AttnBlockParams


@dataclass
class FusionOutputs:
    """Teacher representations plus attention diagnostics.

    Tensors are from the final block; map lists hold one detached array
    per block. Inter maps are (n, M, N) for the audio-query direction and
    (n, N, M) for the text-query direction; intra maps are square.
    """

    audio_inter: Tensor
    text_inter: Tensor
    audio_intra: Tensor
    text_intra: Tensor
    gate_audio: Tensor  # (d,)
    gate_text: Tensor   # (d,)
    inter_audio_maps: list = field(default_factory=list)
    inter_text_maps: list = field(default_factory=list)
    intra_audio_maps: list = field(default_factory=list)
    intra_text_maps: list = field(default_factory=list)

    @property
    def inter_audio_map(self):
        return self.inter_audio_maps[-1]

    @property
    def inter_text_map(self):
        return self.inter_text_maps[-1]


def mha_forward(query: Tensor, key: Tensor, value: Tensor, params: MhaParams):
    """Multi-head scaled dot-product attention; no output projection.

    Returns the (l, d) concatenated head outputs and the detached
    (n_heads, l, k) attention maps.
    """
    d = params.w_q.data.shape[0]
    if d % params.n_heads != 0:
        raise ValueError(f"mha_forward: d={d} not divisible by n_heads={params.n_heads}")
    qp = matmul(query, params.w_q)
    kp = matmul(key, params.w_k)
    vp = matmul(value, params.w_v)
    return attention_core(qp, kp, vp, params.n_heads)


def ffn_forward(x: Tensor, params: FfnParams) -> Tensor:
    """Position-wise feed-forward: relu(x W1 + b1) W2 + b2."""
    return add(matmul(relu(add(matmul(x, params.w1), params.b1)), params.w2), params.b2)


def sublayer_apply(inp: Tensor, sublayer_out: Tensor, rate: float,
                   rng=None, training: bool = False) -> Tensor:
    """layernorm(inp + dropout(sublayer_out)), exactly in that order."""
    return layer_norm(add(inp, dropout(sublayer_out, rate, rng, training)))


def _attend(query, key, value, residual, params: AttnBlockParams, rate, rng, training):
    att, maps = mha_forward(query, key, value, params.attn)
    h = sublayer_apply(residual, att, rate, rng, training)
    out = sublayer_apply(h, ffn_forward(h, params.ffn), rate, rng, training)
    return out, maps


def inter_modality(audio: Tensor, text: Tensor, block: FusionBlockParams,
                   rate: float = 0.0, rng=None, training: bool = False):
    """Cross-attend each modality over the other; residual is the query stream."""
    audio_inter, map_a = _attend(audio, text, text, audio, block.inter_audio, rate, rng, training)
    text_inter, map_t = _attend(text, audio, audio, text, block.inter_text, rate, rng, training)
    return audio_inter, text_inter, map_a, map_t


def conditional_gates(audio: Tensor, text: Tensor, gates: GateParams):
    """Sigmoid gates of the mean-pooled raw features; components in (0, 1)."""
    gate_audio = sigmoid(matmul(mean_axis(audio, 0), gates.audio))
    gate_text = sigmoid(matmul(mean_axis(text, 0), gates.text))
    return gate_audio, gate_text


def intra_modality(audio_inter: Tensor, text_inter: Tensor,
                   gate_audio: Tensor, gate_text: Tensor, block: FusionBlockParams,
                   rate: float = 0.0, rng=None, training: bool = False):
    """Self-attention within each modality with cross-gated queries/keys.

    The gate derived from the OTHER modality scales this modality's
    queries and keys by (1 + gate); the value stream stays ungated and is
    the residual source.
    """
    audio_hat = mul(audio_inter, add(gate_text, Tensor(1.0)))
    text_hat = mul(text_inter, add(gate_audio, Tensor(1.0)))
    audio_intra, map_a = _attend(audio_hat, audio_hat, audio_inter, audio_inter,
                                 block.intra_audio, rate, rng, training)
    text_intra, map_t = _attend(text_hat, text_hat, text_inter, text_inter,
                                block.intra_text, rate, rng, training)
    return audio_intra, text_intra, map_a, map_t


def fusion_forward(audio: Tensor, text: Tensor, blocks,
                   rate: float = 0.0, rng=None, training: bool = False) -> FusionOutputs:
    """Run inter -> gates -> intra for each block; gates always come from
    the raw encoder outputs."""
    a_in, t_in = audio, text
    out = None
    for block in blocks:
        a_inter, t_inter, m_ia, m_it = inter_modality(a_in, t_in, block, rate, rng, training)
        gate_audio, gate_text = conditional_gates(audio, text, block.gates)
        a_intra, t_intra, m_aa, m_tt = intra_modality(
            a_inter, t_inter, gate_audio, gate_text, block, rate, rng, training)
        if out is None:
            out = FusionOutputs(a_inter, t_inter, a_intra, t_intra, gate_audio, gate_text)
        else:
            out.audio_inter, out.text_inter = a_inter, t_inter
            out.audio_intra, out.text_intra = a_intra, t_intra
            out.gate_audio, out.gate_text = gate_audio, gate_text
        out.inter_audio_maps.append(m_ia)
        out.inter_text_maps.append(m_it)
        out.intra_audio_maps.append(m_aa)
        out.intra_text_maps.append(m_tt)
        a_in, t_in = a_intra, t_intra
    return out
