"""Straight-line numpy re-evaluations used as independent oracles.

Everything here is written directly from the displayed formulas with no
imports from the package's compute path, so tests can compare the taped
implementations against an unrelated evaluation route.
"""

import numpy as np


def softmax_rows(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def layernorm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def mha(q, k, v, w_q, w_k, w_v, n_heads):
    """softmax(Q Wq (K Wk)^T / sqrt(dk)) V Wv per head, heads concatenated."""
    d = q.shape[1]
    dk = d // n_heads
    outs, maps = [], []
    for h in range(n_heads):
        sl = slice(h * dk, (h + 1) * dk)
        qh = q @ w_q[:, sl]
        kh = k @ w_k[:, sl]
        vh = v @ w_v[:, sl]
        att = softmax_rows(qh @ kh.T / np.sqrt(dk))
        outs.append(att @ vh)
        maps.append(att)
    return np.concatenate(outs, axis=1), np.stack(maps)


def ffn(x, w1, b1, w2, b2):
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def sublayer(inp, out):
    """Eval-mode sublayer: layernorm(inp + out)."""
    return layernorm(inp + out)


def attend_block(query, key, value, residual, attn_p, ffn_p):
    att, maps = mha(query, key, value, attn_p.w_q.data, attn_p.w_k.data,
                    attn_p.w_v.data, attn_p.n_heads)
    h = sublayer(residual, att)
    return sublayer(h, ffn(h, ffn_p.w1.data, ffn_p.b1.data, ffn_p.w2.data, ffn_p.b2.data)), maps


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gates(audio, text, gate_p):
    return (sigmoid(audio.mean(axis=0) @ gate_p.audio.data),
            sigmoid(text.mean(axis=0) @ gate_p.text.data))


def fusion_block(audio, text, block):
    """inter -> gates -> intra composition, eval mode."""
    a_inter, m_ia = attend_block(audio, text, text, audio,
                                 block.inter_audio.attn, block.inter_audio.ffn)
    t_inter, m_it = attend_block(text, audio, audio, text,
                                 block.inter_text.attn, block.inter_text.ffn)
    g_a, g_t = gates(audio, text, block.gates)
    a_hat = (1.0 + g_t) * a_inter
    t_hat = (1.0 + g_a) * t_inter
    a_intra, m_aa = attend_block(a_hat, a_hat, a_inter, a_inter,
                                 block.intra_audio.attn, block.intra_audio.ffn)
    t_intra, m_tt = attend_block(t_hat, t_hat, t_inter, t_inter,
                                 block.intra_text.attn, block.intra_text.ffn)
    return {
        "audio_inter": a_inter, "text_inter": t_inter,
        "audio_intra": a_intra, "text_intra": t_intra,
        "gate_audio": g_a, "gate_text": g_t,
        "maps": (m_ia, m_it, m_aa, m_tt),
    }


def token_importance(inter_map_other_queries):
    """Importance of each key position: attention summed over heads and
    all query positions of the other modality (column sums)."""
    return inter_map_other_queries.sum(axis=(0, 1))
