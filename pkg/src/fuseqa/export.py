"""Attention-weight export: per-head CSV matrices, token importance, SVG.

A token's importance is the total attention it receives from all
positions of the other modality, summed over heads (column sums of the
final block's inter-modality maps).
"""

import os

import numpy as np

from .fusion import FusionOutputs


def token_importance(outputs: FusionOutputs):
    """(text importance (N,), audio importance (M,)) from the inter maps."""
    text_imp = outputs.inter_audio_map.sum(axis=(0, 1))
    audio_imp = outputs.inter_text_map.sum(axis=(0, 1))
    return text_imp, audio_imp


def _write_matrix_csv(path, matrix):
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _svg_heatmap(matrix, cell=18):
    rows, cols = matrix.shape
    top = matrix.max() if matrix.size else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{cols * cell}" height="{rows * cell}">']
    for i in range(rows):
        for j in range(cols):
            v = matrix[i, j] / top if top > 0 else 0.0
            shade = int(round(255 * (1.0 - v)))
            parts.append(
                f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},{shade})"><title>'
                f'{i},{j}: {matrix[i, j]:.6f}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts)


def export_attention(outputs: FusionOutputs, instance, out_dir, svg: bool = False):
    """Write per-head inter-attention CSVs and the token-importance CSV.

    Rows of audio_to_text matrices are audio frames, columns passage
    tokens; text_to_audio is the transpose orientation. Returns a summary
    dict with the written paths and the importance vectors.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    directions = (("audio_to_text", outputs.inter_audio_map),
                  ("text_to_audio", outputs.inter_text_map))
    for name, maps in directions:
        for h in range(maps.shape[0]):
            path = os.path.join(out_dir, f"attention_{name}_head{h}.csv")
            _write_matrix_csv(path, maps[h])
            written.append(path)
            if svg:
                spath = os.path.join(out_dir, f"attention_{name}_head{h}.svg")
                with open(spath, "w", encoding="utf-8") as fh:
                    fh.write(_svg_heatmap(maps[h]))
                written.append(spath)

    text_imp, audio_imp = token_importance(outputs)
    imp_path = os.path.join(out_dir, "token_importance.csv")
    with open(imp_path, "w", encoding="utf-8") as fh:
        fh.write("token,score\n")
        for i, score in enumerate(text_imp):
            fh.write(f"text:{i}:{instance.passage[i]},{float(score)!r}\n")
        for i, score in enumerate(audio_imp):
            fh.write(f"audio:{i},{float(score)!r}\n")
    written.append(imp_path)
    return {"paths": written, "text_importance": text_imp,
            "audio_importance": audio_imp, "instance_id": instance.id}
