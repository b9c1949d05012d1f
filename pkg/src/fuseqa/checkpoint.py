"""Versioned checkpoint files: config echo, named float64 tensors, seed state.

The container is a zip of little-endian arrays (numpy .npz) plus one JSON
metadata entry; loading a file written by the same format version
reproduces evaluation bitwise.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .model import Model, build_model

FORMAT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    values: dict                 # path -> float64 ndarray
    epoch: int = 0
    dev_metric: float = 0.0
    seed_state: dict = field(default_factory=dict)
    trained: list = field(default_factory=list)  # e.g. ["multimodal", "student.text"]


def save_checkpoint(path, ckpt: Checkpoint):
    meta = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "dev_metric": ckpt.dev_metric,
        "seed_state": ckpt.seed_state,
        "trained": ckpt.trained,
    })
    arrays = {_META_KEY: np.frombuffer(meta.encode("utf-8"), dtype=np.uint8)}
    for p, arr in ckpt.values.items():
        arrays[f"param/{p}"] = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        if _META_KEY not in data:
            raise CheckpointFormatError(f"{path}: missing metadata entry")
        meta = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
        values = {k[len("param/"):]: np.asarray(data[k], dtype=np.float64)
                  for k in data.files if k.startswith("param/")}
    return Checkpoint(
        config=TrainConfig.from_dict(meta["config"]),
        values=values,
        epoch=meta["epoch"],
        dev_metric=meta["dev_metric"],
        seed_state=meta["seed_state"],
        trained=list(meta["trained"]),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    model = build_model(ckpt.config)
    model.tree.load_values(ckpt.values)
    return model
