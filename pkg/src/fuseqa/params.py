"""Named parameter tree with per-path freezing."""

import numpy as np

from .autodiff import Tensor


class ParamTree:
    """Ordered map from hierarchical paths to trainable tensors.

    Paths are dot-separated (e.g. "fusion.inter.audio.attn.w_q"). Frozen
    paths are excluded from optimizer updates entirely.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, path: str, data) -> Tensor:
        if path in self._params:
            raise KeyError(f"duplicate parameter path: {path}")
        t = data if isinstance(data, Tensor) else Tensor(np.asarray(data, dtype=np.float64))
        t.requires_grad = True
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def freeze(self, *paths: str):
        """Freeze exact paths; each must exist."""
        for p in paths:
            if p not in self._params:
                raise KeyError(f"cannot freeze unknown path: {p}")
            self._frozen.add(p)

    def freeze_prefix(self, prefix: str):
        """Freeze every path equal to or under `prefix`."""
        hits = [p for p in self._params if p == prefix or p.startswith(prefix + ".")]
        if not hits:
            raise KeyError(f"cannot freeze unknown prefix: {prefix}")
        self._frozen.update(hits)

    def unfreeze_all(self):
        self._frozen.clear()

    def is_frozen(self, path: str) -> bool:
        return path in self._frozen

    @property
    def frozen(self) -> set:
        return set(self._frozen)

    def trainable_items(self):
        return [(p, t) for p, t in self._params.items() if p not in self._frozen]

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> dict:
        """Snapshot of all parameter arrays (deep copies)."""
        return {p: t.data.copy() for p, t in self._params.items()}

    def load_values(self, values: dict):
        """Overwrite parameter arrays from a snapshot; shapes must match."""
        for p, arr in values.items():
            if p not in self._params:
                raise KeyError(f"unknown parameter path in snapshot: {p}")
            t = self._params[p]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"{p}: snapshot shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr
