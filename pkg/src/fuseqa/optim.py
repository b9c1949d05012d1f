"""Adam optimizer over a ParamTree."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .params import ParamTree


class MissingGradientError(RuntimeError):
    """A non-frozen parameter had no gradient at update time."""

    def __init__(self, path):
        self.path = path
        super().__init__(f"adam_step: no gradient on non-frozen path {path}")


@dataclass
class AdamState:
    """Moment buffers and step counter; standard bias-corrected Adam."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamTree, state: AdamState):
    """One Adam update over all non-frozen paths; clears gradients after.

    Frozen paths are skipped entirely (values and moments untouched).
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for path, t in params.items():
        if params.is_frozen(path):
            continue
        if t.grad is None:
            raise MissingGradientError(path)
        if path not in state.m:
            state.m[path] = np.zeros(t.data.size)
            state.v[path] = np.zeros(t.data.size)
        kernels.adam_update(
            t.data.reshape(-1), t.grad.reshape(-1),
            state.m[path], state.v[path],
            state.lr, state.beta1, state.beta2, state.eps, bc1, bc2,
        )
    params.zero_grads()
