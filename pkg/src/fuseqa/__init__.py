"""Audio+text multiple-choice comprehension: cross-modal attention fusion
with per-modality knowledge distillation, on a float64 autodiff core."""

__version__ = "0.1.0"

from . import kernels  # noqa: F401
from .autodiff import Tensor, no_grad  # noqa: F401
from .params import ParamTree  # noqa: F401
