"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass

import numpy as np

from .autodiff import backward_pass, no_grad
from .params import ParamTree


class NondeterministicClosureError(RuntimeError):
    """Two baseline evaluations of the loss closure disagreed."""


@dataclass
class GradCheckReport:
    tolerance: float
    per_tensor: dict  # path -> max relative error over sampled coordinates
    passed: bool

    @property
    def max_rel_err(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    def summary(self) -> str:
        lines = [f"grad check: {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_rel_err:.3e}, tolerance {self.tolerance:.1e})"]
        for path, err in sorted(self.per_tensor.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {err:.3e}  {path}")
        return "\n".join(lines)


def grad_check(model_fn, params: ParamTree, samples: int = 4, tolerance: float = 1e-4,
               h: float = 1e-5, seed: int = 0, paths=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `model_fn` is a deterministic closure over `params` returning a scalar
    loss tensor (dropout must be off). For `samples` random coordinates per
    tensor we compute (f(x+h) - f(x-h)) / 2h and report the relative error
    |analytic - fd| / max(|analytic|, |fd|, 1e-3) per tensor; the check
    passes iff every error is <= tolerance.
    """
    base1 = model_fn().item()
    base2 = model_fn().item()
    if base1 != base2:
        raise NondeterministicClosureError(
            f"loss closure is not deterministic: {base1!r} != {base2!r}")

    params.zero_grads()
    loss = model_fn()
    backward_pass(loss, params)
    analytic = {p: t.grad.copy() for p, t in params.items() if not params.is_frozen(p)}
    params.zero_grads()

    if paths is None:
        paths = list(analytic)
    rng = np.random.default_rng(seed)
    per_tensor = {}
    for path in paths:
        t = params[path]
        flat = t.data.reshape(-1)
        n = flat.size
        idx = rng.choice(n, size=min(samples, n), replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                f_plus = model_fn().item()
                flat[i] = orig - h
                f_minus = model_fn().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = analytic[path].reshape(-1)[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            worst = max(worst, err)
        per_tensor[path] = worst
    passed = all(e <= tolerance for e in per_tensor.values())
    return GradCheckReport(tolerance=tolerance, per_tensor=per_tensor, passed=passed)
