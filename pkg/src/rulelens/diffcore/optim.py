"""Adam with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import DiffcoreError, Tensor


class OptimError(DiffcoreError):
    pass


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        # scratch buffers keep the hot update loop allocation-free
        self._scratch = {name: np.empty_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        alpha = self.lr / bc1
        inv_sqrt_bc2 = 1.0 / np.sqrt(bc2)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise OptimError(f"non-finite gradient for parameter '{name}'")
            g = np.asarray(g, dtype=np.float64)
            m = self._m[name]
            v = self._v[name]
            sc = self._scratch[name]
            np.multiply(g, 1.0 - self.beta1, out=sc)
            m *= self.beta1
            m += sc
            np.multiply(g, g, out=sc)
            sc *= 1.0 - self.beta2
            v *= self.beta2
            v += sc
            np.sqrt(v, out=sc)
            sc *= inv_sqrt_bc2
            sc += self.eps
            np.divide(m, sc, out=sc)
            sc *= alpha
            p.data -= sc

    def scale_lr(self, gamma: float) -> None:
        self.lr *= gamma
