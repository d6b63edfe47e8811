"""Layer containers: parameter registration, initialization, layer wrappers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor, affine, gru_cell, self_attention


class Module:
    """Explicit parameter registry with dotted-name flattening."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self) -> "OrderedDict[str, Tensor]":
        out: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, p in self._params.items():
            out[name] = p
        for child_name, child in self._children.items():
            for name, p in child.parameters().items():
                out[f"{child_name}.{name}"] = p
        return out

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters().values():
            p.requires_grad = flag

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"parameter '{name}' has shape {p.data.shape}, checkpoint has {src.shape}"
                )
            p.data = np.array(src, dtype=np.float64)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data) for name, p in self.parameters().items())


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.w = self.register("w", Tensor(uniform_init(rng, (in_dim, out_dim), bound)))
        self.b = self.register("b", Tensor(uniform_init(rng, (out_dim,), bound)))

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)


class GRUCell(Module):
    """Single GRU step over (B, in) inputs with hidden size hid."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hid: int):
        super().__init__()
        bound = 1.0 / np.sqrt(hid)
        self.hid = hid
        self.w = self.register("w", Tensor(uniform_init(rng, (in_dim, 3 * hid), bound)))
        self.u = self.register("u", Tensor(uniform_init(rng, (hid, 3 * hid), bound)))
        self.b = self.register("b", Tensor(uniform_init(rng, (3 * hid,), bound)))
        self.c = self.register("c", Tensor(uniform_init(rng, (3 * hid,), bound)))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_cell(x, h, self.w, self.u, self.b, self.c)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hid)))


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention with a key mask."""

    def __init__(self, rng: np.random.Generator, dim: int):
        super().__init__()
        bound = 1.0 / np.sqrt(dim)
        self.wq = self.register("wq", Tensor(uniform_init(rng, (dim, dim), bound)))
        self.bq = self.register("bq", Tensor(uniform_init(rng, (dim,), bound)))
        self.wk = self.register("wk", Tensor(uniform_init(rng, (dim, dim), bound)))
        self.bk = self.register("bk", Tensor(uniform_init(rng, (dim,), bound)))
        self.wv = self.register("wv", Tensor(uniform_init(rng, (dim, dim), bound)))
        self.bv = self.register("bv", Tensor(uniform_init(rng, (dim,), bound)))

    def __call__(self, tokens: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return self_attention(
            tokens, mask, self.wq, self.bq, self.wk, self.bk, self.wv, self.bv
        )
