"""Adam (default) and plain SGD over ParamSet tensors, with serializable state."""

from __future__ import annotations

import numpy as np

from .params import ParamSet


class NonFiniteGradient(ArithmeticError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.param = name


class OptState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, kind: str = "adam", beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def as_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.m.items():
            out[f"{prefix}{name}/m"] = arr
        for name, arr in self.v.items():
            out[f"{prefix}{name}/v"] = arr
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str,
                    t: int) -> None:
        self.t = t
        self.m = {}
        self.v = {}
        for key, arr in arrays.items():
            if not key.startswith(prefix):
                continue
            name, _, kind = key[len(prefix):].rpartition("/")
            if kind == "m":
                self.m[name] = arr.copy()
            elif kind == "v":
                self.v[name] = arr.copy()


def optimizer_step(ps: ParamSet, state: OptState, lr: float) -> None:
    """Apply one update to every trainable tensor holding a gradient."""
    state.t += 1
    for name, p in ps.items():
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{ps.name}/{name}")
        if state.kind == "sgd":
            p.data -= lr * g
            continue
        dtype = p.data.dtype
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m[...] = state.beta1 * m + (1 - state.beta1) * g
        v[...] = state.beta2 * v + (1 - state.beta2) * (g * g)
        mhat = m / dtype.type(1 - state.beta1 ** state.t)
        vhat = v / dtype.type(1 - state.beta2 ** state.t)
        p.data -= dtype.type(lr) * mhat / (np.sqrt(vhat) + dtype.type(state.eps))
