"""Parameter containers, a dense layer and the optimiser used for training."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, RegistryError

# training-role labels
LORA = "lora"
FROZEN = "frozen-base"
BODY = "distilled-body"
CRITIC = "critic"
LOGSTD = "policy-logstd"
TEACHER = "teacher"
ADAPTER = "adapter"
LABELS = (LORA, FROZEN, BODY, CRITIC, LOGSTD, TEACHER, ADAPTER)


class Parameter(Tensor):
    """A trainable tensor tagged with the training role it plays."""

    def __init__(self, data, label: str | None = BODY, requires_grad: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=requires_grad)
        self.label = label


class Module:
    """Attribute-walking parameter container (insertion order is stable)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        yield from self._walk(prefix, seen)

    def _walk(self, prefix, seen):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield from _walk_value(f"{prefix}{key}", value, seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self, labels: tuple[str, ...] | None = None) -> int:
        return sum(p.size for p in self.parameters() if labels is None or p.label in labels)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise ContractError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def set_label(self, label: str) -> None:
        for p in self.parameters():
            p.label = label

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


def _walk_value(name, value, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        yield from value._walk(name + ".", seen)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{name}.{i}", item, seen)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 label: str = BODY, init_scale: float = 1.0):
        bound = init_scale / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_in, d_out)), label)
        self.bias = Parameter(np.zeros(d_out), label) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


def linear(x: Tensor, layer: Linear) -> Tensor:
    return layer(x)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    if total <= 1:
        return lr_max
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


def clip_grad_norm(grads: dict, params: list[Parameter], max_norm: float) -> tuple[float, float]:
    """Scale the gradients of ``params`` in place to global norm <= max_norm.

    Returns (norm before, norm after)."""
    sq = 0.0
    for p in params:
        g = grads.get(p)
        if g is not None:
            sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p in grads:
                grads[p] = grads[p] * scale
        return norm, norm * scale
    return norm, norm


class AdamW:
    """Adam with decoupled weight decay over an explicit parameter list."""

    def __init__(self, params: list[Parameter], lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = p.data - lr * (update + self.wd * p.data)


def params_with_labels(module: Module, labels: tuple[str, ...]) -> list[Parameter]:
    out = []
    for name, p in module.named_parameters():
        if p.label is None or p.label not in LABELS:
            raise RegistryError(f"parameter {name} has no training-role label")
        if p.label in labels:
            out.append(p)
    return out
