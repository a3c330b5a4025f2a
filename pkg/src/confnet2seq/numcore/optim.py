"""Parameter updates: SGD and Adam with stepped learning-rate decay and
global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DivergenceError
from .tensor import Tensor


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.1
    decay_factor: float = 0.5
    decay_steps: int = 10000
    grad_clip_norm: float | None = None
    dropout_rate: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ContractError("decay_factor must be in (0, 1]")
        if self.decay_steps <= 0:
            raise ContractError("decay_steps must be positive")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ContractError("grad_clip_norm must be positive or None")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "decay_factor": self.decay_factor,
            "decay_steps": self.decay_steps,
            "grad_clip_norm": self.grad_clip_norm,
            "dropout_rate": self.dropout_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        return cls(**{k: v for k, v in d.items() if k in known})


def decayed_learning_rate(config: OptimizerConfig, step: int) -> float:
    return config.learning_rate * config.decay_factor ** (step // config.decay_steps)


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale every gradient in place so their joint L2 norm is <= max_norm.
    Returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


@dataclass
class Optimizer:
    """Holds the schedule step counter and (for Adam) the moment buffers.

    Parameters with no accumulated gradient are treated as having a zero
    gradient (a forward pass that never touched them is legitimate, e.g.
    the graph-encoder weights when the question is fed as plain text).
    """

    config: OptimizerConfig
    params: dict[str, Tensor]
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict)
    _v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.config.kind == "adam":
            for name, p in self.params.items():
                self._m.setdefault(name, np.zeros_like(p.data))
                self._v.setdefault(name, np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the
        learning rate used.  Raises DivergenceError on non-finite gradients
        before touching any parameter."""
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        if self.config.grad_clip_norm is not None:
            clip_global_norm(list(grads.values()), self.config.grad_clip_norm)
        lr = decayed_learning_rate(self.config, self.step_count)
        if self.config.kind == "sgd":
            for name, p in self.params.items():
                p.data -= lr * grads[name]
        else:
            b1, b2, eps = self.config.adam_beta1, self.config.adam_beta2, self.config.adam_eps
            t = self.step_count + 1
            for name, p in self.params.items():
                g = grads[name]
                m = self._m[name]
                v = self._v[name]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1 ** t)
                v_hat = v / (1 - b2 ** t)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        self.step_count += 1
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            if name in self._m:
                out[f"adam.m.{name}"] = self._m[name]
                out[f"adam.v.{name}"] = self._v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        for name in self.params:
            m = arrays.get(f"adam.m.{name}")
            v = arrays.get(f"adam.v.{name}")
            if m is not None:
                self._m[name] = np.array(m, dtype=np.float64)
            if v is not None:
                self._v[name] = np.array(v, dtype=np.float64)
