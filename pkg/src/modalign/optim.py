"""AdamW with decoupled weight decay plus the cosine warm-restart schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import FrozenParameterError, Param, TrainingDivergedError


@dataclass
class AdamWState:
    """Per-parameter first/second moments; step_count advances once per update."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, values: list[np.ndarray], **hyper) -> "AdamWState":
        return cls(
            first_moment=[np.zeros_like(v) for v in values],
            second_moment=[np.zeros_like(v) for v in values],
            **hyper,
        )


def adamw_step(values: list[np.ndarray], grads: list[np.ndarray],
               state: AdamWState, lr: float,
               names: list[str] | None = None, context: str = "") -> None:
    """One in-place AdamW update. Decay is applied to the parameters directly."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(values) != len(grads):
        raise ValueError("params/grads length mismatch")
    where = f" ({context})" if context else ""
    for i, (v, g) in enumerate(zip(values, grads)):
        name = names[i] if names else f"param[{i}]"
        if g is None:
            raise ValueError(f"missing gradient for {name}{where}")
        if v.shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: {v.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name}{where}")
        if not v.flags.writeable:
            raise FrozenParameterError(f"update attempted on frozen {name}{where}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for v, g, m, s in zip(values, grads, state.first_moment, state.second_moment):
        if state.weight_decay != 0.0:
            v *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        s *= state.beta2
        s += (1.0 - state.beta2) * g * g
        v -= lr * (m / bc1) / (np.sqrt(s / bc2) + state.epsilon)


@dataclass
class CosineRestartSchedule:
    """lr(epoch) = base * 0.5 * (1 + cos(pi * (epoch mod t0) / t0))."""

    base_lr: float
    t0: int = 50

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.t0 < 1:
            raise ValueError("t0 must be a positive integer")

    def factor(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return 0.5 * (1.0 + np.cos(np.pi * (epoch % self.t0) / self.t0))

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.factor(epoch)


def cosine_restart_lr(schedule: CosineRestartSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)


class AdamW:
    """Parameter-group AdamW; each group carries its own base learning rate."""

    def __init__(self, groups: list[tuple[list[Param], float]],
                 beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8, weight_decay: float = 0.01):
        if not groups:
            raise ValueError("optimizer needs at least one parameter group")
        self.groups = []
        for params, base_lr in groups:
            if base_lr <= 0:
                raise ValueError(f"base lr must be positive, got {base_lr}")
            state = AdamWState.for_params(
                [p.value for p in params], beta1=beta1, beta2=beta2,
                epsilon=epsilon, weight_decay=weight_decay)
            self.groups.append({"params": params, "base_lr": base_lr, "state": state})

    def step(self, lr_factor: float = 1.0, context: str = "") -> None:
        for group in self.groups:
            params = group["params"]
            adamw_step(
                [p.value for p in params],
                [p.grad for p in params],
                group["state"],
                group["base_lr"] * lr_factor,
                names=[p.name for p in params],
                context=context,
            )

    def learning_rates(self) -> list[float]:
        return [g["base_lr"] for g in self.groups]
