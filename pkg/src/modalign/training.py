"""Shared training-loop plumbing: minibatching, early stopping, snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import derive_seed  # re-exported for stage modules
from .nn import Param

__all__ = ["derive_seed", "iterate_minibatches", "EarlyStopping",
           "snapshot_params", "restore_params", "TrainHistory"]


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index arrays covering all n rows; last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def snapshot_params(params: list[Param]) -> list[tuple[str, np.ndarray]]:
    return [(p.name, p.value.copy()) for p in params]


def restore_params(params: list[Param], snapshot: list[tuple[str, np.ndarray]]) -> None:
    by_name = dict(snapshot)
    for p in params:
        saved = by_name.get(p.name)
        if saved is None:
            raise KeyError(f"snapshot missing parameter {p.name!r}")
        if saved.shape != p.value.shape:
            raise ValueError(f"snapshot shape mismatch for {p.name!r}")
        p.value[...] = saved


@dataclass
class EarlyStopping:
    """Patience-based stopper on a primary metric with a loss tie-break.

    Strict improvement of the primary metric resets the patience counter.
    An exact tie that comes with a strictly lower secondary loss refreshes
    the best snapshot but does NOT reset patience, so plateaus still
    terminate. `update` returns "improved", "tie", or "worse".
    """

    patience: int = 30
    mode: str = "max"
    best_metric: float = field(init=False)
    best_loss: float = field(default=np.inf, init=False)
    best_epoch: int = field(default=-1, init=False)
    bad_epochs: int = field(default=0, init=False)

    def __post_init__(self):
        if self.mode not in ("max", "min"):
            raise ValueError(f"mode must be 'max' or 'min', got {self.mode!r}")
        if self.patience < 1:
            raise ValueError("patience must be positive")
        self.best_metric = -np.inf if self.mode == "max" else np.inf

    def _better(self, metric: float) -> bool:
        return metric > self.best_metric if self.mode == "max" else metric < self.best_metric

    def update(self, metric: float, epoch: int, loss: float = np.inf) -> str:
        if self._better(metric):
            self.best_metric = metric
            self.best_loss = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return "improved"
        if metric == self.best_metric and loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.bad_epochs += 1
            return "tie"
        self.bad_epochs += 1
        return "worse"

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainHistory:
    """Per-epoch scalars accumulated during a fit; JSON-safe via to_dict()."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    def log(self, train_loss: float, val_loss: float | None = None,
            val_metric: float | None = None, lr: float | None = None) -> None:
        self.train_loss.append(float(train_loss))
        if val_loss is not None:
            self.val_loss.append(float(val_loss))
        if val_metric is not None:
            self.val_metric.append(float(val_metric))
        if lr is not None:
            self.lr.append(float(lr))

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_metric": self.val_metric,
            "lr": self.lr,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
        }
