"""Stage 3: a residual projection head that maps speech embeddings into the
frozen MRI teacher's embedding space.

The head is Dense(128->96) / BatchNorm / GELU / Dropout(0.6) /
Dense(96->128, zero-initialized), added to 0.1 * input, so training starts
at a small multiple of the identity. The alignment loss compares
l2-normalized embeddings and never sees labels; labels only steer early
stopping through the validation speech-only AUC under the teacher's
classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import CheckpointError, digest_params, load_checkpoint, save_checkpoint
from .data import derive_seed
from .metrics import auc_roc
from .nn import BatchNorm, Dense, Dropout, FrozenParameterError, Gelu, as_matrix, softmax
from .optim import AdamW, CosineRestartSchedule
from .training import EarlyStopping, TrainHistory, iterate_minibatches


class ProjectionHead:
    """Residual bottleneck MLP from speech-embedding space to teacher space."""

    def __init__(self, seed: int = 0, in_dim: int = 128, hidden: int = 96,
                 out_dim: int = 128, dropout_rate: float = 0.6,
                 residual_scale: float = 0.1):
        if in_dim != out_dim:
            raise ValueError("residual head needs matching in/out dims")
        rng = np.random.default_rng(derive_seed(seed, "align/init"))
        self.layer1 = Dense(in_dim, hidden, rng=rng, name="proj.fc1")
        self.bn = BatchNorm(hidden, name="proj.bn")
        self.act = Gelu()
        self.drop = Dropout(dropout_rate)
        self.layer2 = Dense(hidden, out_dim, zero_init=True, name="proj.fc2")
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.dropout_rate = dropout_rate
        self.residual_scale = residual_scale

    def forward(self, z: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        z = as_matrix(z, "z")
        h = self.layer1.forward(z, mode=mode)
        h = self.bn.forward(h, mode=mode)
        h = self.act.forward(h, mode=mode)
        h = self.drop.forward(h, mode=mode, rng=rng)
        return self.layer2.forward(h, mode=mode) + self.residual_scale * z

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dh = self.layer2.backward(dout)
        dh = self.drop.backward(dh)
        dh = self.act.backward(dh)
        dh = self.bn.backward(dh)
        return self.layer1.backward(dh) + self.residual_scale * dout

    def parameters(self):
        return (self.layer1.parameters() + self.bn.parameters()
                + self.layer2.parameters())

    def architecture(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": self.hidden,
                "out_dim": self.out_dim, "dropout_rate": self.dropout_rate,
                "residual_scale": self.residual_scale}


def project(head: ProjectionHead, z: np.ndarray) -> np.ndarray:
    return head.forward(z, mode="eval")


# ---------------------------------------------------------------------------
# Alignment loss
# ---------------------------------------------------------------------------


NORM_FLOOR = 1e-12


def l2_normalize(z: np.ndarray) -> np.ndarray:
    z = as_matrix(z, "z")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms <= NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise ValueError(f"cannot l2-normalize row {bad}: norm {norms[bad, 0]:.3e}")
    return z / norms


def align_loss_with_grad(z_hat: np.ndarray, z_m: np.ndarray, lambda_mse: float,
                         lambda_cos: float) -> tuple[float, np.ndarray]:
    """Normalized-embedding alignment loss and its gradient in z_hat.

    Per row (on unit vectors u = z_hat/|z_hat|, t = z_m/|z_m|):
    lambda_mse * |u - t|^2 + lambda_cos * (1 - u.t); the target z_m is a
    constant. Both terms are computed separately even though they are
    proportional on the sphere.
    """
    z_hat = as_matrix(z_hat, "z_hat")
    z_m = as_matrix(z_m, "z_m")
    if z_hat.shape != z_m.shape:
        raise ValueError(f"z_hat {z_hat.shape} vs z_m {z_m.shape} mismatch")
    if lambda_mse < 0 or lambda_cos < 0:
        raise ValueError("loss weights must be non-negative")
    n = z_hat.shape[0]
    norms = np.linalg.norm(z_hat, axis=1, keepdims=True)
    if np.any(norms <= NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise ValueError(f"z_hat row {bad} has near-zero norm {norms[bad, 0]:.3e}")
    u = z_hat / norms
    t = l2_normalize(z_m)

    diff = u - t
    mse_rows = (diff * diff).sum(axis=1)
    cos_rows = (u * t).sum(axis=1)
    loss = float(np.mean(lambda_mse * mse_rows + lambda_cos * (1.0 - cos_rows)))

    # gradient in normalized space, then through u = z_hat / |z_hat|
    g = 2.0 * lambda_mse * diff - lambda_cos * t
    g = (g - (g * u).sum(axis=1, keepdims=True) * u) / norms
    return loss, g / n


def align_loss(z_hat: np.ndarray, z_m: np.ndarray, lambda_mse: float,
               lambda_cos: float) -> float:
    return align_loss_with_grad(z_hat, z_m, lambda_mse, lambda_cos)[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class AlignConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    t0: int = 50
    patience: int = 30
    lambda_mse: float = 1.0
    lambda_cos: float = 1.0

    def __post_init__(self):
        if not 1 <= self.epochs <= 200:
            raise ValueError(f"epochs must be in [1, 200], got {self.epochs}")
        if self.batch_size < 1 or self.patience < 1 or self.t0 < 1:
            raise ValueError("batch_size, patience, and t0 must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_mse < 0 or self.lambda_cos < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_mse + self.lambda_cos <= 0:
            raise ValueError("lambda_mse + lambda_cos must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _head_snapshot(head: ProjectionHead):
    return ([(p.name, p.value.copy()) for p in head.parameters()],
            head.bn.state_dict())


def _head_restore(head: ProjectionHead, snapshot) -> None:
    params, bn_state = snapshot
    by_name = dict(params)
    for p in head.parameters():
        p.value[...] = by_name[p.name]
    head.bn.load_state(bn_state)


def train_alignment(head: ProjectionHead, z_train: np.ndarray, zm_train: np.ndarray,
                    z_val: np.ndarray, y_val: np.ndarray, teacher,
                    config: AlignConfig, seed: int,
                    expected_teacher_digest: str | None = None,
                    zm_val: np.ndarray | None = None) -> TrainHistory:
    """Fit the projection head on precomputed embedding pairs.

    The teacher is only read: its parameter digest is taken on entry
    (checked against `expected_teacher_digest` when given) and re-checked on
    exit, so any mutation of the frozen model fails loudly. Training labels
    are not an input — only validation labels, for the early-stopping AUC.
    """
    from .teacher import classify_embedding, teacher_named_values

    z_train, zm_train = as_matrix(z_train), as_matrix(zm_train, "zm_train")
    z_val = as_matrix(z_val, "z_val")
    if z_train.shape[0] != zm_train.shape[0]:
        raise ValueError("z_train / zm_train row mismatch")

    digest_before = digest_params(teacher_named_values(teacher))
    if expected_teacher_digest is not None and digest_before != expected_teacher_digest:
        raise CheckpointError(
            f"teacher digest {digest_before[:12]}... does not match the frozen "
            f"checkpoint {expected_teacher_digest[:12]}...")

    opt = AdamW([(head.parameters(), config.lr)])
    schedule = CosineRestartSchedule(config.lr, t0=config.t0)
    stopper = EarlyStopping(patience=config.patience, mode="max")
    history = TrainHistory()
    best = _head_snapshot(head)

    rng = np.random.default_rng(derive_seed(seed, "align/batches"))
    for epoch in range(config.epochs):
        factor = schedule.factor(epoch)
        losses = []
        for idx in iterate_minibatches(z_train.shape[0], config.batch_size, rng):
            if idx.size < 2:
                continue  # batchnorm needs at least 2 rows
            z_hat = head.forward(z_train[idx], mode="train", rng=rng)
            loss, dz = align_loss_with_grad(z_hat, zm_train[idx],
                                            config.lambda_mse, config.lambda_cos)
            head.backward(dz)
            opt.step(factor, context=f"align epoch {epoch}")
            losses.append(loss)

        z_hat_val = head.forward(z_val, mode="eval")
        logits = classify_embedding(teacher, z_hat_val)
        val_auc = auc_roc(softmax(logits)[:, 1], y_val)
        train_loss = float(np.mean(losses))
        # AUC ties break toward lower alignment loss (val pairs when known)
        tie_loss = (align_loss(z_hat_val, zm_val, config.lambda_mse, config.lambda_cos)
                    if zm_val is not None else train_loss)
        history.log(train_loss, val_loss=tie_loss, val_metric=val_auc,
                    lr=schedule.lr_at(epoch))
        if stopper.update(val_auc, epoch, loss=tie_loss) != "worse":
            best = _head_snapshot(head)
        if stopper.should_stop:
            break

    _head_restore(head, best)
    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.train_loss) - 1

    digest_after = digest_params(teacher_named_values(teacher))
    if digest_after != digest_before:
        raise FrozenParameterError("teacher parameters changed during alignment")
    return history


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_projection_head(path, head: ProjectionHead, *, seed: int,
                         training_config: dict | None = None,
                         history: dict | None = None,
                         refs: dict | None = None) -> str:
    named = [(p.name, p.value) for p in head.parameters()]
    named.append(("proj.bn.running_mean", head.bn.running_mean))
    named.append(("proj.bn.running_var", head.bn.running_var))
    return save_checkpoint(
        path, "projection_head", named, architecture=head.architecture(),
        seed=seed, stage="align", training_config=training_config,
        history=history, refs=refs)


def load_projection_head(path) -> tuple[ProjectionHead, dict]:
    ckpt = load_checkpoint(path, expect_kind="projection_head")
    arch = ckpt.manifest["architecture"]
    head = ProjectionHead(seed=ckpt.manifest["seed"], in_dim=arch["in_dim"],
                          hidden=arch["hidden"], out_dim=arch["out_dim"],
                          dropout_rate=arch["dropout_rate"],
                          residual_scale=arch["residual_scale"])
    for p in head.parameters():
        p.value = ckpt.arrays[p.name].copy()
    head.bn.running_mean = ckpt.arrays["proj.bn.running_mean"].copy()
    head.bn.running_var = ckpt.arrays["proj.bn.running_var"].copy()
    return head, ckpt.manifest
