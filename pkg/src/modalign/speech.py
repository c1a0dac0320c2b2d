"""Speech model stage: masked-autoencoder pretraining on the unlabeled pool,
then supervised fine-tuning of the encoder plus a linear head.

The encoder maps 209 acoustic features to a 128-d embedding through one
256-wide GELU layer; the decoder mirrors it for reconstruction. Fine-tuning
uses Mixup, label smoothing, inverse-frequency class weights, and a 10x
smaller learning rate on the encoder than on the fresh head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Standardizer, derive_seed, mixup_batch, one_hot_labels, round_half_up, smooth_labels
from .metrics import auc_roc
from .nn import (Sequential, TrainingDivergedError, as_matrix, make_mlp,
                 soft_cross_entropy_with_grad, softmax)
from .optim import AdamW, CosineRestartSchedule
from .training import EarlyStopping, TrainHistory, iterate_minibatches, restore_params, snapshot_params


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class SpeechStack:
    """Encoder / decoder / classification head triple for the speech modality."""

    encoder: Sequential
    decoder: Sequential
    head: Sequential
    input_dim: int
    hidden: tuple[int, ...]
    latent: int

    def parameters(self):
        return (self.encoder.parameters() + self.decoder.parameters()
                + self.head.parameters())

    def architecture(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "latent": self.latent}


def build_speech_stack(input_dim: int = 209, hidden: tuple[int, ...] = (256,),
                       latent: int = 128, seed: int = 0) -> SpeechStack:
    hidden = tuple(int(h) for h in hidden)
    if input_dim < 2 or latent < 1 or any(h < 1 for h in hidden):
        raise ValueError("speech stack dims out of range")
    rng = np.random.default_rng(derive_seed(seed, "speech/init"))
    encoder = make_mlp([input_dim, *hidden, latent], rng, name="enc")
    decoder = make_mlp([latent, *reversed(hidden), input_dim], rng, name="dec")
    head = make_mlp([latent, 2], rng, name="head")
    return SpeechStack(encoder=encoder, decoder=decoder, head=head,
                       input_dim=input_dim, hidden=hidden, latent=latent)


def encode_speech(stack: SpeechStack, x: np.ndarray) -> np.ndarray:
    """Deterministic eval-mode embedding z = E(x), 128 columns."""
    return stack.encoder.forward(as_matrix(x), mode="eval")


def speech_logits(stack: SpeechStack, x: np.ndarray) -> np.ndarray:
    return stack.head.forward(encode_speech(stack, x), mode="eval")


# ---------------------------------------------------------------------------
# Masking and the reconstruction loss
# ---------------------------------------------------------------------------


@dataclass
class MaskSpec:
    """Fraction of feature positions zeroed per row during pretraining."""

    mask_ratio: float = 0.3
    fill_value: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")

    def count_for(self, n_features: int) -> int:
        m = round_half_up(self.mask_ratio * n_features)
        if m < 1 or m >= n_features:
            raise ValueError(
                f"mask_ratio {self.mask_ratio} masks {m} of {n_features} features; "
                f"need at least 1 masked and 1 visible")
        return m


def mask_features(x: np.ndarray, spec: MaskSpec,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Zero exactly round(mask_ratio * d) positions per row; fresh masks per call.

    Returns (masked x, boolean mask with True at masked positions).
    """
    x = as_matrix(x)
    m = spec.count_for(x.shape[1])
    # rank random draws per row; the m smallest become the masked set
    scores = rng.random(x.shape)
    idx = np.argpartition(scores, m - 1, axis=1)[:, :m]
    mask = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=1)
    return np.where(mask, spec.fill_value, x), mask


def mae_loss_with_grad(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray,
                       lambda_c: float) -> tuple[float, np.ndarray]:
    """Masked reconstruction loss and its gradient in x_hat.

    Per row: squared error averaged over the masked positions only, plus
    lambda_c * (1 - cosine(x, x_hat)) over the FULL vectors; the batch loss
    is the row mean. lambda_c = 0 skips the cosine branch entirely, so
    zero-norm rows are only an error when the cosine term is active.
    """
    x = as_matrix(x)
    x_hat = as_matrix(x_hat, "x_hat")
    if x.shape != x_hat.shape:
        raise ValueError(f"x {x.shape} vs x_hat {x_hat.shape} mismatch")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("mask shape must match x")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("every row must have at least one masked position")
    if lambda_c < 0:
        raise ValueError("lambda_c must be non-negative")
    n = x.shape[0]

    diff = (x_hat - x) * mask
    loss_rows = (diff * diff).sum(axis=1) / counts
    grad = 2.0 * diff / counts[:, None]

    if lambda_c > 0.0:
        nx = np.linalg.norm(x, axis=1)
        nh = np.linalg.norm(x_hat, axis=1)
        if np.any(nx == 0.0) or np.any(nh == 0.0):
            bad = int(np.argmin(np.minimum(nx, nh)))
            raise ValueError(f"cosine term undefined: row {bad} has zero norm")
        dots = (x * x_hat).sum(axis=1)
        cos = dots / (nx * nh)
        loss_rows = loss_rows + lambda_c * (1.0 - cos)
        grad = grad - lambda_c * (x / (nx * nh)[:, None] - (cos / nh**2)[:, None] * x_hat)

    return float(loss_rows.mean()), grad / n


def mae_loss(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray,
             lambda_c: float) -> float:
    return mae_loss_with_grad(x, x_hat, mask, lambda_c)[0]


# ---------------------------------------------------------------------------
# Stage 1a: masked-autoencoder pretraining
# ---------------------------------------------------------------------------


@dataclass
class MaeConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    t0: int = 50
    patience: int = 30
    mask_ratio: float = 0.3
    lambda_c: float = 0.5
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 1 <= self.epochs <= 200:
            raise ValueError(f"epochs must be in [1, 200], got {self.epochs}")
        if self.batch_size < 1 or self.patience < 1 or self.t0 < 1:
            raise ValueError("batch_size, patience, and t0 must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be non-negative")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must be in (0, 0.5)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def pretrain_mae(x_unlabeled: np.ndarray, stack: SpeechStack, config: MaeConfig,
                 seed: int, epoch_callback=None) -> tuple[Standardizer, TrainHistory]:
    """Fit the stack's autoencoder in place on the unlabeled speech pool.

    Standardization is fit on the whole pool and returned for downstream
    stages. A held-out fraction with a mask drawn once supplies the
    early-stopping reconstruction loss. `epoch_callback(epoch, val_loss)`,
    when given, may abort training by raising (search pruning).
    """
    x_unlabeled = as_matrix(x_unlabeled)
    n = x_unlabeled.shape[0]
    if n < 10:
        raise ValueError(f"unlabeled pool too small ({n} rows)")
    scaler = Standardizer.fit(x_unlabeled)
    x = scaler.transform(x_unlabeled)

    n_val = max(round_half_up(config.val_fraction * n), 1)
    split_rng = np.random.default_rng(derive_seed(seed, "pretrain/val-split"))
    order = split_rng.permutation(n)
    x_val, x_train = x[order[:n_val]], x[order[n_val:]]

    mask_spec = MaskSpec(mask_ratio=config.mask_ratio)
    # fixed validation mask keeps the early-stopping loss comparable across epochs
    val_rng = np.random.default_rng(derive_seed(seed, "pretrain/val-mask"))
    x_val_masked, val_mask = mask_features(x_val, mask_spec, val_rng)

    ae_params = stack.encoder.parameters() + stack.decoder.parameters()
    opt = AdamW([(ae_params, config.lr)])
    schedule = CosineRestartSchedule(config.lr, t0=config.t0)
    stopper = EarlyStopping(patience=config.patience, mode="min")
    history = TrainHistory()
    best = snapshot_params(ae_params)

    rng = np.random.default_rng(derive_seed(seed, "pretrain/batches"))
    for epoch in range(config.epochs):
        factor = schedule.factor(epoch)
        losses = []
        for batch_no, idx in enumerate(
                iterate_minibatches(x_train.shape[0], config.batch_size, rng)):
            xb = x_train[idx]
            xb_masked, mask = mask_features(xb, mask_spec, rng)
            z = stack.encoder.forward(xb_masked, mode="train", rng=rng)
            x_hat = stack.decoder.forward(z, mode="train", rng=rng)
            loss, dxhat = mae_loss_with_grad(xb, x_hat, mask, config.lambda_c)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite reconstruction loss at epoch {epoch}, batch {batch_no}")
            stack.encoder.backward(stack.decoder.backward(dxhat))
            opt.step(factor, context=f"pretrain epoch {epoch} batch {batch_no}")
            losses.append(loss)

        z_val = stack.encoder.forward(x_val_masked, mode="eval")
        val_loss = mae_loss(x_val, stack.decoder.forward(z_val, mode="eval"),
                            val_mask, config.lambda_c)
        history.log(float(np.mean(losses)), val_loss=val_loss,
                    lr=schedule.lr_at(epoch))
        if epoch_callback is not None:
            epoch_callback(epoch, val_loss)
        if stopper.update(val_loss, epoch) == "improved":
            best = snapshot_params(ae_params)
        if stopper.should_stop:
            break

    restore_params(ae_params, best)
    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.train_loss) - 1
    return scaler, history


# ---------------------------------------------------------------------------
# Stage 1b: supervised fine-tuning
# ---------------------------------------------------------------------------


@dataclass
class FinetuneConfig:
    epochs: int = 200
    batch_size: int = 32
    lr_head: float = 1e-4
    lr_encoder: float = 1e-5
    t0: int = 50
    patience: int = 30
    mixup_alpha: float = 0.3  # 0 disables mixup
    label_smoothing: float = 0.10

    def __post_init__(self):
        if not 1 <= self.epochs <= 200:
            raise ValueError(f"epochs must be in [1, 200], got {self.epochs}")
        if self.batch_size < 1 or self.patience < 1 or self.t0 < 1:
            raise ValueError("batch_size, patience, and t0 must be positive")
        if self.lr_head <= 0 or self.lr_encoder <= 0:
            raise ValueError("learning rates must be positive")
        if self.mixup_alpha < 0:
            raise ValueError("mixup_alpha must be non-negative (0 disables)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def finetune_speech(stack: SpeechStack, x_train: np.ndarray, y_train: np.ndarray,
                    x_val: np.ndarray, y_val: np.ndarray,
                    class_weight_vec: np.ndarray, config: FinetuneConfig,
                    seed: int) -> TrainHistory:
    """Supervised fine-tune of encoder + head on standardized speech features.

    Trains in place; the decoder is untouched. Targets go through Mixup then
    label smoothing; each row's loss weight is its (mixed, smoothed) target
    dotted with the class weights. Early stopping maximizes validation AUC,
    breaking exact AUC ties toward lower validation loss.
    """
    x_train, x_val = as_matrix(x_train), as_matrix(x_val, "x_val")
    y_train = np.asarray(y_train, dtype=int)
    y_val = np.asarray(y_val, dtype=int)
    w = np.asarray(class_weight_vec, dtype=np.float64).reshape(-1)
    if w.shape != (2,):
        raise ValueError("class_weight_vec must have 2 entries (CN, MCI)")
    if np.unique(y_train).size < 2:
        raise ValueError("fine-tuning needs both classes in the train split")

    trained = stack.encoder.parameters() + stack.head.parameters()
    opt = AdamW([(stack.head.parameters(), config.lr_head),
                 (stack.encoder.parameters(), config.lr_encoder)])
    schedule = CosineRestartSchedule(config.lr_head, t0=config.t0)
    stopper = EarlyStopping(patience=config.patience, mode="max")
    history = TrainHistory()
    best = snapshot_params(trained)
    y_val_onehot = one_hot_labels(y_val)
    val_weights = w[y_val]

    rng = np.random.default_rng(derive_seed(seed, "finetune/batches"))
    for epoch in range(config.epochs):
        factor = schedule.factor(epoch)
        losses = []
        for batch_no, idx in enumerate(
                iterate_minibatches(x_train.shape[0], config.batch_size, rng)):
            xb, yb = x_train[idx], one_hot_labels(y_train[idx])
            if config.mixup_alpha > 0:
                xb, yb = mixup_batch(xb, yb, alpha=config.mixup_alpha, rng=rng)
            yb = smooth_labels(yb, epsilon=config.label_smoothing)
            logits = stack.head.forward(
                stack.encoder.forward(xb, mode="train", rng=rng), mode="train", rng=rng)
            loss, dlogits = soft_cross_entropy_with_grad(logits, yb, yb @ w)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite fine-tune loss at epoch {epoch}, batch {batch_no}")
            stack.encoder.backward(stack.head.backward(dlogits))
            opt.step(factor, context=f"finetune epoch {epoch} batch {batch_no}")
            losses.append(loss)

        logits_val = speech_logits(stack, x_val)
        val_loss, _ = soft_cross_entropy_with_grad(logits_val, y_val_onehot, val_weights)
        val_auc = auc_roc(softmax(logits_val)[:, 1], y_val)
        history.log(float(np.mean(losses)), val_loss=val_loss, val_metric=val_auc,
                    lr=schedule.lr_at(epoch))
        if stopper.update(val_auc, epoch, loss=val_loss) != "worse":
            best = snapshot_params(trained)
        if stopper.should_stop:
            break

    restore_params(trained, best)
    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.train_loss) - 1
    return history


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_speech_stack(path, stack: SpeechStack, scaler: Standardizer, *,
                      seed: int, stage: str, training_config: dict | None = None,
                      history: dict | None = None, frozen: bool = False,
                      refs: dict | None = None) -> str:
    named = [(p.name, p.value) for p in stack.parameters()]
    return save_checkpoint(
        path, "speech_stack", named, architecture=stack.architecture(),
        seed=seed, stage=stage, standardization=scaler.to_dict(),
        training_config=training_config, history=history, frozen=frozen,
        refs=refs)


def load_speech_stack(path) -> tuple[SpeechStack, Standardizer, dict]:
    ckpt = load_checkpoint(path, expect_kind="speech_stack")
    arch = ckpt.manifest["architecture"]
    stack = build_speech_stack(input_dim=arch["input_dim"],
                               hidden=tuple(arch["hidden"]),
                               latent=arch["latent"], seed=ckpt.manifest["seed"])
    for p in stack.parameters():
        saved = ckpt.arrays.get(p.name)
        if saved is None:
            raise KeyError(f"checkpoint missing parameter {p.name!r}")
        if saved.shape != p.value.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name!r}")
        p.value = saved if ckpt.manifest.get("frozen") else saved.copy()
    scaler = Standardizer.from_dict(ckpt.manifest["standardization"])
    return stack, scaler, ckpt.manifest
