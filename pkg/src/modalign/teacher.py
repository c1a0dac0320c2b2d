"""Stage 2: the MRI teacher that defines the shared 128-d embedding space.

A projection MLP squeezes 6144 MRI features through strictly decreasing
hidden widths down to 128, and a linear classifier reads CN/MCI off that
embedding. Once trained the pair is frozen; later stages may only read it,
enforced by a parameter checksum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import digest_params, load_checkpoint, save_checkpoint
from .data import Standardizer, class_weights, derive_seed, one_hot_labels, round_half_up, stratified_kfold
from .metrics import auc_roc
from .nn import Sequential, as_matrix, freeze_params, make_mlp, params_frozen, soft_cross_entropy_with_grad, softmax
from .optim import AdamW, CosineRestartSchedule
from .training import EarlyStopping, TrainHistory, iterate_minibatches, restore_params, snapshot_params

INPUT_DIM = 6144
LATENT_DIM = 128


@dataclass
class TeacherArchSpec:
    """Hidden widths (strictly decreasing, between 6144 and 128) and dropout."""

    hidden_widths: list[int] = field(default_factory=lambda: [1024, 256])
    dropout_rate: float = 0.3

    def __post_init__(self):
        widths = [int(w) for w in self.hidden_widths]
        if not widths:
            raise ValueError("teacher needs at least one hidden layer")
        chain = [INPUT_DIM, *widths, LATENT_DIM]
        for a, b in zip(chain[:-1], chain[1:]):
            if a <= b:
                raise ValueError(
                    f"hidden widths must decrease strictly from {INPUT_DIM} to "
                    f"{LATENT_DIM}, got {widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        self.hidden_widths = widths

    def to_dict(self) -> dict:
        return {"hidden_widths": list(self.hidden_widths),
                "dropout_rate": self.dropout_rate}


@dataclass
class Teacher:
    projection: Sequential
    classifier: Sequential
    arch: TeacherArchSpec

    def parameters(self):
        return self.projection.parameters() + self.classifier.parameters()


def build_teacher(arch: TeacherArchSpec, seed: int = 0) -> Teacher:
    rng = np.random.default_rng(derive_seed(seed, "teacher/init"))
    projection = make_mlp([INPUT_DIM, *arch.hidden_widths, LATENT_DIM], rng,
                          name="tproj", dropout_rate=arch.dropout_rate)
    classifier = make_mlp([LATENT_DIM, 2], rng, name="tcls")
    return Teacher(projection=projection, classifier=classifier, arch=arch)


def embed_mri(teacher: Teacher, x: np.ndarray) -> np.ndarray:
    return teacher.projection.forward(as_matrix(x), mode="eval")


def classify_embedding(teacher: Teacher, z: np.ndarray) -> np.ndarray:
    """Logits from an embedding already in teacher space."""
    return teacher.classifier.forward(as_matrix(z, "z"), mode="eval")


def teacher_named_values(teacher: Teacher) -> list[tuple[str, np.ndarray]]:
    return [(p.name, p.value) for p in teacher.parameters()]


def teacher_digest(teacher: Teacher) -> str:
    return digest_params(teacher_named_values(teacher))


def freeze_teacher(teacher: Teacher) -> str:
    """Mark every parameter read-only; returns the frozen digest."""
    freeze_params(teacher.parameters())
    return teacher_digest(teacher)


def teacher_frozen(teacher: Teacher) -> bool:
    return params_frozen(teacher.parameters())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TeacherConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 3e-4
    t0: int = 50
    patience: int = 30
    val_fraction: float = 0.15

    def __post_init__(self):
        if not 1 <= self.epochs <= 200:
            raise ValueError(f"epochs must be in [1, 200], got {self.epochs}")
        if self.batch_size < 1 or self.patience < 1 or self.t0 < 1:
            raise ValueError("batch_size, patience, and t0 must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must be in (0, 0.5)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _stratified_holdout(y: np.ndarray, val_fraction: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Index split with per-class validation counts from largest remainder."""
    n = y.size
    n_val = round_half_up(val_fraction * n)
    quotas = {c: val_fraction * (y == c).sum() for c in (0, 1)}
    floors = {c: int(np.floor(q)) for c, q in quotas.items()}
    for c in sorted(quotas, key=lambda c: -(quotas[c] - floors[c]))[:n_val - sum(floors.values())]:
        floors[c] += 1
    val_parts, train_parts = [], []
    for c in (0, 1):
        idx = np.nonzero(y == c)[0]
        idx = idx[rng.permutation(idx.size)]
        val_parts.append(idx[:floors[c]])
        train_parts.append(idx[floors[c]:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


def train_teacher(x_mri: np.ndarray, y: np.ndarray, arch: TeacherArchSpec,
                  config: TeacherConfig, seed: int, epoch_callback=None,
                  ) -> tuple[Teacher, Standardizer, TrainHistory]:
    """Fit the teacher on the MRI-only cohort (raw features).

    Standardization is fit on the internal training part only. Class
    imbalance is handled by inverse-frequency loss weights; early stopping
    maximizes held-out AUC with a loss tie-break. The returned model is NOT
    yet frozen — callers freeze after any cross-validation reporting.
    `epoch_callback(epoch, val_auc)`, when given, may abort training early
    by raising (hyperparameter-search pruning).
    """
    x_mri = as_matrix(x_mri)
    y = np.asarray(y, dtype=int)
    split_rng = np.random.default_rng(derive_seed(seed, "teacher/val-split"))
    train_idx, val_idx = _stratified_holdout(y, config.val_fraction, split_rng)
    if train_idx.size < 4 or val_idx.size < 2:
        raise ValueError("MRI cohort too small for an internal holdout")

    scaler = Standardizer.fit(x_mri[train_idx])
    x_train, y_train = scaler.transform(x_mri[train_idx]), y[train_idx]
    x_val, y_val = scaler.transform(x_mri[val_idx]), y[val_idx]

    labels = ["CN" if c == 0 else "MCI" for c in y_train]
    cw = class_weights(labels)
    w = np.array([cw["CN"], cw["MCI"]])

    teacher = build_teacher(arch, seed=seed)
    opt = AdamW([(teacher.parameters(), config.lr)])
    schedule = CosineRestartSchedule(config.lr, t0=config.t0)
    stopper = EarlyStopping(patience=config.patience, mode="max")
    history = TrainHistory()
    best = snapshot_params(teacher.parameters())
    y_val_onehot = one_hot_labels(y_val)
    val_w = w[y_val]

    rng = np.random.default_rng(derive_seed(seed, "teacher/batches"))
    for epoch in range(config.epochs):
        factor = schedule.factor(epoch)
        losses = []
        for idx in iterate_minibatches(x_train.shape[0], config.batch_size, rng):
            xb, yb = x_train[idx], y_train[idx]
            z = teacher.projection.forward(xb, mode="train", rng=rng)
            logits = teacher.classifier.forward(z, mode="train", rng=rng)
            loss, dlogits = soft_cross_entropy_with_grad(
                logits, one_hot_labels(yb), w[yb])
            teacher.projection.backward(teacher.classifier.backward(dlogits))
            opt.step(factor, context=f"teacher epoch {epoch}")
            losses.append(loss)

        logits_val = classify_embedding(teacher, embed_mri(teacher, x_val))
        val_loss, _ = soft_cross_entropy_with_grad(logits_val, y_val_onehot, val_w)
        val_auc = auc_roc(softmax(logits_val)[:, 1], y_val)
        history.log(float(np.mean(losses)), val_loss=val_loss, val_metric=val_auc,
                    lr=schedule.lr_at(epoch))
        if epoch_callback is not None:
            epoch_callback(epoch, val_auc)
        if stopper.update(val_auc, epoch, loss=val_loss) != "worse":
            best = snapshot_params(teacher.parameters())
        if stopper.should_stop:
            break

    restore_params(teacher.parameters(), best)
    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = len(history.train_loss) - 1
    return teacher, scaler, history


def teacher_cv_auc(x_mri: np.ndarray, y: np.ndarray, arch: TeacherArchSpec,
                   config: TeacherConfig, seed: int, k: int = 5) -> list[float]:
    """Stratified k-fold AUC of fresh teachers; reporting only, nothing kept."""
    x_mri = as_matrix(x_mri)
    y = np.asarray(y, dtype=int)
    ids = [f"row{i:05d}" for i in range(y.size)]
    labels = ["CN" if c == 0 else "MCI" for c in y]
    folds = stratified_kfold(ids, labels, k=k, seed=derive_seed(seed, "teacher/cv"))
    aucs = []
    for fold in range(k):
        held = np.array([folds.fold_of[sid] == fold for sid in ids])
        if np.unique(y[~held]).size < 2 or np.unique(y[held]).size < 2:
            raise ValueError(f"fold {fold} is missing a class")
        try:
            model, scaler, _ = train_teacher(
                x_mri[~held], y[~held], arch, config,
                seed=derive_seed(seed, f"teacher/cv-fold{fold}"))
        except ValueError as exc:
            raise ValueError(f"fold {fold}: {exc}") from exc
        logits = classify_embedding(model, embed_mri(model, scaler.transform(x_mri[held])))
        aucs.append(auc_roc(softmax(logits)[:, 1], y[held]))
    return aucs


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_teacher(path, teacher: Teacher, scaler: Standardizer, *, seed: int,
                 training_config: dict | None = None, history: dict | None = None,
                 frozen: bool = True) -> str:
    return save_checkpoint(
        path, "teacher", teacher_named_values(teacher),
        architecture=teacher.arch.to_dict(), seed=seed, stage="teacher",
        standardization=scaler.to_dict(), training_config=training_config,
        history=history, frozen=frozen)


def load_teacher(path) -> tuple[Teacher, Standardizer, dict]:
    ckpt = load_checkpoint(path, expect_kind="teacher")
    arch = TeacherArchSpec(**ckpt.manifest["architecture"])
    teacher = build_teacher(arch, seed=ckpt.manifest["seed"])
    for p in teacher.parameters():
        saved = ckpt.arrays.get(p.name)
        if saved is None:
            raise KeyError(f"checkpoint missing parameter {p.name!r}")
        if saved.shape != p.value.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name!r}")
        p.value = saved if ckpt.manifest.get("frozen") else saved.copy()
    scaler = Standardizer.from_dict(ckpt.manifest["standardization"])
    return teacher, scaler, ckpt.manifest
