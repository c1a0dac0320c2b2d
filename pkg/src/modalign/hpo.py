"""Hyperparameter search: seeded random search with a median pruner for the
autoencoder and teacher, and an exhaustive cross-validated grid for the
alignment stage's (lambda_mse, lambda_cos, lr).

Random search stands in for a Bayesian sampler at the same 60-trial budget;
trials are fully determined by (search seed, trial index), so runs are
reproducible and trial tables can be compared across machines.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import AlignConfig, ProjectionHead, align_loss, project, train_alignment
from .data import derive_seed, stratified_kfold
from .metrics import auc_roc
from .nn import TrainingDivergedError, as_matrix, softmax
from .teacher import TeacherArchSpec, TeacherConfig, classify_embedding, train_teacher

DIRECTIONS = ("maximize", "minimize")


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("categorical dimension needs at least one value")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValueError(f"need 0 < low < high, got ({self.low}, {self.high})")

    def sample(self, rng: np.random.Generator) -> float:
        return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))


@dataclass
class SearchSpace:
    dimensions: dict
    budget: int
    objective: str  # maximize | minimize

    def __post_init__(self):
        if not self.dimensions:
            raise ValueError("search space needs at least one dimension")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.objective not in DIRECTIONS:
            raise ValueError(f"objective must be one of {DIRECTIONS}")


def sample_trial(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One independent draw per dimension, in insertion order."""
    return {name: dim.sample(rng) for name, dim in space.dimensions.items()}


# ---------------------------------------------------------------------------
# Trials and pruning
# ---------------------------------------------------------------------------


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    seed: int
    status: str = "completed"  # completed | pruned | failed
    value: float | None = None
    intermediates: list = field(default_factory=list)
    fold_values: list = field(default_factory=list)
    pruned_epoch: int | None = None
    fold_hash: str | None = None
    tiebreak: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        # tuples (e.g. sampled layer widths) become lists in JSON anyway
        out["params"] = {k: list(v) if isinstance(v, tuple) else v
                        for k, v in self.params.items()}
        return out


class TrialPruned(Exception):
    def __init__(self, epoch: int):
        super().__init__(f"pruned at epoch {epoch}")
        self.epoch = epoch


@dataclass
class PrunerState:
    """Median pruner over completed trials' per-epoch values."""

    warmup_epochs: int = 10
    min_trials_before_pruning: int = 5
    history: list = field(default_factory=list)  # one value list per completed trial

    def record_completed(self, intermediates: list) -> None:
        self.history.append(list(intermediates))


def should_prune(pruner: PrunerState, epoch: int, value: float,
                 direction: str) -> bool:
    """Strictly worse than the completed-trial median at this epoch index,
    after the warmup epoch and minimum completed-trial count."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if epoch < pruner.warmup_epochs:
        return False
    if len(pruner.history) < pruner.min_trials_before_pruning:
        return False
    at_epoch = [h[epoch] for h in pruner.history if len(h) > epoch]
    if not at_epoch:
        return False
    median = float(np.median(at_epoch))
    return value < median if direction == "maximize" else value > median


# ---------------------------------------------------------------------------
# Random search
# ---------------------------------------------------------------------------


def random_search(space: SearchSpace, trainer, seed: int,
                  pruner: PrunerState | None = None,
                  ) -> tuple[TrialRecord, list[TrialRecord]]:
    """Up to `budget` trials of `trainer(params, trial_seed, report)`.

    `report(epoch, value)` must be called once per epoch with the current
    validation value; it raises TrialPruned when the median rule fires.
    The trainer returns its final objective value. Failures (divergence,
    invalid sampled configs) are recorded and the search continues. If
    nothing completes, the best pruned trial is returned under a warning.
    """
    if pruner is None:
        pruner = PrunerState()
    sign = 1.0 if space.objective == "maximize" else -1.0
    records: list[TrialRecord] = []

    for trial_id in range(space.budget):
        trial_seed = derive_seed(seed, f"hpo/trial-{trial_id}")
        rng = np.random.default_rng(trial_seed)
        params = sample_trial(space, rng)
        record = TrialRecord(trial_id=trial_id, params=params, seed=trial_seed)
        intermediates: list[float] = []

        def report(epoch: int, value: float) -> None:
            intermediates.append(float(value))
            if should_prune(pruner, epoch, value, space.objective):
                raise TrialPruned(epoch)

        try:
            value = trainer(params, trial_seed, report)
        except TrialPruned as exc:
            record.status = "pruned"
            record.pruned_epoch = exc.epoch
            record.value = intermediates[-1] if intermediates else None
        except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
            record.status = "failed"
            record.error = f"{type(exc).__name__}: {exc}"
        else:
            record.status = "completed"
            record.value = float(value)
            record.fold_values = [float(value)]
            pruner.record_completed(intermediates)
        record.intermediates = intermediates
        records.append(record)

    completed = [r for r in records if r.status == "completed"]
    if completed:
        best = max(completed, key=lambda r: sign * r.value)
    else:
        pruned = [r for r in records if r.status == "pruned" and r.value is not None]
        if not pruned:
            raise RuntimeError("every trial failed; nothing to return")
        warnings.warn("all trials were pruned; returning the best pruned trial",
                      stacklevel=2)
        best = max(pruned, key=lambda r: sign * r.value)
    return best, records


# ---------------------------------------------------------------------------
# Grid search for the alignment stage
# ---------------------------------------------------------------------------


def grid_search_align(lambda_mse_grid, lambda_cos_grid, lr_grid,
                      z_speech: np.ndarray, z_mri: np.ndarray, y: np.ndarray,
                      teacher, align_base: AlignConfig, seed: int, k: int = 5,
                      head_hidden: int = 96, head_dropout: float = 0.6,
                      ) -> tuple[dict, list[TrialRecord]]:
    """Exhaustive grid over (lambda_mse, lambda_cos, lr), each cell scored by
    stratified k-fold speech-only AUC with one shared fold assignment.

    Ties break toward lower mean alignment loss on the held folds, then
    lexicographic (lambda_mse, lambda_cos, lr). Failed cells are recorded
    and skipped.
    """
    grids = [tuple(g) for g in (lambda_mse_grid, lambda_cos_grid, lr_grid)]
    if any(len(g) == 0 for g in grids):
        raise ValueError("all three grids must be non-empty")
    z_speech, z_mri = as_matrix(z_speech), as_matrix(z_mri, "z_mri")
    y = np.asarray(y, dtype=int)

    ids = [f"row{i:05d}" for i in range(y.size)]
    labels = ["CN" if c == 0 else "MCI" for c in y]
    folds = stratified_kfold(ids, labels, k=k, seed=derive_seed(seed, "grid/folds"))
    fold_hash = folds.digest()
    membership = np.array([folds.fold_of[sid] for sid in ids])

    records: list[TrialRecord] = []
    for trial_id, cell in enumerate(sorted(itertools.product(*grids))):
        lam_mse, lam_cos, lr = cell
        params = {"lambda_mse": lam_mse, "lambda_cos": lam_cos, "lr": lr}
        record = TrialRecord(trial_id=trial_id, params=params,
                             seed=derive_seed(seed, f"grid/cell-{trial_id}"),
                             fold_hash=fold_hash)
        try:
            cfg = AlignConfig(epochs=align_base.epochs, batch_size=align_base.batch_size,
                              lr=lr, t0=align_base.t0, patience=align_base.patience,
                              lambda_mse=lam_mse, lambda_cos=lam_cos)
            fold_aucs, fold_losses = [], []
            for fold in range(k):
                held = membership == fold
                head = ProjectionHead(seed=derive_seed(record.seed, f"fold-{fold}"),
                                      hidden=head_hidden, dropout_rate=head_dropout)
                train_alignment(head, z_speech[~held], z_mri[~held],
                                z_speech[held], y[held], teacher, cfg,
                                seed=derive_seed(record.seed, f"fold-{fold}/train"))
                z_hat = project(head, z_speech[held])
                scores = softmax(classify_embedding(teacher, z_hat))[:, 1]
                fold_aucs.append(auc_roc(scores, y[held]))
                fold_losses.append(align_loss(z_hat, z_mri[held], lam_mse, lam_cos))
            record.fold_values = [float(a) for a in fold_aucs]
            record.value = float(np.mean(fold_aucs))
            record.tiebreak = float(np.mean(fold_losses))
            record.status = "completed"
        except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
            record.status = "failed"
            record.error = f"{type(exc).__name__}: {exc}"
        records.append(record)

    completed = [r for r in records if r.status == "completed"]
    if not completed:
        raise RuntimeError("every grid cell failed")
    assert len({r.fold_hash for r in records}) == 1, "fold assignment drifted"
    best = min(completed, key=lambda r: (-r.value, r.tiebreak,
                                         (r.params["lambda_mse"],
                                          r.params["lambda_cos"], r.params["lr"])))
    return dict(best.params), records


# ---------------------------------------------------------------------------
# Default spaces and trainers
# ---------------------------------------------------------------------------


def _decreasing_subsets(pool=(2048, 1024, 512, 256), max_len: int = 3) -> tuple:
    out = []
    for size in range(1, max_len + 1):
        out.extend(itertools.combinations(pool, size))  # pool is decreasing
    return tuple(out)


def default_teacher_space(budget: int = 60) -> SearchSpace:
    return SearchSpace(
        dimensions={"hidden_widths": Categorical(_decreasing_subsets()),
                    "dropout_rate": Categorical((0.2, 0.3, 0.5)),
                    "lr": LogUniform(1e-5, 1e-3)},
        budget=budget, objective="maximize")


def default_mae_space(budget: int = 60) -> SearchSpace:
    return SearchSpace(
        dimensions={"lambda_c": Categorical((0.1, 0.25, 0.5, 1.0)),
                    "mask_ratio": Categorical((0.15, 0.3, 0.5)),
                    "lr": LogUniform(1e-4, 1e-2)},
        budget=budget, objective="minimize")


def default_align_grids() -> tuple[tuple, tuple, tuple]:
    return (0.5, 1.0, 2.0), (0.5, 1.0, 2.0), (1e-4, 3e-4, 1e-3)


def make_teacher_trainer(x_mri: np.ndarray, y: np.ndarray, epochs: int = 60):
    """Trainer for random_search over teacher architectures; the objective is
    the internal stratified-holdout validation AUC."""
    def trainer(params: dict, trial_seed: int, report) -> float:
        arch = TeacherArchSpec(hidden_widths=list(params["hidden_widths"]),
                               dropout_rate=params["dropout_rate"])
        cfg = TeacherConfig(epochs=epochs, lr=params["lr"])
        _, _, history = train_teacher(x_mri, y, arch, cfg, seed=trial_seed,
                                      epoch_callback=report)
        return max(history.val_metric)
    return trainer


def make_mae_trainer(pool: np.ndarray, epochs: int = 40):
    """Trainer for random_search over MAE settings; the objective is the
    held-out reconstruction loss (minimized)."""
    from .speech import MaeConfig, build_speech_stack, pretrain_mae

    def trainer(params: dict, trial_seed: int, report) -> float:
        cfg = MaeConfig(epochs=epochs, lr=params["lr"],
                        mask_ratio=params["mask_ratio"], lambda_c=params["lambda_c"])
        stack = build_speech_stack(seed=trial_seed)
        _, history = pretrain_mae(pool, stack, cfg, seed=trial_seed,
                                  epoch_callback=report)
        return min(history.val_loss)
    return trainer


# ---------------------------------------------------------------------------
# Trial-table IO
# ---------------------------------------------------------------------------


def write_trials(path, records: list[TrialRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_trials(path) -> list[TrialRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(TrialRecord(**json.loads(line)))
    return records


def best_config_fragment(target: str, params: dict) -> dict:
    """Best trial parameters as a config-file fragment for the CLI."""
    if target == "teacher":
        return {"teacher": {"hidden_widths": list(params["hidden_widths"]),
                            "dropout_rate": params["dropout_rate"],
                            "lr": params["lr"]}}
    if target == "mae":
        return {"mae": {"lambda_c": params["lambda_c"],
                        "mask_ratio": params["mask_ratio"], "lr": params["lr"]}}
    if target == "align":
        return {"align": {"lambda_mse": params["lambda_mse"],
                          "lambda_cos": params["lambda_cos"], "lr": params["lr"]}}
    raise ValueError(f"unknown target {target!r}; expected mae, teacher, or align")
