"""End-to-end orchestration of the three training stages plus evaluation,
operating on in-memory cohorts. The CLI wraps these functions with file IO;
tests and the ablation harness call them directly.

Stage boundaries are digest-checked: the teacher and the speech encoder are
frozen before alignment and verified unchanged afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import AlignConfig, ProjectionHead, project, train_alignment
from .baseline import train_lr_baseline
from .checkpoint import digest_params
from .data import (Cohort, SplitAssignment, Standardizer, class_weight_vector,
                   derive_seed, stratified_split)
from .inference import PATHS
from .metrics import MetricReport, auc_roc, metric_report, pca_2d
from .nn import FrozenParameterError, freeze_params, softmax
from .speech import (FinetuneConfig, MaeConfig, SpeechStack, build_speech_stack,
                     encode_speech, finetune_speech, pretrain_mae, speech_logits)
from .teacher import (Teacher, TeacherArchSpec, TeacherConfig, classify_embedding,
                      embed_mri, freeze_teacher, teacher_cv_auc, teacher_digest,
                      train_teacher)
from .training import TrainHistory


@dataclass
class PipelineConfig:
    """Everything the three stages and evaluation need, with ablation toggles."""

    seed: int = 0
    split_seed: int = 42
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    mae: MaeConfig = field(default_factory=MaeConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    teacher_arch: TeacherArchSpec = field(default_factory=TeacherArchSpec)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    head_hidden: int = 96
    head_dropout: float = 0.6
    pretrain_enabled: bool = True
    teacher_cv_folds: int = 0
    bootstrap_resamples: int = 1000
    ci_level: float = 0.95


@dataclass
class Stage1Result:
    stack: SpeechStack
    scaler: Standardizer
    split: SplitAssignment
    pretrain_history: TrainHistory | None
    finetune_history: TrainHistory
    encoder_digest: str


@dataclass
class Stage2Result:
    teacher: Teacher
    scaler: Standardizer
    history: TrainHistory
    digest: str
    cv_aucs: list[float]


@dataclass
class Stage3Result:
    head: ProjectionHead
    history: TrainHistory


@dataclass
class EvalResult:
    metrics: dict[str, MetricReport]
    scores: dict[str, np.ndarray]
    test_ids: list[str]
    test_labels: np.ndarray
    finetuned_speech_auc: float
    baseline_auc: float
    pca_coords: np.ndarray
    pca_explained: np.ndarray
    pca_modality: list[str]
    pca_labels: np.ndarray


@dataclass
class PipelineResult:
    config: PipelineConfig
    split: SplitAssignment
    stage1: Stage1Result
    stage2: Stage2Result
    stage3: Stage3Result
    evaluation: EvalResult


def _split_features(paired: Cohort, split: SplitAssignment, scaler: Standardizer):
    """Standardized speech matrices and integer labels per split part."""
    xs, ys = {}, {}
    for part in ("train", "val", "test"):
        ids = getattr(split, f"{part}_ids")
        xs[part] = scaler.transform(paired.feature_matrix("speech", ids))
        ys[part] = paired.label_indices(ids)
    return xs, ys


def run_stage1(unlabeled: Cohort, paired: Cohort, config: PipelineConfig,
               split: SplitAssignment | None = None) -> Stage1Result:
    """Pretrain (unless disabled) and fine-tune the speech stack, then freeze
    the encoder for the alignment stage."""
    if split is None:
        split = stratified_split(paired, fractions=config.split_fractions,
                                 seed=config.split_seed)
    stack = build_speech_stack(seed=config.seed)
    pretrain_history = None
    if config.pretrain_enabled:
        pool = unlabeled.feature_matrix("speech")
        scaler, pretrain_history = pretrain_mae(pool, stack, config.mae,
                                                seed=config.seed)
    else:
        # from-scratch variant: same standardization source, random encoder
        scaler = Standardizer.fit(unlabeled.feature_matrix("speech"))

    xs, ys = _split_features(paired, split, scaler)
    weights = class_weight_vector(ys["train"])
    finetune_history = finetune_speech(stack, xs["train"], ys["train"],
                                       xs["val"], ys["val"], weights,
                                       config.finetune, seed=config.seed)
    freeze_params(stack.encoder.parameters())
    digest = digest_params([(p.name, p.value) for p in stack.encoder.parameters()])
    return Stage1Result(stack=stack, scaler=scaler, split=split,
                        pretrain_history=pretrain_history,
                        finetune_history=finetune_history, encoder_digest=digest)


def run_stage2(mri_cohort: Cohort, config: PipelineConfig) -> Stage2Result:
    """Train the MRI teacher on its own cohort and freeze it."""
    ids = mri_cohort.labeled_ids()
    x = mri_cohort.feature_matrix("mri", ids)
    y = mri_cohort.label_indices(ids)
    cv_aucs = (teacher_cv_auc(x, y, config.teacher_arch, config.teacher,
                              seed=config.seed, k=config.teacher_cv_folds)
               if config.teacher_cv_folds > 1 else [])
    teacher, scaler, history = train_teacher(x, y, config.teacher_arch,
                                             config.teacher, seed=config.seed)
    digest = freeze_teacher(teacher)
    return Stage2Result(teacher=teacher, scaler=scaler, history=history,
                        digest=digest, cv_aucs=cv_aucs)


def run_stage3(paired: Cohort, config: PipelineConfig, stage1: Stage1Result,
               stage2: Stage2Result) -> Stage3Result:
    """Fit the projection head on paired embeddings; frozen stages verified."""
    split = stage1.split
    xs, ys = _split_features(paired, split, stage1.scaler)
    z_train = encode_speech(stage1.stack, xs["train"])
    z_val = encode_speech(stage1.stack, xs["val"])
    zm = {part: embed_mri(stage2.teacher, stage2.scaler.transform(
              paired.feature_matrix("mri", getattr(split, f"{part}_ids"))))
          for part in ("train", "val")}

    head = ProjectionHead(seed=config.seed, hidden=config.head_hidden,
                          dropout_rate=config.head_dropout)
    history = train_alignment(head, z_train, zm["train"], z_val, ys["val"],
                              stage2.teacher, config.align, seed=config.seed,
                              expected_teacher_digest=stage2.digest,
                              zm_val=zm["val"])
    enc_digest = digest_params([(p.name, p.value) for p in stage1.stack.encoder.parameters()])
    if enc_digest != stage1.encoder_digest:
        raise FrozenParameterError("speech encoder changed during alignment")
    return Stage3Result(head=head, history=history)


def _path_scores(paired: Cohort, ids, stage1: Stage1Result, stage2: Stage2Result,
                 stage3: Stage3Result) -> dict[str, np.ndarray]:
    x_speech = stage1.scaler.transform(paired.feature_matrix("speech", ids))
    x_mri = stage2.scaler.transform(paired.feature_matrix("mri", ids))
    z_hat = project(stage3.head, encode_speech(stage1.stack, x_speech))
    logits_s = classify_embedding(stage2.teacher, z_hat)
    logits_m = classify_embedding(stage2.teacher, embed_mri(stage2.teacher, x_mri))
    return {"speech_only": softmax(logits_s)[:, 1],
            "mri_only": softmax(logits_m)[:, 1],
            "fusion": softmax(0.5 * (logits_s + logits_m))[:, 1]}


def evaluate_pipeline(paired: Cohort, config: PipelineConfig, stage1: Stage1Result,
                      stage2: Stage2Result, stage3: Stage3Result) -> EvalResult:
    """Score the held-out test split on all three paths, plus the directly
    fine-tuned speech classifier and the logistic baseline for context."""
    split = stage1.split
    xs, ys = _split_features(paired, split, stage1.scaler)
    y_test = ys["test"]
    scores = _path_scores(paired, split.test_ids, stage1, stage2, stage3)

    metrics = {}
    for path in PATHS:
        metrics[path] = metric_report(
            scores[path], y_test, resamples=config.bootstrap_resamples,
            level=config.ci_level, seed=derive_seed(config.seed, f"eval/{path}"))

    finetuned_auc = auc_roc(softmax(speech_logits(stage1.stack, xs["test"]))[:, 1],
                            y_test)
    lr_model = train_lr_baseline(xs["train"], ys["train"],
                                 class_weight_vec=class_weight_vector(ys["train"]))
    baseline_auc = auc_roc(lr_model.scores(xs["test"]), y_test)

    # shared 2-d view of the aligned speech embeddings and the MRI embeddings
    z_hat = project(stage3.head, encode_speech(stage1.stack, xs["test"]))
    z_m = embed_mri(stage2.teacher, stage2.scaler.transform(
        paired.feature_matrix("mri", split.test_ids)))
    coords, explained, _ = pca_2d(np.vstack([z_hat, z_m]))
    modality = ["speech"] * len(split.test_ids) + ["mri"] * len(split.test_ids)

    return EvalResult(metrics=metrics, scores=scores, test_ids=list(split.test_ids),
                      test_labels=y_test, finetuned_speech_auc=finetuned_auc,
                      baseline_auc=baseline_auc, pca_coords=coords,
                      pca_explained=explained, pca_modality=modality,
                      pca_labels=np.concatenate([y_test, y_test]))


def run_pipeline(unlabeled: Cohort, mri_cohort: Cohort, paired: Cohort,
                 config: PipelineConfig, stage1: Stage1Result | None = None,
                 stage2: Stage2Result | None = None) -> PipelineResult:
    """All three stages plus evaluation. Precomputed stage results may be
    injected when a caller (the ablation harness) knows they are unaffected
    by its configuration changes."""
    if stage1 is None:
        stage1 = run_stage1(unlabeled, paired, config)
    if stage2 is None:
        stage2 = run_stage2(mri_cohort, config)
    if teacher_digest(stage2.teacher) != stage2.digest:
        raise FrozenParameterError("injected teacher does not match its digest")
    stage3 = run_stage3(paired, config, stage1, stage2)
    evaluation = evaluate_pipeline(paired, config, stage1, stage2, stage3)
    return PipelineResult(config=config, split=stage1.split, stage1=stage1,
                          stage2=stage2, stage3=stage3, evaluation=evaluation)
