"""Deployment-side scoring along three paths: speech-only (encoder +
projection head + teacher classifier, no MRI at test time), MRI-only
(teacher), and fusion (average of the two classifiers' logits).

MCI probability is the softmax column for class 1 throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .align import ProjectionHead, load_projection_head, project
from .checkpoint import CheckpointError, digest_params
from .data import LABEL_TO_INDEX, Cohort, Standardizer
from .nn import as_matrix, softmax
from .speech import SpeechStack, encode_speech, load_speech_stack
from .teacher import (Teacher, classify_embedding, embed_mri, load_teacher,
                      teacher_digest)

PATHS = ("speech_only", "mri_only", "fusion")


def encoder_digest(stack: SpeechStack) -> str:
    return digest_params([(p.name, p.value) for p in stack.encoder.parameters()])


@dataclass
class ModelBundle:
    """Everything needed to score a subject on any path, with the digests the
    projection head was trained against so staleness is detectable."""

    stack: SpeechStack
    speech_scaler: Standardizer
    teacher: Teacher
    mri_scaler: Standardizer
    head: ProjectionHead
    teacher_ref: str = ""
    encoder_ref: str = ""

    def verify(self) -> None:
        if self.teacher_ref and teacher_digest(self.teacher) != self.teacher_ref:
            raise CheckpointError(
                "teacher parameters do not match the digest recorded when the "
                "projection head was trained")
        if self.encoder_ref and encoder_digest(self.stack) != self.encoder_ref:
            raise CheckpointError(
                "speech encoder does not match the digest recorded when the "
                "projection head was trained")


def load_bundle(speech_path, teacher_path, head_path) -> ModelBundle:
    """Load the three checkpoints and verify the head's recorded digests."""
    stack, speech_scaler, _ = load_speech_stack(speech_path)
    teacher, mri_scaler, _ = load_teacher(teacher_path)
    head, head_manifest = load_projection_head(head_path)
    refs = head_manifest.get("refs") or {}
    if "teacher" not in refs or "encoder" not in refs:
        raise CheckpointError(
            "projection-head checkpoint lacks teacher/encoder digests; "
            "retrain the alignment stage")
    bundle = ModelBundle(stack=stack, speech_scaler=speech_scaler,
                         teacher=teacher, mri_scaler=mri_scaler, head=head,
                         teacher_ref=refs["teacher"], encoder_ref=refs["encoder"])
    bundle.verify()
    return bundle


# ---------------------------------------------------------------------------
# Logits and scores
# ---------------------------------------------------------------------------


def _speech_logits(bundle: ModelBundle, x_speech: np.ndarray) -> np.ndarray:
    z = encode_speech(bundle.stack, bundle.speech_scaler.transform(as_matrix(x_speech)))
    return classify_embedding(bundle.teacher, project(bundle.head, z))


def _mri_logits(bundle: ModelBundle, x_mri: np.ndarray) -> np.ndarray:
    z = embed_mri(bundle.teacher, bundle.mri_scaler.transform(as_matrix(x_mri, "x_mri")))
    return classify_embedding(bundle.teacher, z)


def speech_only_scores(bundle: ModelBundle, x_speech: np.ndarray) -> np.ndarray:
    """MCI probability from speech alone, routed through the teacher's head."""
    return softmax(_speech_logits(bundle, x_speech))[:, 1]


def mri_only_scores(bundle: ModelBundle, x_mri: np.ndarray) -> np.ndarray:
    return softmax(_mri_logits(bundle, x_mri))[:, 1]


def fusion_scores(bundle: ModelBundle, x_speech: np.ndarray,
                  x_mri: np.ndarray) -> np.ndarray:
    """Average the two paths' logits, then softmax — not an average of
    probabilities, so a confident path can dominate an uncertain one."""
    ls = _speech_logits(bundle, x_speech)
    lm = _mri_logits(bundle, x_mri)
    if ls.shape != lm.shape:
        raise ValueError("speech and MRI batches differ in size")
    return softmax(0.5 * (ls + lm))[:, 1]


# ---------------------------------------------------------------------------
# Prediction sets
# ---------------------------------------------------------------------------


@dataclass
class PredictionSet:
    """Per-subject scores for one inference path, in subject-id order."""

    subject_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray  # -1 where unknown
    path: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        n = len(self.subject_ids)
        if self.scores.shape != (n,) or self.labels.shape != (n,):
            raise ValueError("subject_ids, scores, and labels must align")
        if len(set(self.subject_ids)) != n:
            raise ValueError("duplicate subject ids")
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}, got {self.path!r}")
        if n and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("scores must be probabilities in [0, 1]")
        if not set(np.unique(self.labels).tolist()) <= {-1, 0, 1}:
            raise ValueError("labels must be 0, 1, or -1 for unknown")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "score", "label", "path"])
            for sid, score, label in zip(self.subject_ids, self.scores, self.labels):
                writer.writerow([sid, repr(float(score)), int(label), self.path])

    @classmethod
    def from_csv(cls, path) -> "PredictionSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["subject_id", "score", "label", "path"]:
            raise ValueError(f"{path}: expected header subject_id,score,label,path")
        body = rows[1:]
        if not body:
            raise ValueError(f"{path}: no prediction rows")
        paths = {r[3] for r in body}
        if len(paths) != 1:
            raise ValueError(f"{path}: mixed inference paths {sorted(paths)}")
        return cls(subject_ids=[r[0] for r in body],
                   scores=np.array([float(r[1]) for r in body]),
                   labels=np.array([int(r[2]) for r in body]),
                   path=body[0][3])


def _labels_or_unknown(cohort: Cohort, ids: list[str]) -> np.ndarray:
    by_id = cohort.by_id()
    out = np.full(len(ids), -1, dtype=int)
    for i, sid in enumerate(ids):
        label = by_id[sid].label
        if label is not None:
            out[i] = LABEL_TO_INDEX[label]
    return out


def infer_speech_only(bundle: ModelBundle, cohort: Cohort,
                      ids: list[str] | None = None) -> PredictionSet:
    """Score subjects using speech features only; MRI data never touched."""
    ids = list(ids) if ids is not None else [r.subject_id for r in cohort.records]
    x = cohort.feature_matrix("speech", ids)
    return PredictionSet(subject_ids=ids, scores=speech_only_scores(bundle, x),
                         labels=_labels_or_unknown(cohort, ids), path="speech_only")


def infer_mri_only(bundle: ModelBundle, cohort: Cohort,
                   ids: list[str] | None = None) -> PredictionSet:
    ids = list(ids) if ids is not None else [r.subject_id for r in cohort.records]
    x = cohort.feature_matrix("mri", ids)
    return PredictionSet(subject_ids=ids, scores=mri_only_scores(bundle, x),
                         labels=_labels_or_unknown(cohort, ids), path="mri_only")


def infer_fusion(bundle: ModelBundle, cohort: Cohort,
                 ids: list[str] | None = None) -> PredictionSet:
    ids = list(ids) if ids is not None else [r.subject_id for r in cohort.records]
    xs = cohort.feature_matrix("speech", ids)
    xm = cohort.feature_matrix("mri", ids)
    return PredictionSet(subject_ids=ids, scores=fusion_scores(bundle, xs, xm),
                         labels=_labels_or_unknown(cohort, ids), path="fusion")
