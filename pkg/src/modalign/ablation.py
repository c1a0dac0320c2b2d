"""Ablation harness: re-run the pipeline with exactly one knob changed and
report speech-only / fusion AUC against the unmodified configuration.

Every variant shares the default run's split. Stage-1 and Stage-2 results
are reused whenever a variant cannot affect them (only the from-scratch
variant retrains Stage 1; the teacher is identical for all variants), which
also guarantees the default variant reproduces the main run bit-exactly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

from .data import Cohort
from .metrics import MetricReport
from .pipeline import (PipelineConfig, PipelineResult, Stage1Result, Stage2Result,
                       run_pipeline, run_stage1, run_stage2)

VARIANTS = ("default", "mse_only", "cosine_only", "larger_head_128",
            "no_pretrain", "no_dropout")


def variant_config(variant: str, base: PipelineConfig) -> PipelineConfig:
    """Copy of the base configuration with the variant's single modification."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    cfg = copy.deepcopy(base)
    if variant == "mse_only":
        cfg.align.lambda_cos = 0.0
    elif variant == "cosine_only":
        cfg.align.lambda_mse = 0.0
    elif variant == "larger_head_128":
        cfg.head_hidden = 128
    elif variant == "no_pretrain":
        cfg.pretrain_enabled = False
    elif variant == "no_dropout":
        cfg.head_dropout = 0.0
    return cfg


def run_ablation(variant: str, base_config: PipelineConfig, unlabeled: Cohort,
                 mri_cohort: Cohort, paired: Cohort,
                 stage1_cache: Stage1Result | None = None,
                 stage2_cache: Stage2Result | None = None,
                 ) -> tuple[MetricReport, MetricReport, PipelineResult]:
    """One variant end to end; returns (speech-only report, fusion report, run).

    Caches may only be passed for stages the variant leaves untouched; the
    harness below arranges that.
    """
    cfg = variant_config(variant, base_config)
    stage1 = None if variant == "no_pretrain" else stage1_cache
    result = run_pipeline(unlabeled, mri_cohort, paired, cfg,
                          stage1=stage1, stage2=stage2_cache)
    metrics = result.evaluation.metrics
    return metrics["speech_only"], metrics["fusion"], result


@dataclass
class AblationRow:
    variant: str
    status: str  # ok | failed
    speech_auc: float | None = None
    fusion_auc: float | None = None
    delta_fusion: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"variant": self.variant, "status": self.status,
                "speech_auc": self.speech_auc, "fusion_auc": self.fusion_auc,
                "delta_fusion": self.delta_fusion, "error": self.error}


def run_all_ablations(base_config: PipelineConfig, unlabeled: Cohort,
                      mri_cohort: Cohort, paired: Cohort) -> list[AblationRow]:
    """All six variants on the shared split; a failing variant is recorded
    and the rest continue. Rows carry fusion deltas against the default."""
    stage1 = run_stage1(unlabeled, paired, base_config)
    stage2 = run_stage2(mri_cohort, base_config)
    rows = []
    for variant in VARIANTS:
        try:
            speech, fusion, _ = run_ablation(
                variant, base_config, unlabeled, mri_cohort, paired,
                stage1_cache=stage1, stage2_cache=stage2)
            rows.append(AblationRow(variant=variant, status="ok",
                                    speech_auc=speech.auc, fusion_auc=fusion.auc))
        except Exception as exc:  # keep remaining variants running
            rows.append(AblationRow(variant=variant, status="failed",
                                    error=f"{type(exc).__name__}: {exc}"))
    default = next(r for r in rows if r.variant == "default")
    if default.status == "ok":
        for row in rows:
            if row.status == "ok":
                row.delta_fusion = row.fusion_auc - default.fusion_auc
    return rows
