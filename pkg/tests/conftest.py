"""Shared fixtures: one tiny synthetic draw plus one fast three-stage fit.

Both are session-scoped because generating 6144-wide MRI features and
fitting the teacher dominate the unit-test wall time. Tests must treat the
fixture objects as read-only; anything that mutates builds its own copy.
"""

import pytest

from modalign.align import AlignConfig
from modalign.pipeline import PipelineConfig, run_stage1, run_stage2, run_stage3
from modalign.speech import FinetuneConfig, MaeConfig
from modalign.synthetic import SyntheticSpec, generate_synthetic_cohort
from modalign.teacher import TeacherConfig

# 40 paired subjects -> split 28/6/6 under (0.70, 0.15, 0.15)
TINY_COUNTS = {
    "unlabeled_speech": 400,
    "mri_only_cn": 70, "mri_only_mci": 50,
    "paired_cn": 28, "paired_mci": 12,
}


def fast_config(seed: int = 3) -> PipelineConfig:
    """Trimmed epochs everywhere; the tiny cohorts separate easily anyway."""
    return PipelineConfig(
        seed=seed,
        mae=MaeConfig(epochs=6, batch_size=128, t0=6, patience=6),
        finetune=FinetuneConfig(epochs=8, t0=8, patience=8),
        teacher=TeacherConfig(epochs=10, t0=10, patience=10),
        align=AlignConfig(epochs=8, t0=8, patience=8),
        bootstrap_resamples=100,
    )


@pytest.fixture(scope="session")
def tiny_data():
    spec = SyntheticSpec(seed=7, counts=dict(TINY_COUNTS), latent_dim=8)
    return generate_synthetic_cohort(spec)


@pytest.fixture(scope="session")
def stages(tiny_data):
    """(config, stage1, stage2, stage3) of one fast end-to-end fit.

    The encoder and teacher come back frozen, as in a real run.
    """
    cfg = fast_config()
    s1 = run_stage1(tiny_data.unlabeled_speech, tiny_data.paired_cohort, cfg)
    s2 = run_stage2(tiny_data.mri_cohort, cfg)
    s3 = run_stage3(tiny_data.paired_cohort, cfg, s1, s2)
    return cfg, s1, s2, s3
