"""Synthetic paired speech/MRI cohorts with a shared low-dimensional latent.

Each subject has a latent u whose class mean sits at +/- (separation/2) along
the first axis; feature vectors are u pushed through fixed random linear maps
plus iid noise, so cross-modal structure is real and a 128-d embedding of
either modality can separate the classes. Paired subjects share one u across
modalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, SubjectRecord, derive_seed

# unlabeled speech pool / MRI-only cohort / paired cohort sizes
DEFAULT_COUNTS = {
    "unlabeled_speech": 14235,
    "mri_only_cn": 677, "mri_only_mci": 551,
    "paired_cn": 187, "paired_mci": 79,
}
SMALL_COUNTS = {
    "unlabeled_speech": 1000,
    "mri_only_cn": 220, "mri_only_mci": 180,
    "paired_cn": 84, "paired_mci": 36,
}


@dataclass
class SyntheticSpec:
    """Shape and difficulty knobs for one synthetic data draw."""

    seed: int = 0
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    latent_dim: int = 16
    class_separation: float = 6.0
    noise_sigma_speech: float = 0.5
    noise_sigma_mri: float = 0.5
    unlabeled_dispersion: float = 1.5
    speech_dim: int = 209
    mri_dim: int = 6144

    @classmethod
    def small(cls, seed: int = 0, **overrides) -> "SyntheticSpec":
        return cls(seed=seed, counts=dict(SMALL_COUNTS), **overrides)

    def validate(self) -> None:
        required = set(DEFAULT_COUNTS)
        if set(self.counts) != required:
            raise ValueError(f"counts must have keys {sorted(required)}")
        for key, value in self.counts.items():
            if int(value) < 0:
                raise ValueError(f"count {key}={value} must be non-negative")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.class_separation < 0:
            raise ValueError("class_separation must be non-negative")
        if self.noise_sigma_speech <= 0 or self.noise_sigma_mri <= 0:
            raise ValueError("noise sigmas must be positive")
        if min(self.speech_dim, self.mri_dim) < 2:
            raise ValueError("feature dims must be at least 2")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "counts": dict(self.counts),
            "latent_dim": self.latent_dim,
            "class_separation": self.class_separation,
            "noise_sigma_speech": self.noise_sigma_speech,
            "noise_sigma_mri": self.noise_sigma_mri,
            "unlabeled_dispersion": self.unlabeled_dispersion,
            "speech_dim": self.speech_dim, "mri_dim": self.mri_dim,
        }


@dataclass
class SyntheticData:
    """The three cohorts produced by one draw, plus the maps that made them."""

    unlabeled_speech: Cohort
    mri_cohort: Cohort
    paired_cohort: Cohort
    spec: SyntheticSpec
    a_speech: np.ndarray  # (latent_dim, speech_dim) mixing map
    a_mri: np.ndarray


def generate_synthetic_cohort(spec: SyntheticSpec) -> SyntheticData:
    """Draw the unlabeled speech pool, the MRI-only cohort, and the paired cohort.

    The two modality mixing matrices are drawn once from the spec seed, so
    every cohort lives in the same feature geometry. The unlabeled pool mixes
    both class means with a broader latent dispersion, mimicking pretraining
    data that is wider than the labeled cohorts.
    """
    spec.validate()
    map_rng = np.random.default_rng(derive_seed(spec.seed, "synthetic/maps"))
    # 1/sqrt(latent_dim) keeps per-feature variance O(1) regardless of width
    a_speech = map_rng.normal(size=(spec.latent_dim, spec.speech_dim)) / np.sqrt(spec.latent_dim)
    a_mri = map_rng.normal(size=(spec.latent_dim, spec.mri_dim)) / np.sqrt(spec.latent_dim)
    shift = spec.class_separation / 2.0

    def latents(rng, n, mean_shift, dispersion=1.0):
        u = dispersion * rng.normal(size=(n, spec.latent_dim))
        u[:, 0] += mean_shift
        return u

    def render(u, mat, sigma, rng):
        return u @ mat + sigma * rng.normal(size=(u.shape[0], mat.shape[1]))

    # --- unlabeled speech pool: class-mean mixture, broader spread ----------
    rng_u = np.random.default_rng(derive_seed(spec.seed, "synthetic/unlabeled"))
    n_u = int(spec.counts["unlabeled_speech"])
    signs = np.where(rng_u.random(n_u) < 0.5, -1.0, 1.0)
    u_pool = latents(rng_u, n_u, 0.0, dispersion=spec.unlabeled_dispersion)
    u_pool[:, 0] += signs * shift
    x_pool = render(u_pool, a_speech, spec.noise_sigma_speech, rng_u)
    unlabeled = Cohort(
        [SubjectRecord(f"U{i:05d}", None, speech=x_pool[i]) for i in range(n_u)],
        speech_dim=spec.speech_dim, mri_dim=spec.mri_dim)

    # --- MRI-only cohort -----------------------------------------------------
    rng_m = np.random.default_rng(derive_seed(spec.seed, "synthetic/mri"))
    n_cn, n_mci = int(spec.counts["mri_only_cn"]), int(spec.counts["mri_only_mci"])
    u_m = np.vstack([latents(rng_m, n_cn, -shift), latents(rng_m, n_mci, +shift)])
    x_m = render(u_m, a_mri, spec.noise_sigma_mri, rng_m)
    mri_cohort = Cohort(
        [SubjectRecord(f"M{i:05d}", "CN" if i < n_cn else "MCI", mri=x_m[i])
         for i in range(n_cn + n_mci)],
        speech_dim=spec.speech_dim, mri_dim=spec.mri_dim)

    # --- paired cohort: one latent per subject, both modalities --------------
    rng_p = np.random.default_rng(derive_seed(spec.seed, "synthetic/paired"))
    p_cn, p_mci = int(spec.counts["paired_cn"]), int(spec.counts["paired_mci"])
    u_p = np.vstack([latents(rng_p, p_cn, -shift), latents(rng_p, p_mci, +shift)])
    xs = render(u_p, a_speech, spec.noise_sigma_speech, rng_p)
    xm = render(u_p, a_mri, spec.noise_sigma_mri, rng_p)
    paired = Cohort(
        [SubjectRecord(f"P{i:05d}", "CN" if i < p_cn else "MCI",
                       speech=xs[i], mri=xm[i])
         for i in range(p_cn + p_mci)],
        speech_dim=spec.speech_dim, mri_dim=spec.mri_dim)

    return SyntheticData(unlabeled_speech=unlabeled, mri_cohort=mri_cohort,
                         paired_cohort=paired, spec=spec,
                         a_speech=a_speech, a_mri=a_mri)
