"""modalign: cross-modal knowledge transfer between paired feature cohorts.

A speech encoder is pretrained as a masked autoencoder, an MRI teacher
defines a 128-d embedding space with a frozen linear classifier, and a small
residual projection head aligns speech embeddings into that space — after
which speech alone can be scored by the MRI-trained classifier, and paired
subjects by logit-level fusion.
"""

from .align import (AlignConfig, ProjectionHead, align_loss, align_loss_with_grad,
                    l2_normalize, load_projection_head, project,
                    save_projection_head, train_alignment)
from .baseline import LogisticBaseline, train_lr_baseline
from .checkpoint import (Checkpoint, CheckpointError, digest_params,
                         load_checkpoint, save_checkpoint, verify_checkpoint)
from .data import (LABELS, MRI_DIM, SPEECH_DIM, Cohort, FoldAssignment,
                   SplitAssignment, Standardizer, SubjectRecord, class_weights,
                   class_weight_vector, derive_seed, export_folds, export_split,
                   load_cohort, load_paired, load_split, mixup_batch,
                   one_hot_labels, save_cohort, smooth_labels, stratified_kfold,
                   stratified_split)
from .gradcheck import gradcheck, run_gradient_suite
from .hpo import (Categorical, LogUniform, PrunerState, SearchSpace, TrialPruned,
                  TrialRecord, grid_search_align, random_search, sample_trial,
                  should_prune)
from .inference import (PATHS, ModelBundle, PredictionSet, fusion_scores,
                        infer_fusion, infer_mri_only, infer_speech_only,
                        load_bundle, mri_only_scores, speech_only_scores)
from .metrics import (MetricReport, auc_brute_force, auc_roc, bootstrap_ci,
                      metric_report, pca_2d, roc_points)
from .nn import (BatchNorm, Dense, Dropout, FrozenParameterError, Gelu, Param,
                 Sequential, TrainingDivergedError, freeze_params, log_softmax,
                 make_mlp, soft_cross_entropy, softmax)
from .optim import AdamW, AdamWState, CosineRestartSchedule, adamw_step
from .pipeline import (EvalResult, PipelineConfig, PipelineResult, Stage1Result,
                       Stage2Result, Stage3Result, evaluate_pipeline,
                       run_pipeline, run_stage1, run_stage2, run_stage3)
from .ablation import VARIANTS, run_ablation, run_all_ablations, variant_config
from .speech import (FinetuneConfig, MaeConfig, MaskSpec, SpeechStack,
                     build_speech_stack, encode_speech, finetune_speech,
                     load_speech_stack, mae_loss, mae_loss_with_grad,
                     mask_features, pretrain_mae, save_speech_stack,
                     speech_logits)
from .synthetic import (DEFAULT_COUNTS, SMALL_COUNTS, SyntheticData,
                        SyntheticSpec, generate_synthetic_cohort)
from .teacher import (Teacher, TeacherArchSpec, TeacherConfig, build_teacher,
                      classify_embedding, embed_mri, freeze_teacher, load_teacher,
                      save_teacher, teacher_cv_auc, teacher_digest,
                      teacher_frozen, train_teacher)

__version__ = "0.1.0"
