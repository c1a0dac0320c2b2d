"""Stage 3: the residual projection head, the normalized alignment loss and
its closed-form identities, and the frozen-teacher contract during training."""

import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modalign.align import (AlignConfig, ProjectionHead, align_loss,
                            align_loss_with_grad, l2_normalize, project,
                            train_alignment)
from modalign.checkpoint import CheckpointError
from modalign.nn import FrozenParameterError
from modalign.pipeline import run_stage3
from modalign.teacher import (TeacherArchSpec, build_teacher, freeze_teacher,
                              teacher_digest)

RNG = np.random.default_rng(51)

unit_safe = arrays(np.float64, (4, 6),
                   elements=st.floats(min_value=-10, max_value=10,
                                      allow_nan=False, allow_infinity=False)
                   ).filter(lambda z: np.all(np.linalg.norm(z, axis=1) > 1e-3))


def frozen_teacher(seed=0):
    t = build_teacher(TeacherArchSpec(hidden_widths=[256]), seed=seed)
    digest = freeze_teacher(t)
    return t, digest


def embedding_pairs(n=40, seed=2):
    """Correlated (z_speech, z_mri, y) triples living in 128-d."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(int)
    base = rng.normal(size=(n, 128))
    base[:, 0] += 3.0 * y
    z_speech = base + 0.3 * rng.normal(size=(n, 128))
    z_mri = base + 0.3 * rng.normal(size=(n, 128))
    return z_speech, z_mri, y


# ---------------------------------------------------------------------------
# projection head structure
# ---------------------------------------------------------------------------


def test_zero_initialized_head_is_a_scaled_identity():
    head = ProjectionHead(seed=0)
    z = RNG.normal(size=(5, 128))
    # layer2 starts at zero and the BN running stats are fresh, so the MLP
    # branch contributes nothing: output is exactly 0.1 * z
    np.testing.assert_array_equal(project(head, z), 0.1 * z)


def test_head_architecture_dims():
    head = ProjectionHead(seed=0, hidden=96, dropout_rate=0.6)
    assert head.layer1.w.value.shape == (128, 96)
    assert head.layer2.w.value.shape == (96, 128)
    np.testing.assert_array_equal(head.layer2.w.value, 0.0)
    np.testing.assert_array_equal(head.layer2.b.value, 0.0)
    assert head.architecture() == {"in_dim": 128, "hidden": 96, "out_dim": 128,
                                   "dropout_rate": 0.6, "residual_scale": 0.1}


def test_head_requires_matching_in_out_dims():
    with pytest.raises(ValueError, match="matching in/out"):
        ProjectionHead(in_dim=128, out_dim=64)


def test_head_init_is_seed_deterministic():
    a = ProjectionHead(seed=9)
    b = ProjectionHead(seed=9)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.value, q.value)


# ---------------------------------------------------------------------------
# normalization and the loss identities
# ---------------------------------------------------------------------------


def test_l2_normalize_produces_unit_rows():
    z = RNG.normal(size=(6, 10)) * 50
    u = l2_normalize(z)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)


def test_l2_normalize_names_the_offending_row():
    z = RNG.normal(size=(4, 5))
    z[2] = 0.0
    with pytest.raises(ValueError, match="row 2"):
        l2_normalize(z)


def test_align_loss_zero_on_identical_embeddings():
    z = RNG.normal(size=(8, 128))
    assert align_loss(z, z, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(unit_safe, unit_safe,
       st.floats(min_value=0.01, max_value=100.0),
       st.floats(min_value=0.01, max_value=100.0))
def test_align_loss_scale_invariance(z_hat, z_m, a, b):
    # positive row rescaling of either side cannot move the loss
    base = align_loss(z_hat, z_m, 1.0, 1.0)
    scaled = align_loss(a * z_hat, b * z_m, 1.0, 1.0)
    assert scaled == pytest.approx(base, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(unit_safe, unit_safe,
       st.floats(min_value=0.0, max_value=5.0),
       st.floats(min_value=0.0, max_value=5.0))
def test_align_loss_collapses_to_cosine_identity(z_hat, z_m, lam_mse, lam_cos):
    # on the unit sphere |u-t|^2 = 2 - 2 cos, so the whole loss is
    # (2 lambda_mse + lambda_cos) * mean(1 - cos)
    if lam_mse + lam_cos == 0.0:
        return
    u = z_hat / np.linalg.norm(z_hat, axis=1, keepdims=True)
    t = z_m / np.linalg.norm(z_m, axis=1, keepdims=True)
    one_minus_cos = 1.0 - (u * t).sum(axis=1)
    expected = (2.0 * lam_mse + lam_cos) * one_minus_cos.mean()
    assert align_loss(z_hat, z_m, lam_mse, lam_cos) == pytest.approx(expected, abs=1e-10)


def test_align_loss_antiparallel_attains_the_upper_bound():
    z = RNG.normal(size=(5, 16))
    lam_mse, lam_cos = 1.3, 0.4
    bound = 4.0 * lam_mse + 2.0 * lam_cos
    assert align_loss(z, -z, lam_mse, lam_cos) == pytest.approx(bound, abs=1e-12)
    # and nothing exceeds it
    other = RNG.normal(size=(5, 16))
    assert align_loss(z, other, lam_mse, lam_cos) <= bound + 1e-12


def test_align_loss_grad_matches_finite_difference():
    z_hat = RNG.normal(size=(3, 10))
    z_m = RNG.normal(size=(3, 10))
    _, grad = align_loss_with_grad(z_hat, z_m, 1.0, 1.0)
    h = 1e-6
    for idx in [(0, 0), (1, 5), (2, 9)]:
        up, down = z_hat.copy(), z_hat.copy()
        up[idx] += h
        down[idx] -= h
        numeric = (align_loss(up, z_m, 1, 1) - align_loss(down, z_m, 1, 1)) / (2 * h)
        assert grad[idx] == pytest.approx(numeric, abs=1e-7)


def test_align_loss_input_validation():
    z = RNG.normal(size=(3, 4))
    with pytest.raises(ValueError, match="mismatch"):
        align_loss(z, RNG.normal(size=(2, 4)), 1.0, 1.0)
    with pytest.raises(ValueError, match="non-negative"):
        align_loss(z, z, -1.0, 1.0)
    bad = z.copy()
    bad[1] = 0.0
    with pytest.raises(ValueError, match="row 1"):
        align_loss(bad, z, 1.0, 1.0)


def test_align_config_validation():
    with pytest.raises(ValueError, match="must be positive"):
        AlignConfig(lambda_mse=0.0, lambda_cos=0.0)
    with pytest.raises(ValueError, match="non-negative"):
        AlignConfig(lambda_mse=-0.5)
    with pytest.raises(ValueError, match="epochs"):
        AlignConfig(epochs=201)
    with pytest.raises(ValueError, match="lr"):
        AlignConfig(lr=0.0)


# ---------------------------------------------------------------------------
# training: label blindness, determinism, digest checks
# ---------------------------------------------------------------------------


def test_alignment_training_never_sees_train_labels():
    """The training API takes embedding pairs only; labels exist solely for
    validation early stopping. Enforced at the signature, verified by the
    loss being computable without any labels at all."""
    sig = inspect.signature(train_alignment)
    assert "y_train" not in sig.parameters
    assert "y_val" in sig.parameters  # early stopping only
    sig_loss = inspect.signature(align_loss_with_grad)
    assert set(sig_loss.parameters) == {"z_hat", "z_m", "lambda_mse", "lambda_cos"}


def test_alignment_trajectory_invariant_to_train_label_permutation():
    z_speech, z_mri, y = embedding_pairs()
    teacher, digest = frozen_teacher()
    cfg = AlignConfig(epochs=4, batch_size=16, t0=4, patience=4)
    histories = []
    for permute in (False, True):
        y_train = y[:28].copy()
        if permute:
            y_train = y_train[np.random.default_rng(0).permutation(28)]
        # y_train exists in the caller but has nowhere to go: the training
        # call is identical with or without the permutation
        head = ProjectionHead(seed=1)
        history = train_alignment(head, z_speech[:28], z_mri[:28],
                                  z_speech[28:], y[28:], teacher, cfg, seed=1,
                                  expected_teacher_digest=digest)
        histories.append((tuple(history.train_loss), tuple(history.val_metric)))
    assert histories[0] == histories[1]


def test_alignment_improves_loss_and_respects_digests():
    z_speech, z_mri, y = embedding_pairs()
    teacher, digest = frozen_teacher()
    head = ProjectionHead(seed=0)
    cfg = AlignConfig(epochs=12, batch_size=16, t0=12, patience=12, lr=3e-3)
    history = train_alignment(head, z_speech[:28], z_mri[:28], z_speech[28:],
                              y[28:], teacher, cfg, seed=0,
                              expected_teacher_digest=digest,
                              zm_val=z_mri[28:])
    assert teacher_digest(teacher) == digest
    assert min(history.train_loss) < history.train_loss[0]
    # ties break toward lower loss, but the kept epoch is always a maximizer
    assert history.val_metric[history.best_epoch] == max(history.val_metric)


def test_alignment_rejects_stale_teacher_digest():
    z_speech, z_mri, y = embedding_pairs()
    teacher, _ = frozen_teacher()
    head = ProjectionHead(seed=0)
    with pytest.raises(CheckpointError, match="does not match"):
        train_alignment(head, z_speech[:28], z_mri[:28], z_speech[28:], y[28:],
                        teacher, AlignConfig(epochs=1), seed=0,
                        expected_teacher_digest="0" * 64)


def test_alignment_is_deterministic():
    z_speech, z_mri, y = embedding_pairs()
    teacher, digest = frozen_teacher()
    cfg = AlignConfig(epochs=4, batch_size=16, t0=4, patience=4)
    outs = []
    for _ in range(2):
        head = ProjectionHead(seed=2)
        train_alignment(head, z_speech[:28], z_mri[:28], z_speech[28:], y[28:],
                        teacher, cfg, seed=2, expected_teacher_digest=digest)
        outs.append(project(head, z_speech[28:]))
    np.testing.assert_array_equal(outs[0], outs[1])


def test_early_stopping_patience_bounds_the_run():
    z_speech, z_mri, y = embedding_pairs()
    teacher, digest = frozen_teacher()
    head = ProjectionHead(seed=3)
    cfg = AlignConfig(epochs=100, batch_size=16, t0=10, patience=3)
    history = train_alignment(head, z_speech[:28], z_mri[:28], z_speech[28:],
                              y[28:], teacher, cfg, seed=3,
                              expected_teacher_digest=digest)
    # the 6v6 validation AUC saturates fast; patience=3 must cut the run short
    assert history.stopped_epoch < 99
    assert len(history.train_loss) == history.stopped_epoch + 1


# ---------------------------------------------------------------------------
# full stage-3 runs (shared fixture)
# ---------------------------------------------------------------------------


def test_stage3_leaves_frozen_stages_untouched(tiny_data, stages):
    cfg, s1, s2, s3 = stages
    # digests recomputed now must equal the ones taken at freeze time
    assert teacher_digest(s2.teacher) == s2.digest
    from modalign.checkpoint import digest_params
    enc = digest_params([(p.name, p.value) for p in s1.stack.encoder.parameters()])
    assert enc == s1.encoder_digest
    with pytest.raises(ValueError):
        s2.teacher.projection.parameters()[0].value[0, 0] = 1.0
    with pytest.raises(ValueError):
        s1.stack.encoder.parameters()[0].value[0, 0] = 1.0


def test_stage3_detects_a_mutated_teacher(tiny_data, stages):
    import copy

    cfg, s1, s2, _ = stages
    tampered = copy.deepcopy(s2)
    p = tampered.teacher.projection.parameters()[0]
    p.value = p.value.copy()  # thaw the deep copy
    p.value[0, 0] += 1.0
    with pytest.raises(CheckpointError, match="does not match"):
        run_stage3(tiny_data.paired_cohort, cfg, s1, tampered)


def test_stage3_head_output_shape(stages):
    _, s1, _, s3 = stages
    from modalign.speech import encode_speech
    z = encode_speech(s1.stack, np.zeros((3, 209)))
    assert project(s3.head, z).shape == (3, 128)
