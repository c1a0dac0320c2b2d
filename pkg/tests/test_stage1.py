"""Stage 1: feature masking, the reconstruction objective, pretraining, and
supervised fine-tuning of the speech stack."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalign.checkpoint import digest_params
from modalign.data import Standardizer, class_weight_vector, round_half_up
from modalign.metrics import auc_roc
from modalign.nn import softmax
from modalign.speech import (FinetuneConfig, MaeConfig, MaskSpec, build_speech_stack,
                             encode_speech, finetune_speech, mae_loss,
                             mae_loss_with_grad, mask_features, pretrain_mae,
                             speech_logits)

RNG = np.random.default_rng(31)


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------


def test_mask_count_default_ratio_on_209_features():
    assert MaskSpec(mask_ratio=0.3).count_for(209) == round_half_up(0.3 * 209) == 63


def test_mask_count_rejects_degenerate_ratios():
    # 0.001 * 209 rounds to 0 masked; 0.999 * 209 rounds to all 209
    with pytest.raises(ValueError, match="at least 1 masked and 1 visible"):
        MaskSpec(mask_ratio=0.001).count_for(209)
    with pytest.raises(ValueError, match="at least 1 masked and 1 visible"):
        MaskSpec(mask_ratio=0.999).count_for(209)
    with pytest.raises(ValueError, match="mask_ratio must be in"):
        MaskSpec(mask_ratio=0.0)
    with pytest.raises(ValueError, match="mask_ratio must be in"):
        MaskSpec(mask_ratio=1.0)


def test_mask_features_exact_count_and_fill():
    x = RNG.normal(size=(40, 209)) + 10.0  # shifted so 0 marks masked cells
    spec = MaskSpec(mask_ratio=0.3)
    masked, mask = mask_features(x, spec, np.random.default_rng(2))
    assert mask.sum(axis=1).tolist() == [63] * 40
    np.testing.assert_array_equal(masked[mask], 0.0)
    np.testing.assert_array_equal(masked[~mask], x[~mask])


def test_mask_features_deterministic_per_rng_state():
    x = RNG.normal(size=(8, 50))
    _, m1 = mask_features(x, MaskSpec(0.3), np.random.default_rng(7))
    _, m2 = mask_features(x, MaskSpec(0.3), np.random.default_rng(7))
    np.testing.assert_array_equal(m1, m2)
    # same rng advanced: a fresh draw per call
    rng = np.random.default_rng(7)
    _, a = mask_features(x, MaskSpec(0.3), rng)
    _, b = mask_features(x, MaskSpec(0.3), rng)
    assert not np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=3, max_value=64),
       st.floats(min_value=0.05, max_value=0.9),
       st.integers(min_value=0, max_value=10))
def test_mask_features_never_fully_masks_or_spares_a_row(d, ratio, seed):
    spec = MaskSpec(mask_ratio=ratio)
    try:
        m = spec.count_for(d)
    except ValueError:
        return  # degenerate (ratio, d) combination correctly rejected
    x = np.ones((5, d))
    _, mask = mask_features(x, spec, np.random.default_rng(seed))
    counts = mask.sum(axis=1)
    assert np.all(counts == m)
    assert 0 < m < d


# ---------------------------------------------------------------------------
# reconstruction loss
# ---------------------------------------------------------------------------


def test_mae_loss_zero_at_perfect_reconstruction():
    x = RNG.normal(size=(6, 20))
    _, mask = mask_features(x, MaskSpec(0.3), np.random.default_rng(0))
    # the mse term is exactly 0; cos(x, x) rounds to 1 +/- one ulp
    assert mae_loss(x, x, mask, lambda_c=0.5) == pytest.approx(0.0, abs=1e-12)
    assert mae_loss(x, x, mask, lambda_c=0.0) == 0.0


def test_mae_loss_masked_mse_term_oracle():
    x = RNG.normal(size=(4, 10))
    x_hat = RNG.normal(size=(4, 10))
    _, mask = mask_features(x, MaskSpec(0.3), np.random.default_rng(1))
    expected = np.mean([((x_hat[i] - x[i])[mask[i]] ** 2).mean() for i in range(4)])
    assert mae_loss(x, x_hat, mask, lambda_c=0.0) == pytest.approx(expected, abs=1e-12)


def test_mae_loss_cosine_term_antiparallel():
    x = RNG.normal(size=(3, 8))
    mask = np.zeros((3, 8), dtype=bool)
    mask[:, 0] = True
    # reconstruction = -x: mse contributes (2 x_0)^2 per row, cosine exactly 2
    lam = 0.7
    expected_mse = np.mean((2.0 * x[:, 0]) ** 2)
    assert mae_loss(x, -x, mask, lambda_c=lam) == pytest.approx(
        expected_mse + lam * 2.0, abs=1e-10)


def test_mae_loss_ignores_unmasked_error_in_mse_term():
    x = np.zeros((2, 6))
    x_hat = np.zeros((2, 6))
    mask = np.zeros((2, 6), dtype=bool)
    mask[:, 0] = True
    x_hat[:, 3] = 100.0  # unmasked position: invisible to the mse term
    assert mae_loss(x, x_hat, mask, lambda_c=0.0) == 0.0


def test_mae_loss_zero_norm_rows_only_fail_with_cosine_active():
    x = np.zeros((2, 5))
    x_hat = np.ones((2, 5))
    mask = np.ones((2, 5), dtype=bool)
    mask[:, -1] = False
    assert mae_loss(x, x_hat, mask, lambda_c=0.0) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero norm"):
        mae_loss(x, x_hat, mask, lambda_c=0.5)


def test_mae_loss_requires_a_masked_position_per_row():
    x = RNG.normal(size=(2, 4))
    mask = np.zeros((2, 4), dtype=bool)
    mask[0, 1] = True  # second row has nothing masked
    with pytest.raises(ValueError, match="at least one masked"):
        mae_loss(x, x, mask, lambda_c=0.0)


def test_mae_grad_matches_finite_difference():
    x = RNG.normal(size=(3, 7))
    x_hat = RNG.normal(size=(3, 7))
    _, mask = mask_features(x, MaskSpec(0.4), np.random.default_rng(3))
    _, grad = mae_loss_with_grad(x, x_hat, mask, lambda_c=0.5)
    h = 1e-6
    for idx in [(0, 0), (1, 3), (2, 6)]:
        bumped = x_hat.copy()
        bumped[idx] += h
        dipped = x_hat.copy()
        dipped[idx] -= h
        numeric = (mae_loss(x, bumped, mask, 0.5) - mae_loss(x, dipped, mask, 0.5)) / (2 * h)
        assert grad[idx] == pytest.approx(numeric, abs=1e-6)


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def pool_200():
    # latent rank-3 structure so the autoencoder has something to learn
    rng = np.random.default_rng(8)
    u = rng.normal(size=(200, 3))
    return u @ rng.normal(size=(3, 40)) + 0.1 * rng.normal(size=(200, 40))


def test_pretrain_improves_heldout_reconstruction():
    stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=0)
    cfg = MaeConfig(epochs=15, batch_size=64, t0=15, patience=15)
    scaler, history = pretrain_mae(pool_200(), stack, cfg, seed=0)
    assert min(history.val_loss) < history.val_loss[0]
    assert history.best_epoch == int(np.argmin(history.val_loss))
    assert isinstance(scaler, Standardizer)


def test_pretrain_is_deterministic():
    cfg = MaeConfig(epochs=4, batch_size=64, t0=4, patience=4)
    pool = pool_200()
    runs = []
    for _ in range(2):
        stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=1)
        _, history = pretrain_mae(pool, stack, cfg, seed=1)
        runs.append((history.val_loss, encode_speech(stack, pool[:5])))
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


def test_pretrain_epoch_callback_sees_every_epoch():
    stack = build_speech_stack(input_dim=40, hidden=(16,), latent=4, seed=0)
    seen = []
    cfg = MaeConfig(epochs=3, batch_size=64, t0=3, patience=3)
    _, history = pretrain_mae(pool_200(), stack, cfg, seed=0,
                              epoch_callback=lambda e, v: seen.append((e, v)))
    assert [e for e, _ in seen] == [0, 1, 2]
    assert [v for _, v in seen] == history.val_loss


def test_pretrain_callback_can_abort():
    class Abort(Exception):
        pass

    def cb(epoch, _val):
        if epoch == 1:
            raise Abort

    stack = build_speech_stack(input_dim=40, hidden=(16,), latent=4, seed=0)
    with pytest.raises(Abort):
        pretrain_mae(pool_200(), stack, MaeConfig(epochs=5, batch_size=64),
                     seed=0, epoch_callback=cb)


def test_pretrain_rejects_tiny_pools():
    stack = build_speech_stack(input_dim=4, hidden=(3,), latent=2, seed=0)
    with pytest.raises(ValueError, match="too small"):
        pretrain_mae(np.ones((5, 4)), stack, MaeConfig(epochs=1), seed=0)


def test_mae_config_validation():
    with pytest.raises(ValueError, match="epochs"):
        MaeConfig(epochs=0)
    with pytest.raises(ValueError, match="epochs"):
        MaeConfig(epochs=201)
    with pytest.raises(ValueError, match="lr"):
        MaeConfig(lr=0.0)
    with pytest.raises(ValueError, match="lambda_c"):
        MaeConfig(lambda_c=-0.1)
    with pytest.raises(ValueError, match="val_fraction"):
        MaeConfig(val_fraction=0.5)


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def separable_speech(n=80, d=40, seed=10):
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 3 == 0).astype(int)  # ~1/3 positive, imbalanced
    x = rng.normal(size=(n, d))
    x[:, 0] += 4.0 * y
    return x, y


def test_finetune_learns_separable_labels():
    x, y = separable_speech()
    stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=2)
    cfg = FinetuneConfig(epochs=30, batch_size=16, lr_head=3e-3, lr_encoder=3e-4,
                         t0=30, patience=30)
    history = finetune_speech(stack, x[:60], y[:60], x[60:], y[60:],
                              class_weight_vector(y[:60]), cfg, seed=2)
    assert max(history.val_metric) >= 0.9
    scores = softmax(speech_logits(stack, x[60:]))[:, 1]
    assert auc_roc(scores, y[60:]) >= 0.9


def test_finetune_never_touches_the_decoder():
    x, y = separable_speech()
    stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=3)
    decoder_before = digest_params([(p.name, p.value.copy())
                                    for p in stack.decoder.parameters()])
    encoder_before = digest_params([(p.name, p.value.copy())
                                    for p in stack.encoder.parameters()])
    cfg = FinetuneConfig(epochs=3, batch_size=16, t0=3, patience=3)
    finetune_speech(stack, x[:60], y[:60], x[60:], y[60:],
                    class_weight_vector(y[:60]), cfg, seed=3)
    decoder_after = digest_params([(p.name, p.value) for p in stack.decoder.parameters()])
    encoder_after = digest_params([(p.name, p.value) for p in stack.encoder.parameters()])
    assert decoder_after == decoder_before  # decoder is pretraining-only
    assert encoder_after != encoder_before  # encoder does train


def test_finetune_is_deterministic():
    x, y = separable_speech()
    cfg = FinetuneConfig(epochs=4, batch_size=16, t0=4, patience=4)
    losses = []
    for _ in range(2):
        stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=4)
        history = finetune_speech(stack, x[:60], y[:60], x[60:], y[60:],
                                  class_weight_vector(y[:60]), cfg, seed=4)
        losses.append((tuple(history.train_loss), tuple(history.val_metric)))
    assert losses[0] == losses[1]


def test_finetune_mixup_zero_differs_from_default():
    x, y = separable_speech()
    histories = {}
    for alpha in (0.0, 0.3):
        stack = build_speech_stack(input_dim=40, hidden=(32,), latent=8, seed=5)
        cfg = FinetuneConfig(epochs=3, batch_size=16, t0=3, patience=3,
                             mixup_alpha=alpha)
        histories[alpha] = finetune_speech(
            stack, x[:60], y[:60], x[60:], y[60:],
            class_weight_vector(y[:60]), cfg, seed=5).train_loss
    assert histories[0.0] != histories[0.3]  # mixup genuinely changes the batches


def test_finetune_requires_both_classes():
    x, y = separable_speech()
    stack = build_speech_stack(input_dim=40, hidden=(16,), latent=4, seed=0)
    with pytest.raises(ValueError, match="both classes"):
        finetune_speech(stack, x[:10], np.zeros(10, dtype=int), x[60:], y[60:],
                        np.array([1.0, 1.0]), FinetuneConfig(epochs=1), seed=0)


def test_finetune_config_validation():
    with pytest.raises(ValueError, match="mixup_alpha"):
        FinetuneConfig(mixup_alpha=-0.1)
    with pytest.raises(ValueError, match="label_smoothing"):
        FinetuneConfig(label_smoothing=1.0)
    with pytest.raises(ValueError, match="learning rates"):
        FinetuneConfig(lr_head=0.0)
    with pytest.raises(ValueError, match="epochs"):
        FinetuneConfig(epochs=500)


def test_stack_dims_and_parameter_inventory():
    stack = build_speech_stack()  # the real geometry: 209 -> 256 -> 128
    assert stack.input_dim == 209 and stack.hidden == (256,) and stack.latent == 128
    z = encode_speech(stack, RNG.normal(size=(3, 209)))
    assert z.shape == (3, 128)
    assert speech_logits(stack, RNG.normal(size=(3, 209))).shape == (3, 2)
    # encoder and decoder mirror each other's layer widths
    enc_shapes = [p.value.shape for p in stack.encoder.parameters()]
    dec_shapes = [p.value.shape for p in stack.decoder.parameters()]
    assert enc_shapes == [(209, 256), (256,), (256, 128), (128,)]
    assert dec_shapes == [(128, 256), (256,), (256, 209), (209,)]
