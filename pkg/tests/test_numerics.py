"""Layer forwards against closed-form oracles, and every architecture's
backward against central finite differences."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf as scipy_erf

from modalign import nn, optim
from modalign.gradcheck import gradcheck, run_gradient_suite, standard_probes
from modalign.nn import (BatchNorm, Dense, Dropout, FrozenParameterError, Gelu,
                         Param, Sequential, gelu, log_softmax, make_mlp, one_hot,
                         soft_cross_entropy, soft_cross_entropy_with_grad, softmax)
from modalign.optim import AdamW, AdamWState, CosineRestartSchedule, adamw_step

RNG = np.random.default_rng(0)

finite_floats = st.floats(min_value=-50.0, max_value=50.0,
                          allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def test_gradient_suite_covers_all_architectures():
    names = {p["name"] for p in standard_probes(seed=0)}
    assert names == {"speech_encoder_head", "masked_autoencoder",
                     "mri_teacher", "projection_head"}


def test_gradient_suite_under_tolerance():
    worst = run_gradient_suite(seed=0, probe_count=20)
    for name, err in worst.items():
        assert err < 1e-4, f"{name}: rel err {err:.3e}"


def test_gradcheck_rejects_nondeterministic_forward():
    p = Param("p", np.array([1.0]))
    state = {"calls": 0}

    def noisy():
        state["calls"] += 1
        return float(p.value[0]) + 0.01 * state["calls"], [np.ones(1)]

    with pytest.raises(ValueError, match="non-deterministic"):
        gradcheck(noisy, [p], probe_count=1, loss_only=lambda: noisy()[0])


def test_gradcheck_flags_a_wrong_gradient():
    p = Param("p", np.array([0.7, -1.3]))

    def wrong():
        # claims d/dp sum(p^2) = 3p instead of 2p
        return float((p.value ** 2).sum()), [3.0 * p.value]

    assert gradcheck(wrong, [p], probe_count=2) > 0.1


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def test_gelu_matches_normal_cdf_oracle():
    x = np.linspace(-6, 6, 201).reshape(1, -1)
    expected = x * 0.5 * (1.0 + scipy_erf(x / np.sqrt(2.0)))
    np.testing.assert_allclose(gelu(x), expected, atol=1e-12)


def test_gelu_asymptotes():
    x = np.array([[-40.0, 0.0, 40.0]])
    out = gelu(x)
    assert out[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert out[0, 1] == 0.0
    assert out[0, 2] == pytest.approx(40.0)


@given(st.lists(finite_floats, min_size=2, max_size=16))
def test_softmax_rows_are_distributions(row):
    p = softmax(np.array([row]))
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.lists(finite_floats, min_size=2, max_size=8), finite_floats)
def test_softmax_shift_invariance(row, c):
    a = softmax(np.array([row]))
    b = softmax(np.array([row]) + c)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_survives_extreme_logits():
    p = softmax(np.array([[1e4, -1e4], [-1e4, 1e4]]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [[1, 0], [0, 1]], atol=1e-12)


def test_log_softmax_consistent_with_softmax():
    logits = RNG.normal(size=(5, 3))
    np.testing.assert_allclose(log_softmax(logits), np.log(softmax(logits)),
                               atol=1e-12)


# ---------------------------------------------------------------------------
# cross-entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_one_hot_is_negative_log_prob():
    logits = RNG.normal(size=(6, 2))
    targets = one_hot(np.array([0, 1, 0, 0, 1, 1]))
    expected = -log_softmax(logits)[np.arange(6), [0, 1, 0, 0, 1, 1]].mean()
    assert soft_cross_entropy(logits, targets) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_uniform_targets_constant_logits():
    # constant logits with uniform targets: loss is exactly log K
    logits = np.zeros((4, 3))
    targets = np.full((4, 3), 1.0 / 3.0)
    assert soft_cross_entropy(logits, targets) == pytest.approx(np.log(3.0))


def test_cross_entropy_sample_weights_reweight_rows():
    logits = RNG.normal(size=(2, 2))
    targets = one_hot(np.array([0, 1]))
    l0 = soft_cross_entropy(logits[:1], targets[:1])
    l1 = soft_cross_entropy(logits[1:], targets[1:])
    weighted = soft_cross_entropy(logits, targets, sample_weights=[3.0, 1.0])
    assert weighted == pytest.approx((3 * l0 + l1) / 4.0, abs=1e-12)


def test_cross_entropy_rejects_bad_targets():
    logits = np.zeros((1, 2))
    with pytest.raises(ValueError, match="sum to 1"):
        soft_cross_entropy(logits, np.array([[0.7, 0.7]]))
    with pytest.raises(ValueError, match="non-negative"):
        soft_cross_entropy(logits, np.array([[-0.5, 1.5]]))


def test_cross_entropy_grad_matches_softmax_minus_target():
    logits = RNG.normal(size=(4, 2))
    targets = one_hot(np.array([1, 0, 1, 0]))
    _, grad = soft_cross_entropy_with_grad(logits, targets)
    np.testing.assert_allclose(grad, (softmax(logits) - targets) / 4.0, atol=1e-12)


# ---------------------------------------------------------------------------
# dense / dropout / batchnorm
# ---------------------------------------------------------------------------


def test_dense_forward_is_affine():
    layer = Dense(3, 2, rng=np.random.default_rng(1), name="t")
    x = RNG.normal(size=(5, 3))
    np.testing.assert_allclose(layer.forward(x, mode="eval"),
                               x @ layer.w.value + layer.b.value, atol=1e-15)


def test_dense_rejects_width_mismatch():
    layer = Dense(3, 2, rng=np.random.default_rng(1))
    with pytest.raises(ValueError, match="expects 3"):
        layer.forward(np.zeros((4, 5)))


def test_dropout_eval_mode_is_identity():
    x = RNG.normal(size=(10, 4))
    assert np.array_equal(Dropout(0.6).forward(x, mode="eval"), x)


def test_dropout_zero_fraction_and_scaling():
    rate = 0.6
    x = np.ones((2000, 10))
    out = Dropout(rate).forward(x, mode="train", rng=np.random.default_rng(5))
    zero_frac = np.mean(out == 0.0)
    assert zero_frac == pytest.approx(rate, abs=0.02)
    # survivors scaled by 1/(1-rate) keeps the expectation at 1
    assert out.mean() == pytest.approx(1.0, abs=0.02)
    survivors = out[out != 0.0]
    np.testing.assert_allclose(survivors, 1.0 / (1.0 - rate))


def test_dropout_train_mode_requires_rng():
    with pytest.raises(ValueError, match="rng"):
        Dropout(0.5).forward(np.ones((2, 2)), mode="train")


def test_batchnorm_train_normalizes_batch():
    bn = BatchNorm(4)
    x = RNG.normal(loc=3.0, scale=2.5, size=(512, 4))
    out = bn.forward(x, mode="train", rng=None)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-6)


def test_batchnorm_affine_params_shift_and_scale():
    bn = BatchNorm(2)
    bn.gamma.value[:] = 2.0
    bn.beta.value[:] = 3.0
    out = bn.forward(RNG.normal(size=(256, 2)), mode="train")
    np.testing.assert_allclose(out.mean(axis=0), 3.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 2.0, atol=1e-4)


def test_batchnorm_eval_converges_to_train_on_stationary_data():
    bn = BatchNorm(3, momentum=0.5)
    x = RNG.normal(loc=-1.0, scale=4.0, size=(4096, 3))
    for _ in range(60):
        bn.forward(x, mode="train")
    np.testing.assert_allclose(bn.forward(x, mode="eval"),
                               bn.forward(x, mode="train"), atol=1e-3)


def test_batchnorm_needs_two_rows_in_train_mode():
    with pytest.raises(ValueError, match="at least 2 rows"):
        BatchNorm(2).forward(np.ones((1, 2)), mode="train")


def test_freeze_params_makes_values_read_only():
    layer = Dense(2, 2, rng=np.random.default_rng(0))
    nn.freeze_params(layer.parameters())
    assert nn.params_frozen(layer.parameters())
    with pytest.raises(ValueError):
        layer.w.value[0, 0] = 1.0


def test_numerics_checks_env_toggle(monkeypatch):
    monkeypatch.setenv("MINT_NUMERICS_CHECKS", "1")
    assert nn.numerics_checks_enabled()
    layer = Dense(2, 2, rng=np.random.default_rng(0))
    layer.w.value[0, 0] = np.inf
    with pytest.raises(FloatingPointError, match="non-finite"):
        layer.forward(np.ones((1, 2)))
    monkeypatch.delenv("MINT_NUMERICS_CHECKS")
    assert not nn.numerics_checks_enabled()
    layer.forward(np.ones((1, 2)))  # checks off: no raise


def test_make_mlp_layer_count_and_naming():
    mlp = make_mlp([8, 4, 2], np.random.default_rng(0), name="m", dropout_rate=0.3)
    kinds = [type(l).__name__ for l in mlp.layers]
    assert kinds == ["Dense", "Gelu", "Dropout", "Dense"]
    assert [p.name for p in mlp.parameters()] == ["m.fc0.w", "m.fc0.b",
                                                  "m.fc1.w", "m.fc1.b"]


def test_sequential_backward_matches_finite_difference():
    mlp = Sequential([Dense(3, 4, rng=np.random.default_rng(2), name="a"),
                      Gelu(),
                      Dense(4, 1, rng=np.random.default_rng(3), name="b")])
    x = RNG.normal(size=(6, 3))

    def lag():
        out = mlp.forward(x, mode="eval")
        loss = float((out ** 2).sum())
        mlp.backward(2.0 * out)
        return loss, [p.grad for p in mlp.parameters()]

    assert gradcheck(lag, mlp.parameters(), probe_count=15) < 1e-6


# ---------------------------------------------------------------------------
# AdamW and the cosine schedule
# ---------------------------------------------------------------------------


def test_adamw_single_step_oracle():
    v = np.array([1.0])
    g = np.array([0.5])
    state = AdamWState.for_params([v], weight_decay=0.0)
    adamw_step([v], [g], state, lr=0.1)
    # t=1: m_hat = g, s_hat = g^2, update = lr * g / (|g| + eps)
    expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert v[0] == pytest.approx(expected, abs=1e-12)


def test_adamw_weight_decay_is_decoupled():
    # zero gradient: only the multiplicative decay moves the parameter
    v = np.array([2.0])
    state = AdamWState.for_params([v], weight_decay=0.1)
    adamw_step([v], [np.array([0.0])], state, lr=0.01)
    assert v[0] == pytest.approx(2.0 * (1.0 - 0.01 * 0.1), abs=1e-15)


def test_adamw_rejects_frozen_and_nonfinite():
    p = Param("p", np.array([1.0]))
    state = AdamWState.for_params([p.value])
    with pytest.raises(optim.TrainingDivergedError, match="non-finite"):
        adamw_step([p.value], [np.array([np.nan])], state, lr=0.1)
    nn.freeze_params([p])
    with pytest.raises(FrozenParameterError, match="frozen"):
        adamw_step([p.value], [np.array([0.1])], state, lr=0.1)


def test_adamw_groups_use_their_own_learning_rates():
    fast = Param("fast", np.array([1.0]))
    slow = Param("slow", np.array([1.0]))
    opt = AdamW([([fast], 1e-1), ([slow], 1e-3)], weight_decay=0.0)
    for p in (fast, slow):
        p.grad = np.array([1.0])
    opt.step()
    assert abs(1.0 - fast.value[0]) > abs(1.0 - slow.value[0])
    assert opt.learning_rates() == [1e-1, 1e-3]


def test_cosine_schedule_shape_and_restart():
    sched = CosineRestartSchedule(base_lr=1.0, t0=10)
    assert sched.lr_at(0) == pytest.approx(1.0)
    assert sched.lr_at(5) == pytest.approx(0.5)
    # end-of-cycle minimum, then a warm restart back to base
    assert sched.lr_at(9) == pytest.approx(0.5 * (1 + np.cos(np.pi * 0.9)))
    assert sched.lr_at(10) == pytest.approx(1.0)
    assert sched.lr_at(25) == sched.lr_at(5)


def test_cosine_schedule_validation():
    with pytest.raises(ValueError):
        CosineRestartSchedule(base_lr=0.0)
    with pytest.raises(ValueError):
        CosineRestartSchedule(base_lr=1.0, t0=0)
    with pytest.raises(ValueError):
        CosineRestartSchedule(base_lr=1.0).factor(-1)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=600))
def test_cosine_schedule_stays_in_band(t0, epoch):
    factor = CosineRestartSchedule(base_lr=1.0, t0=t0).factor(epoch)
    assert 0.0 <= factor <= 1.0
    if epoch % t0 == 0:
        assert factor == pytest.approx(1.0)


def test_gradient_suite_is_fast_enough_for_ci():
    start = time.perf_counter()
    run_gradient_suite(seed=1, probe_count=10)
    assert time.perf_counter() - start < 30.0
