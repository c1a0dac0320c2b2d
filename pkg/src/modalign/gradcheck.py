"""Central-finite-difference verification of analytic gradients.

The check perturbs randomly chosen scalar parameters and compares the
analytic gradient against (f(p+h) - f(p-h)) / 2h. Forward passes must be
deterministic (eval-mode dropout or fixed masks, batch-norm statistics
held fixed); a non-deterministic closure is rejected up front.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import Param

LossAndGrad = Callable[[], tuple[float, list[np.ndarray]]]
LossOnly = Callable[[], float]


def gradcheck(loss_and_grad: LossAndGrad, params: list[Param],
              probe_count: int = 50, step: float = 1e-4,
              rng: np.random.Generator | None = None,
              loss_only: LossOnly | None = None) -> float:
    """Returns the worst relative error over `probe_count` random scalar probes."""
    if probe_count < 1:
        raise ValueError("probe_count must be at least 1")
    if step <= 0:
        raise ValueError("step must be positive")
    sizes = [p.value.size for p in params]
    total = int(np.sum(sizes)) if sizes else 0
    if total == 0:
        raise ValueError("empty probe set: no scalar parameters to check")
    if loss_only is None:
        loss_only = lambda: loss_and_grad()[0]
    if rng is None:
        rng = np.random.default_rng(0)

    loss_a, grads = loss_and_grad()
    loss_b = loss_only()
    if loss_a != loss_b:
        raise ValueError(
            f"non-deterministic forward: repeated evaluations gave {loss_a!r} vs {loss_b!r}")
    if len(grads) != len(params):
        raise ValueError("gradient list does not align with params")

    offsets = np.cumsum([0] + sizes)
    flat_indices = rng.choice(total, size=min(probe_count, total), replace=False)
    worst = 0.0
    for flat in flat_indices:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        off = int(flat - offsets[pi])
        value = params[pi].value
        saved = value.flat[off]
        value.flat[off] = saved + step
        f_plus = loss_only()
        value.flat[off] = saved - step
        f_minus = loss_only()
        value.flat[off] = saved
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grads[pi].flat[off]
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, rel)
    return worst


def standard_probes(seed: int = 0, batch: int = 8) -> list[dict]:
    """Gradcheck closures for every trainable architecture in the pipeline.

    Returns [{name, loss_and_grad, loss_only, params}, ...] with deterministic
    synthetic batches: speech classifier (encoder + head), masked autoencoder
    (encoder + decoder), MRI teacher, and the residual projection head.
    """
    # imported here: the stage modules depend on this module's core check
    from .align import ProjectionHead, align_loss_with_grad
    from .data import one_hot_labels
    from .nn import soft_cross_entropy_with_grad
    from .speech import MaskSpec, build_speech_stack, mae_loss_with_grad, mask_features
    from .teacher import TeacherArchSpec, build_teacher

    rng = np.random.default_rng(seed)
    probes: list[dict] = []

    # -- speech encoder + linear head, soft cross-entropy --------------------
    stack = build_speech_stack(input_dim=209, hidden=(256,), latent=128,
                               seed=seed)
    x_s = rng.normal(size=(batch, 209))
    y = one_hot_labels(rng.integers(0, 2, size=batch))
    enc_head_params = stack.encoder.parameters() + stack.head.parameters()

    def enc_head_loss():
        z = stack.encoder.forward(x_s, mode="eval")
        return stack.head.forward(z, mode="eval")

    def enc_head_lag():
        logits = enc_head_loss()
        loss, dlogits = soft_cross_entropy_with_grad(logits, y)
        stack.encoder.backward(stack.head.backward(dlogits))
        return loss, [p.grad for p in enc_head_params]

    probes.append({
        "name": "speech_encoder_head",
        "loss_and_grad": enc_head_lag,
        "loss_only": lambda: soft_cross_entropy_with_grad(enc_head_loss(), y)[0],
        "params": enc_head_params,
    })

    # -- masked autoencoder (encoder + decoder), fixed masks -----------------
    mask_rng = np.random.default_rng(seed + 1)
    x_masked, mask = mask_features(x_s, MaskSpec(mask_ratio=0.3), mask_rng)
    ae_params = stack.encoder.parameters() + stack.decoder.parameters()

    def ae_forward():
        z = stack.encoder.forward(x_masked, mode="eval")
        return stack.decoder.forward(z, mode="eval")

    def ae_lag():
        x_hat = ae_forward()
        loss, dxhat = mae_loss_with_grad(x_s, x_hat, mask, lambda_c=0.5)
        stack.encoder.backward(stack.decoder.backward(dxhat))
        return loss, [p.grad for p in ae_params]

    probes.append({
        "name": "masked_autoencoder",
        "loss_and_grad": ae_lag,
        "loss_only": lambda: mae_loss_with_grad(x_s, ae_forward(), mask, lambda_c=0.5)[0],
        "params": ae_params,
    })

    # -- MRI teacher (projection + classifier) -------------------------------
    teacher = build_teacher(
        TeacherArchSpec(hidden_widths=[1024, 256], dropout_rate=0.3), seed=seed)
    x_m = rng.normal(size=(batch, 6144))
    t_params = teacher.projection.parameters() + teacher.classifier.parameters()

    def teacher_forward():
        z = teacher.projection.forward(x_m, mode="eval")
        return teacher.classifier.forward(z, mode="eval")

    def teacher_lag():
        logits = teacher_forward()
        loss, dlogits = soft_cross_entropy_with_grad(logits, y)
        teacher.projection.backward(teacher.classifier.backward(dlogits))
        return loss, [p.grad for p in t_params]

    probes.append({
        "name": "mri_teacher",
        "loss_and_grad": teacher_lag,
        "loss_only": lambda: soft_cross_entropy_with_grad(teacher_forward(), y)[0],
        "params": t_params,
    })

    # -- projection head under the alignment loss ----------------------------
    head = ProjectionHead(seed=seed)
    z_s = rng.normal(size=(batch, 128))
    z_m = rng.normal(size=(batch, 128))
    # knock the head off its zero-initialized start so layer2 grads are generic
    pert = np.random.default_rng(seed + 2)
    head.layer2.w.value += 0.05 * pert.normal(size=head.layer2.w.value.shape)
    h_params = head.parameters()

    def head_lag():
        z_hat = head.forward(z_s, mode="eval")
        loss, dz = align_loss_with_grad(z_hat, z_m, lambda_mse=1.0, lambda_cos=1.0)
        head.backward(dz)
        return loss, [p.grad for p in h_params]

    probes.append({
        "name": "projection_head",
        "loss_and_grad": head_lag,
        "loss_only": lambda: align_loss_with_grad(
            head.forward(z_s, mode="eval"), z_m, lambda_mse=1.0, lambda_cos=1.0)[0],
        "params": h_params,
    })
    return probes


def run_gradient_suite(seed: int = 0, probe_count: int = 50,
                       step: float = 1e-4) -> dict[str, float]:
    """Max relative gradcheck error per architecture."""
    results = {}
    for probe in standard_probes(seed=seed):
        results[probe["name"]] = gradcheck(
            probe["loss_and_grad"], probe["params"],
            probe_count=probe_count, step=step,
            rng=np.random.default_rng(seed + 17),
            loss_only=probe["loss_only"],
        )
    return results
