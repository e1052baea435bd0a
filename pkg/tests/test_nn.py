"""Core numerics: forward pass, losses, analytic gradients, SGD, checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import max_grad_rel_err
from oodstream import nn
from oodstream.nn import (CheckpointDimensionError, CheckpointFormatError,
                          CheckpointVersionError, InputDimensionError, LossSpec,
                          MlpModel, SgdConfig, backward, clone_frozen,
                          forward_logits, init_mlp, load_checkpoint, log_softmax,
                          loss_ce_label, loss_ce_uniform, loss_sc, save_checkpoint,
                          sgd_step, train_offline)

LN2 = math.log(2.0)
LN3 = math.log(3.0)

# frozen from a 50-digit mpmath evaluation of log(exp(z_c) / sum(exp(z)))
LOG_SOFTMAX_123 = (-2.40760596444438030, -1.40760596444438030, -0.40760596444438030)


def two_class_identity_model() -> MlpModel:
    return MlpModel(
        layer_dims=[2, 2],
        weights=[np.eye(2)],
        biases=[np.zeros(2)],
        group_labels=["fc"],
    )


# ---------------------------------------------------------------------------
# forward


def test_forward_zero_model_gives_zero_logits():
    model = init_mlp([3, 5, 4], seed=0)
    for w in model.weights:
        w[:] = 0.0
    logits = forward_logits(model, np.array([1.0, -2.0, 3.0]))
    assert np.all(logits == 0.0)


def test_forward_identity_weights():
    logits = forward_logits(two_class_identity_model(), np.array([2.0, 3.0]))
    assert np.allclose(logits, [2.0, 3.0])


def test_forward_matches_straight_line_reimplementation():
    model = init_mlp([2, 4, 3], seed=42)
    x = np.array([0.7, -1.2])
    # independent re-implementation of the forward pass
    h = np.maximum(x @ model.weights[0] + model.biases[0], 0.0)
    expected = h @ model.weights[1] + model.biases[1]
    assert np.allclose(forward_logits(model, x), expected, rtol=0, atol=0)


def test_forward_rejects_wrong_input_dim():
    model = init_mlp([3, 2], seed=0)
    with pytest.raises(InputDimensionError):
        forward_logits(model, np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# log_softmax and losses


def test_log_softmax_symmetric():
    assert np.allclose(log_softmax(np.array([0.0, 0.0])), [-LN2, -LN2])


def test_log_softmax_extreme_logits_stable():
    out = log_softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(out))
    assert abs(out[0]) < 1e-12


def test_log_softmax_extended_precision_oracle():
    out = log_softmax(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(out, LOG_SOFTMAX_123, rtol=0, atol=1e-15)


def test_log_softmax_shift_invariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = rng.normal(0, 5, size=4)
        c = rng.normal(0, 100)
        assert np.allclose(log_softmax(z + c), log_softmax(z), atol=1e-12)


def test_softmax_sums_to_one_even_for_large_logits():
    rng = np.random.default_rng(11)
    for scale in (1.0, 10.0, 100.0, 1000.0):
        for _ in range(25):
            z = rng.uniform(-scale, scale, size=5)
            assert abs(np.sum(np.exp(log_softmax(z))) - 1.0) < 1e-12
            assert abs(np.sum(nn.softmax(z)) - 1.0) < 1e-12


def test_loss_ce_label_uniform_logits():
    assert loss_ce_label(np.array([0.0, 0.0]), 0) == pytest.approx(LN2, abs=1e-15)


def test_loss_ce_label_saturated():
    assert loss_ce_label(np.array([50.0, 0.0]), 0) < 1e-10


def test_loss_ce_label_oracle_value():
    assert loss_ce_label(np.array([1.0, 2.0, 3.0]), 2) == pytest.approx(
        0.40760596444438030, abs=1e-15)


def test_loss_ce_label_out_of_range():
    with pytest.raises(ValueError):
        loss_ce_label(np.array([0.0, 0.0]), 2)


def test_loss_ce_uniform_minimum_at_uniform():
    assert loss_ce_uniform(np.array([0.0, 0.0])) == pytest.approx(LN2, abs=1e-15)


def test_loss_ce_uniform_one_sided_growth():
    assert loss_ce_uniform(np.array([10.0, 0.0])) > 4.0


def test_loss_ce_uniform_oracle_value():
    assert loss_ce_uniform(np.array([1.0, 2.0, 3.0])) == pytest.approx(
        1.40760596444438030, abs=1e-15)


def test_loss_ce_uniform_lower_bound_property():
    rng = np.random.default_rng(7)
    for _ in range(100):
        c = rng.integers(2, 8)
        z = rng.normal(0, 10, size=c)
        assert loss_ce_uniform(z) - math.log(c) >= -1e-12


def test_loss_sc_agreement_is_zero():
    assert loss_sc(np.array([0.5, 0.3, 0.2]), 0, 0, phi=0.2) == 0.0


def test_loss_sc_disagreement_formula():
    val = loss_sc(np.array([0.6, 0.3, 0.1]), pred_t=0, pred_0=1, phi=0.2)
    assert val == pytest.approx(0.5, abs=1e-15)


def test_loss_sc_index_out_of_range():
    with pytest.raises(ValueError):
        loss_sc(np.array([0.5, 0.5]), 0, 3, phi=0.2)


# ---------------------------------------------------------------------------
# gradients


def test_gradient_zero_at_uniform_stationary_point():
    # symmetric weights, uniform softmax: the uniform-CE gradient vanishes
    model = init_mlp([2, 3], seed=0)
    model.weights[0][:] = 0.0
    model.biases[0][:] = 0.0
    grads = backward(model, np.array([0.3, -0.4]), LossSpec(uniform_weight=1.0))
    assert np.all(grads.d_biases[-1] == 0.0)


def test_gradient_sc_agreement_branch_is_zero():
    model = init_mlp([2, 4, 3], seed=1)
    x = np.array([0.5, 0.5])
    ref = int(np.argmax(forward_logits(model, x)))
    grads = backward(model, x, LossSpec(sc_weight=1.0, sc_ref_pred=ref, sc_phi=0.2))
    assert all(np.all(g == 0.0) for g in grads.d_weights + grads.d_biases)


@pytest.mark.parametrize("seed", range(8))
def test_gradient_matches_finite_differences_mixed_loss(seed):
    rng = np.random.default_rng(seed)
    n_hidden = 1 + seed % 3
    dims = [3] + [int(rng.integers(3, 7)) for _ in range(n_hidden)] + [4]
    model = init_mlp(dims, seed=seed)
    for b in model.biases:
        b[:] = rng.normal(0, 0.5, size=b.shape)  # keep logits away from exact ties
    x = rng.normal(0, 1, size=3)
    bank = rng.normal(0, 1, size=(4, 3))
    ref = int(rng.integers(0, 4))
    spec = LossSpec(
        uniform_weight=1.0,
        sc_weight=0.1,
        sc_ref_pred=ref,
        sc_phi=0.2,
        bank_inputs=bank,
        bank_labels=np.arange(4),
        bank_weight=1.0,
    )
    assert max_grad_rel_err(model, x, spec) < 1e-5


def test_gradient_label_loss_finite_differences():
    rng = np.random.default_rng(99)
    model = init_mlp([2, 5, 3], seed=5)
    x = rng.normal(0, 1, size=2)
    assert max_grad_rel_err(model, x, LossSpec(label=1)) < 1e-5


# ---------------------------------------------------------------------------
# SGD


def test_sgd_step_only_touches_trainable_groups():
    model = init_mlp([2, 4, 4, 3], seed=2)
    before = [w.copy() for w in model.weights] + [b.copy() for b in model.biases]
    grads = nn.zero_gradients(model)
    for g in grads.d_weights + grads.d_biases:
        g[:] = 1.0
    sgd_step(model, grads, SgdConfig(learning_rate=0.1, trainable_groups={"fc"}))
    after = model.weights + model.biases
    # layers 0 and 1 are block1/block2: bitwise untouched
    assert np.array_equal(before[0], after[0]) and np.array_equal(before[1], after[1])
    assert np.array_equal(before[3], after[3]) and np.array_equal(before[4], after[4])
    assert not np.array_equal(before[2], after[2])


def test_sgd_step_single_parameter_arithmetic():
    model = MlpModel([1, 1], [np.array([[1.0]])], [np.zeros(1)], ["fc"])
    grads = nn.Gradients([np.array([[2.0]])], [np.zeros(1)])
    sgd_step(model, grads, SgdConfig(learning_rate=0.5, trainable_groups={"fc"}))
    assert model.weights[0][0, 0] == 0.0


def test_sgd_step_empty_trainable_set_is_identity():
    model = init_mlp([3, 4, 2], seed=3)
    before = [w.copy() for w in model.weights] + [b.copy() for b in model.biases]
    grads = nn.zero_gradients(model)
    for g in grads.d_weights + grads.d_biases:
        g[:] = 5.0
    sgd_step(model, grads, SgdConfig(learning_rate=0.1, trainable_groups=frozenset()))
    for b, a in zip(before, model.weights + model.biases):
        assert np.array_equal(b, a)


def test_sgd_step_weight_decay():
    model = MlpModel([1, 1], [np.array([[2.0]])], [np.zeros(1)], ["fc"])
    grads = nn.Gradients([np.array([[1.0]])], [np.zeros(1)])
    cfg = SgdConfig(learning_rate=0.1, weight_decay=0.5, trainable_groups={"fc"})
    sgd_step(model, grads, cfg)
    # theta - lr * (g + wd * theta) = 2 - 0.1 * (1 + 0.5 * 2)
    assert model.weights[0][0, 0] == pytest.approx(1.8, abs=1e-15)


def test_sgd_step_momentum_two_steps():
    model = MlpModel([1, 1], [np.array([[1.0]])], [np.zeros(1)], ["fc"])
    grads = nn.Gradients([np.array([[1.0]])], [np.zeros(1)])
    cfg = SgdConfig(learning_rate=0.1, momentum=0.5, trainable_groups={"fc"})
    velocity = nn.zero_gradients(model)
    sgd_step(model, grads, cfg, velocity)   # v=1,   theta = 1 - 0.1
    sgd_step(model, grads, cfg, velocity)   # v=1.5, theta = 0.9 - 0.15
    assert model.weights[0][0, 0] == pytest.approx(0.75, abs=1e-15)


def test_sgd_step_momentum_requires_velocity():
    model = init_mlp([2, 2], seed=0)
    cfg = SgdConfig(learning_rate=0.1, momentum=0.9, trainable_groups={"fc"})
    with pytest.raises(ValueError):
        sgd_step(model, nn.zero_gradients(model), cfg)


def test_last_block_group_name():
    model = init_mlp([2, 4, 4, 3], seed=0)
    assert nn.last_block_group(model) == "block2"
    assert model.group_labels == ["block1", "block2", "fc"]


# ---------------------------------------------------------------------------
# clone_frozen


def test_clone_unchanged_by_updates_to_original():
    model = init_mlp([2, 4, 3], seed=4)
    clone = clone_frozen(model)
    x = np.array([0.1, 0.2])
    ref = forward_logits(clone, x).copy()
    cfg = SgdConfig(learning_rate=0.1, trainable_groups=frozenset(model.group_labels))
    for _ in range(100):
        grads = backward(model, x, LossSpec(uniform_weight=1.0))
        sgd_step(model, grads, cfg)
    assert np.array_equal(forward_logits(clone, x), ref)


def test_clone_forward_identical_immediately():
    model = init_mlp([3, 5, 2], seed=6)
    clone = clone_frozen(model)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.normal(0, 1, size=3)
        assert np.array_equal(forward_logits(model, x), forward_logits(clone, x))


def test_clone_of_clone_equals_clone():
    model = init_mlp([2, 3, 2], seed=7)
    c1 = clone_frozen(model)
    c2 = clone_frozen(c1)
    for a, b in zip(c1.weights + c1.biases, c2.weights + c2.biases):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# offline training


class _Toy:
    def __init__(self, features, labels):
        self.features = features
        self.labels = labels


def test_train_offline_separable_gaussians():
    rng = np.random.default_rng(12)
    n = 100
    f0 = rng.normal(0, 0.3, size=(n, 2)) + np.array([-2.0, 0.0])
    f1 = rng.normal(0, 0.3, size=(n, 2)) + np.array([2.0, 0.0])
    ds = _Toy(np.concatenate([f0, f1]), np.array([0] * n + [1] * n))
    model = init_mlp([2, 8, 2], seed=0)
    train_offline(model, ds, epochs=200, batch_size=16,
                  cfg=SgdConfig(learning_rate=0.05), seed=0)
    assert nn.accuracy(model, ds.features, ds.labels) >= 0.99


def test_train_offline_zero_epochs_noop():
    model = init_mlp([2, 4, 2], seed=1)
    before = [w.copy() for w in model.weights]
    ds = _Toy(np.array([[0.0, 1.0]]), np.array([1]))
    train_offline(model, ds, epochs=0, batch_size=4, cfg=SgdConfig(learning_rate=0.1))
    for b, a in zip(before, model.weights):
        assert np.array_equal(b, a)


def test_train_offline_memorizes_single_sample():
    model = init_mlp([2, 4, 3], seed=2)
    ds = _Toy(np.array([[0.5, -0.5]]), np.array([2]))
    train_offline(model, ds, epochs=300, batch_size=1,
                  cfg=SgdConfig(learning_rate=0.1), seed=0)
    assert int(np.argmax(forward_logits(model, ds.features[0]))) == 2


def test_train_offline_empty_dataset_errors():
    model = init_mlp([2, 2], seed=0)
    with pytest.raises(ValueError):
        train_offline(model, _Toy(np.zeros((0, 2)), np.zeros(0, dtype=int)),
                      epochs=1, batch_size=1, cfg=SgdConfig())


def test_train_offline_rejects_out_of_range_labels():
    model = init_mlp([2, 2], seed=0)
    ds = _Toy(np.zeros((2, 2)), np.array([0, 5]))
    with pytest.raises(ValueError):
        train_offline(model, ds, epochs=1, batch_size=1, cfg=SgdConfig())


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = init_mlp([3, 7, 4], seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.normal(0, 2, size=3)
        assert np.array_equal(forward_logits(model, x), forward_logits(loaded, x))
    for a, b in zip(model.weights + model.biases, loaded.weights + loaded.biases):
        assert np.array_equal(a, b)
    assert loaded.group_labels == model.group_labels


def test_checkpoint_truncated_file_errors(tmp_path):
    model = init_mlp([2, 3, 2], seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    text = path.read_text()
    path.write_text("\n".join(text.splitlines()[:-2]) + "\n")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_unknown_version_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_text("auto-mlp v99\n2 2\nfc\n")
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_dimension_mismatch_errors(tmp_path):
    model = init_mlp([2, 3, 2], seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    lines = path.read_text().splitlines()
    lines[1] = "2 4 2"  # inconsistent with stored tensor shapes
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointDimensionError):
        load_checkpoint(path)
