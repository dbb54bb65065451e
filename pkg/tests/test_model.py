import hashlib

import numpy as np
import pytest

from dfedsim.errors import ConfigurationError, EvaluationError
from dfedsim.model import (
    Batch,
    ModelSpec,
    evaluate,
    finite_diff_grads,
    forward,
    init_params,
    loss_and_grads,
)


def random_instance(rng, max_hidden=12):
    """Random small (spec, u, v, batch) tuple with tanh so gradients are smooth."""
    d_in = int(rng.integers(2, 7))
    n_classes = int(rng.integers(2, 6))
    hidden = [int(rng.integers(2, max_hidden)) for _ in range(int(rng.integers(1, 3)))]
    dims = tuple([d_in] + hidden + [n_classes])
    split = int(rng.integers(1, len(dims) - 1))
    spec = ModelSpec(dims, activation="tanh", split_layer=split,
                     weight_decay=float(rng.choice([0.0, 5e-4])))
    u, v = init_params(spec, int(rng.integers(0, 2**31)))
    n = int(rng.integers(1, 9))
    batch = Batch(rng.normal(size=(n, d_in)), rng.integers(0, n_classes, size=n))
    return spec, u, v, batch


def digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# --- spec and init ----------------------------------------------------------

def test_spec_dimension_bookkeeping():
    spec = ModelSpec((32, 64, 10), split_layer=1)
    assert spec.shared_dim == 32 * 64 + 64
    assert spec.personal_dim == 64 * 10 + 10
    full = spec.fully_shared()
    assert full.personal_dim == 0
    assert full.shared_dim == spec.shared_dim + spec.personal_dim


def test_spec_rejects_bad_split_and_dims():
    with pytest.raises(ConfigurationError):
        ModelSpec((32, 64, 10), split_layer=0)
    with pytest.raises(ConfigurationError):
        ModelSpec((32, 64, 10), split_layer=3)
    with pytest.raises(ConfigurationError):
        ModelSpec((32,))
    with pytest.raises(ConfigurationError):
        ModelSpec((32, 10), activation="sigmoid")


def test_init_is_deterministic_with_zero_biases():
    spec = ModelSpec((6, 8, 4), split_layer=1)
    u1, v1 = init_params(spec, 42)
    u2, v2 = init_params(spec, 42)
    np.testing.assert_array_equal(u1, u2)
    np.testing.assert_array_equal(v1, v2)
    # biases sit at the end of each layer block and start at zero
    assert np.all(u1[6 * 8:] == 0.0)
    assert np.all(v1[8 * 4:] == 0.0)


def test_init_is_independent_of_split_point():
    a = ModelSpec((6, 8, 4), split_layer=1)
    b = ModelSpec((6, 8, 4), split_layer=2)
    ua, va = init_params(a, 7)
    ub, vb = init_params(b, 7)
    np.testing.assert_array_equal(np.concatenate([ua, va]), np.concatenate([ub, vb]))


def test_init_weight_mean_matches_uniform_law():
    spec = ModelSpec((100, 120, 10), split_layer=1)
    u, _ = init_params(spec, 0)
    weights = u[: 100 * 120]
    bound = np.sqrt(6.0 / (100 + 120))
    sigma_mean = bound / np.sqrt(3 * weights.size)
    assert abs(weights.mean()) < 3 * sigma_mean


# --- forward ----------------------------------------------------------------

def test_zero_parameters_give_zero_logits():
    spec = ModelSpec((5, 7, 3), split_layer=1)
    logits = forward(spec, np.zeros(spec.shared_dim), np.zeros(spec.personal_dim),
                     np.random.default_rng(0).normal(size=(4, 5)))
    np.testing.assert_array_equal(logits, np.zeros((4, 3)))


def test_linear_stack_reduces_to_hand_computed_affine_map():
    # 1-d input, one shared linear layer then a linear head: y = w2*(w1*x+b1)+b2
    spec = ModelSpec((1, 1, 1), activation="relu", split_layer=1)
    w1, b1, w2, b2 = 1.75, 0.5, -2.0, 0.25
    u = np.array([w1, b1])
    v = np.array([w2, b2])
    x = np.array([[0.3], [2.0], [1.0]])
    hidden = np.maximum(w1 * x + b1, 0.0)
    expected = w2 * hidden + b2
    np.testing.assert_allclose(forward(spec, u, v, x), expected, atol=1e-15)


def test_forward_rejects_dimension_mismatch():
    spec = ModelSpec((5, 7, 3), split_layer=1)
    u, v = init_params(spec, 0)
    with pytest.raises(ValueError):
        forward(spec, u, v, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        forward(spec, u[:-1], v, np.zeros((2, 5)))


# --- loss and gradients -------------------------------------------------------

def test_zero_parameters_give_log_c_loss():
    spec = ModelSpec((4, 6, 5), split_layer=1, weight_decay=0.0)
    batch = Batch(np.random.default_rng(3).normal(size=(7, 4)), np.arange(7) % 5)
    loss, _, _ = loss_and_grads(spec, np.zeros(spec.shared_dim),
                                np.zeros(spec.personal_dim), batch)
    assert abs(loss - np.log(5)) < 1e-12


def test_gradients_match_central_differences():
    rng = np.random.default_rng(2024)
    for _ in range(12):
        spec, u, v, batch = random_instance(rng)
        _, g_u, g_v = loss_and_grads(spec, u, v, batch)
        f_u, f_v = finite_diff_grads(spec, u, v, batch, step=1e-5)
        analytic = np.concatenate([g_u, g_v])
        numeric = np.concatenate([f_u, f_v])
        scale = max(1e-8, float(np.max(np.abs(numeric))))
        assert float(np.max(np.abs(analytic - numeric))) / scale < 1e-6


def test_relu_gradients_also_match_central_differences():
    rng = np.random.default_rng(77)
    spec = ModelSpec((5, 9, 4), activation="relu", split_layer=1, weight_decay=5e-4)
    u, v = init_params(spec, 1)
    batch = Batch(rng.normal(size=(6, 5)), rng.integers(0, 4, size=6))
    _, g_u, g_v = loss_and_grads(spec, u, v, batch)
    f_u, f_v = finite_diff_grads(spec, u, v, batch, step=1e-5)
    scale = float(np.max(np.abs(np.concatenate([f_u, f_v]))))
    assert float(np.max(np.abs(np.concatenate([g_u - f_u, g_v - f_v])))) / scale < 1e-6


def test_duplicating_every_sample_changes_nothing():
    rng = np.random.default_rng(8)
    spec, u, v, batch = random_instance(rng)
    doubled = Batch(np.concatenate([batch.features, batch.features]),
                    np.concatenate([batch.labels, batch.labels]))
    l1, gu1, gv1 = loss_and_grads(spec, u, v, batch)
    l2, gu2, gv2 = loss_and_grads(spec, u, v, doubled)
    assert abs(l1 - l2) < 1e-12
    np.testing.assert_allclose(gu1, gu2, atol=1e-12)
    np.testing.assert_allclose(gv1, gv2, atol=1e-12)


def test_loss_invariant_under_batch_permutation():
    rng = np.random.default_rng(9)
    spec, u, v, batch = random_instance(rng)
    perm = rng.permutation(batch.n)
    shuffled = Batch(batch.features[perm], batch.labels[perm])
    l1, gu1, _ = loss_and_grads(spec, u, v, batch)
    l2, gu2, _ = loss_and_grads(spec, u, v, shuffled)
    assert abs(l1 - l2) < 1e-12
    np.testing.assert_allclose(gu1, gu2, atol=1e-12)


def test_split_gradients_match_fully_shared_reference():
    rng = np.random.default_rng(10)
    for _ in range(5):
        spec, u, v, batch = random_instance(rng)
        full = spec.fully_shared()
        w = np.concatenate([u, v])
        loss_split, g_u, g_v = loss_and_grads(spec, u, v, batch)
        loss_full, g_w, _ = loss_and_grads(full, w, np.zeros(0), batch)
        assert abs(loss_split - loss_full) < 1e-12
        np.testing.assert_allclose(np.concatenate([g_u, g_v]), g_w, atol=1e-12)


def test_loss_and_grads_do_not_mutate_inputs():
    rng = np.random.default_rng(11)
    spec, u, v, batch = random_instance(rng)
    before = digest(u, v, batch.features, batch.labels)
    loss_and_grads(spec, u, v, batch)
    forward(spec, u, v, batch.features)
    assert digest(u, v, batch.features, batch.labels) == before


def test_finite_differences_are_exact_on_quadratics():
    # squared-error loss of a linear model is quadratic, so central
    # differences are exact up to rounding for any step
    spec = ModelSpec((3, 2), split_layer=1, loss="squared_error")
    rng = np.random.default_rng(12)
    u, v = init_params(spec, 5)
    batch = Batch(rng.normal(size=(4, 3)), rng.integers(0, 2, size=4))
    _, g_u, _ = loss_and_grads(spec, u, v, batch)
    for step in (1e-4, 1e-3):
        f_u, _ = finite_diff_grads(spec, u, v, batch, step=step)
        np.testing.assert_allclose(f_u, g_u, atol=1e-9)


def test_finite_differences_self_consistent_across_steps():
    rng = np.random.default_rng(13)
    for _ in range(3):
        spec, u, v, batch = random_instance(rng)
        fu_coarse, fv_coarse = finite_diff_grads(spec, u, v, batch, step=1e-4)
        fu_fine, fv_fine = finite_diff_grads(spec, u, v, batch, step=1e-5)
        assert float(np.max(np.abs(fu_coarse - fu_fine))) < 1e-6
        assert float(np.max(np.abs(fv_coarse - fv_fine))) < 1e-6


# --- evaluation ---------------------------------------------------------------

def test_separable_two_point_shard_scores_perfectly():
    spec = ModelSpec((1, 2, 2), split_layer=1)
    # hand-built model: hidden = relu([x, -x]), logits = identity(hidden)
    u = np.array([1.0, -1.0, 0.0, 0.0])            # w1 = [[1, -1]], b1 = 0
    v = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])   # w2 = I, b2 = 0
    shard = Batch(np.array([[2.0], [-2.0]]), np.array([0, 1]))
    accuracy, _ = evaluate(spec, u, v, shard)
    assert accuracy == 1.0


def test_untrained_model_scores_near_chance_on_random_labels():
    rng = np.random.default_rng(14)
    n, n_classes = 4000, 5
    spec = ModelSpec((8, 10, n_classes), split_layer=1)
    u, v = init_params(spec, 3)
    shard = Batch(rng.normal(size=(n, 8)), rng.integers(0, n_classes, size=n))
    accuracy, _ = evaluate(spec, u, v, shard)
    assert abs(accuracy - 1.0 / n_classes) < 5.0 / np.sqrt(n)


def test_duplicate_shard_keeps_accuracy():
    rng = np.random.default_rng(15)
    spec, u, v, batch = random_instance(rng)
    doubled = Batch(np.concatenate([batch.features, batch.features]),
                    np.concatenate([batch.labels, batch.labels]))
    assert evaluate(spec, u, v, batch)[0] == evaluate(spec, u, v, doubled)[0]


def test_empty_shard_is_rejected():
    spec = ModelSpec((3, 4, 2), split_layer=1)
    u, v = init_params(spec, 0)
    with pytest.raises(EvaluationError):
        Batch(np.zeros((0, 3)), np.zeros(0, dtype=int))
