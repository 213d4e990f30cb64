import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mziforge.errors import InvalidInputError
from mziforge.network import (
    Dataset,
    build_model,
    build_random_classifier,
    build_toy_classifier,
    cross_entropy,
    dataset_from_json,
    dataset_to_json,
    evaluate_accuracy,
    extract_features,
    finite_difference_gradient,
    forward,
    forward_matrices,
    model_parameters,
    modulus_softplus,
    train_finite_difference,
    weights_from_json,
    weights_to_json,
    with_parameters,
)
from oracles import mlp_forward


def _cmat(rng, m, n):
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


def test_features_constant_image_only_dc():
    f = extract_features(np.full((28, 28), 0.5))
    assert f.shape == (16,)
    # DC sits at (2, 2) of the 4x4 crop, i.e. flat index 10
    assert f[10] == pytest.approx(0.5 * 784)
    assert np.max(np.abs(np.delete(f, 10))) < 1e-9


def test_features_linear(rng):
    a, b = rng.uniform(0, 1, (28, 28)), rng.uniform(0, 1, (28, 28))
    np.testing.assert_allclose(extract_features(2 * a + 3 * b), 2 * extract_features(a) + 3 * extract_features(b), atol=1e-9)


def test_features_reject_bad_crop():
    with pytest.raises(InvalidInputError):
        extract_features(np.zeros((28, 28)), crop=3)


@pytest.mark.parametrize("shapes", [[(4, 4)], [(3, 5)], [(6, 4), (3, 6)], [(16, 16), (16, 16), (10, 16)]])
def test_model_matches_direct_weights(rng, shapes):
    weights = [_cmat(rng, *s) for s in shapes]
    model = build_model(weights)
    for w, m in zip(weights, model.matrices()):
        assert np.linalg.norm(m - w) < 1e-10 * np.linalg.norm(w)
    x = _cmat(rng, 5, shapes[0][1])
    got = forward(model, x)
    for i in range(5):
        np.testing.assert_allclose(got[i], mlp_forward(weights, x[i]), atol=1e-9)


def test_forward_single_vector_and_probabilities(rng):
    model = build_model([_cmat(rng, 4, 6)])
    x = _cmat(rng, 3, 6)
    batch = forward(model, x)
    np.testing.assert_allclose(forward(model, x[1]), batch[1])
    np.testing.assert_allclose(np.exp(batch).sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(InvalidInputError):
        forward(model, np.ones(5))


def test_modulus_softplus_values():
    out = modulus_softplus(np.array([0.0, 1j, -2.0]))
    assert out[0] == pytest.approx(math.log(2))
    assert out[1] == pytest.approx(1j * math.log1p(math.e))
    assert out[2] == pytest.approx(-math.log1p(math.exp(2)))


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_modulus_softplus_preserves_phase(a, b):
    z = complex(a, b)
    out = modulus_softplus(np.array([z]))[0]
    assert abs(out) >= abs(z) * (1 - 1e-14)
    if abs(z) > 1e-6:
        assert abs(np.angle(out) - np.angle(z)) < 1e-9 or abs(abs(np.angle(out) - np.angle(z)) - 2 * math.pi) < 1e-9


def test_two_class_complement_accuracy(rng):
    model = build_model([_cmat(rng, 2, 3)])
    x = _cmat(rng, 40, 3)
    pred = np.argmax(forward(model, x), axis=1)
    assert evaluate_accuracy(model, Dataset(x, pred, 2)) == 1.0
    assert evaluate_accuracy(model, Dataset(x, 1 - pred, 2)) == 0.0


def test_random_labels_near_chance(rng):
    model = build_model([_cmat(rng, 10, 16)])
    x = _cmat(rng, 2000, 16)
    acc = evaluate_accuracy(model, Dataset(x, rng.integers(0, 10, 2000), 10))
    assert 0.07 <= acc <= 0.13


def test_toy_classifiers_are_perfect():
    for n in (2, 4, 10):
        model, data = build_toy_classifier(n)
        assert evaluate_accuracy(model, data) == 1.0
    model, data = build_random_classifier((8, 8, 6), 50, seed=1)
    assert evaluate_accuracy(model, data) == 1.0
    assert model.mesh_sizes() == (8, 8, 8, 6)


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        Dataset(np.ones((3, 2)), [0, 1], 2)
    with pytest.raises(InvalidInputError):
        Dataset(np.ones((2, 2)), [0, 2], 2)
    with pytest.raises(InvalidInputError):
        build_model([np.ones((2, 3)), np.ones((2, 3))])


def test_parameter_round_trip(rng):
    model = build_model([_cmat(rng, 3, 4), _cmat(rng, 2, 3)])
    p = model_parameters(model)
    again = with_parameters(model, p)
    for a, b in zip(model.matrices(), again.matrices()):
        np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(InvalidInputError):
        with_parameters(model, p[:-1])


def test_finite_difference_gradient_quadratic():
    g = finite_difference_gradient(lambda p: float(np.sum(p**2) + p[0] * p[1]), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(g, [0.0, -3.0, 1.0], atol=1e-7)


def _two_class_data(seed, n=24):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = 0.2 * _cmat(rng, n, 4)
    x[labels == 0, 0] += 2.0
    x[labels == 1, 1] += 2.0
    return Dataset(x, labels, 2)


def test_trainer_zero_steps_is_initial_model():
    data = _two_class_data(0)
    a = train_finite_difference([(2, 4)], data, steps=0, learning_rate=0.1, seed=3, gain=1.0)
    b = train_finite_difference([(2, 4)], data, steps=0, learning_rate=0.1, seed=3, gain=1.0)
    np.testing.assert_array_equal(model_parameters(a), model_parameters(b))


def test_trainer_reduces_loss_and_separates():
    data = _two_class_data(0)
    start = train_finite_difference([(2, 4)], data, steps=0, learning_rate=0.5, seed=3, gain=1.0)
    losses = [cross_entropy(start, data)]
    for steps in (5, 15, 40):
        m = train_finite_difference([(2, 4)], data, steps=steps, learning_rate=0.5, seed=3, gain=1.0)
        losses.append(cross_entropy(m, data))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert evaluate_accuracy(m, data) >= 0.95


def test_json_round_trips(tmp_path, rng):
    w = [_cmat(rng, 3, 4), _cmat(rng, 2, 3)]
    back = weights_from_json(weights_to_json(w))
    assert all(np.array_equal(a, b) for a, b in zip(w, back))
    data = Dataset(_cmat(rng, 5, 4), [0, 1, 2, 0, 1], 3)
    d2 = dataset_from_json(dataset_to_json(data))
    assert np.array_equal(d2.samples, data.samples) and np.array_equal(d2.labels, data.labels)
    with pytest.raises(InvalidInputError):
        weights_from_json({"format": 99, "layers": []})
    bad = dataset_to_json(data)
    bad["dim"] = 7
    with pytest.raises(InvalidInputError):
        dataset_from_json(bad)


def test_forward_matrices_matches_model(rng):
    model = build_model([_cmat(rng, 4, 4)])
    x = _cmat(rng, 3, 4)
    np.testing.assert_array_equal(forward_matrices(model.matrices(), x), forward(model, x))
