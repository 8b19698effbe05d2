import numpy as np
import pytest

from optim import AdamState, adam_step, cross_entropy


def test_cross_entropy_uniform_logits():
    loss, dlogits = cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
    assert loss == pytest.approx(np.log(2))
    np.testing.assert_allclose(dlogits.sum(axis=1), 0.0, atol=1e-12)
    assert dlogits[0].tolist() == pytest.approx([-0.125, 0.125])


def test_cross_entropy_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=(5, 3))
    labels = rng.integers(0, 3, size=5)
    _, dlogits = cross_entropy(logits, labels)
    h = 1e-6
    for i, j in [(0, 0), (2, 1), (4, 2)]:
        step = np.zeros_like(logits)
        step[i, j] = h
        numeric = (cross_entropy(logits + step, labels)[0] - cross_entropy(logits - step, labels)[0]) / (2 * h)
        assert dlogits[i, j] == pytest.approx(numeric, rel=1e-5)


def test_cross_entropy_large_logits_stay_finite():
    loss, dlogits = cross_entropy(np.array([[1e4, -1e4]]), np.array([1]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(dlogits))


def test_first_adam_step_moves_by_lr():
    params = [np.array([1.0, -2.0, 0.5], dtype=np.float32)]
    state = AdamState.zeros_like(params, lr=0.01)
    adam_step(state, params, [np.array([3.0, -0.1, 0.0], dtype=np.float32)])
    # bias-corrected first step is lr * sign(g) for g != 0
    np.testing.assert_allclose(params[0], [0.99, -1.99, 0.5], atol=1e-6)
    assert state.t == 1


def test_adam_matches_reference_recurrence(rng):
    p = rng.normal(size=4)
    params = [p.copy()]
    state = AdamState.zeros_like(params, lr=0.05, beta1=0.8, beta2=0.95, eps=1e-6)
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adam_step(state, params, [g])
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        p = p - 0.05 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.95 ** t)) + 1e-6)
    np.testing.assert_allclose(params[0], p, rtol=1e-10)


def test_adam_shape_mismatch():
    params = [np.zeros(3)]
    state = AdamState.zeros_like(params)
    with pytest.raises(ValueError, match="shape"):
        adam_step(state, params, [np.zeros(4)])


def test_adam_scalars():
    state = AdamState.zeros_like([np.zeros(2)], lr=0.1)
    assert state.scalars() == {"t": 0, "lr": 0.1, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
