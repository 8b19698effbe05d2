import numpy as np
import pytest

from codebook import CODEBOOK, NAME_TO_GATE
from gate_types import BasisKind, BasisSpec, Method
import trainers


def test_init_params_shapes(rng):
    assert trainers.init_params(Method.SOFT_MIX, 5, 1.0, rng).shape == (5, 16)
    raw = trainers.init_params(Method.MULTILINEAR_COVJAC, 5, 1.0, rng)
    assert raw.shape == (5, 4)
    assert raw.dtype == np.float32


def test_sigmoid_is_stable():
    out = trainers.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


class TestSoftMix:
    def test_uniform_mixture_cancels_input_gradient(self, rng):
        a = rng.random((100, 1))
        b = rng.random((100, 1))
        pi = np.full((1, 16), 1.0 / 16)
        _, (da, db) = trainers.softmix_backward(pi, a, b, np.ones_like(a))
        assert np.abs(da).max() < 1e-12
        assert np.abs(db).max() < 1e-12

    def test_effective_coefficients(self):
        logits = np.full((1, 16), -50.0)
        logits[0, NAME_TO_GATE["XOR"]] = 50.0
        pi, c = trainers.softmix_effective(logits)
        np.testing.assert_allclose(c[0], CODEBOOK[NAME_TO_GATE["XOR"]], atol=1e-9)


class TestGumbel:
    def test_zero_noise_is_argmax(self, rng):
        logits = rng.normal(size=(10, 16))
        selected, probs = trainers.gumbel_st_forward(logits, noise=np.zeros_like(logits))
        assert np.array_equal(selected, np.argmax(logits, axis=1))
        np.testing.assert_allclose(probs, trainers.softmax(logits))

    def test_noise_draws_follow_the_generator(self):
        logits = np.zeros((50, 16))
        first, _ = trainers.gumbel_st_forward(logits, np.random.default_rng(5))
        second, _ = trainers.gumbel_st_forward(logits, np.random.default_rng(5))
        assert np.array_equal(first, second)
        assert len(np.unique(first)) > 1

    def test_uniform_logits_select_every_gate_equally(self):
        selected, _ = trainers.gumbel_st_forward(np.zeros((10_000, 16)), np.random.default_rng(11))
        frequency = np.bincount(selected, minlength=16) / 10_000
        assert np.all(np.abs(frequency - 1 / 16) <= 0.01)

    def test_forward_without_generator_is_an_error(self):
        with pytest.raises(ValueError, match="noise generator"):
            trainers.layer_forward(Method.GUMBEL_ST, np.zeros((2, 16)),
                                   np.zeros((3, 2)), np.zeros((3, 2)))

    def test_hard_st_forward_is_selected_gate(self):
        logits = np.zeros((1, 16))
        logits[0, NAME_TO_GATE["OR"]] = 3.0
        a = np.array([[0.0], [1.0], [0.0], [1.0]])
        b = np.array([[0.0], [0.0], [1.0], [1.0]])
        z, cache = trainers.layer_forward(Method.HARD_ST, logits, a, b)
        assert z[:, 0].tolist() == [0, 1, 1, 1]
        assert cache.selected.tolist() == [NAME_TO_GATE["OR"]]


class TestSTE:
    def test_forward_uses_snapped_gate(self, binary_inputs):
        a, b = binary_inputs
        raw = np.array([[0.1, 0.9, 1.2, -1.7]])  # nearest XOR
        z, cache = trainers.layer_forward(Method.MULTILINEAR_STE, raw, a, b)
        assert cache.selected.tolist() == [NAME_TO_GATE["XOR"]]
        assert np.array_equal(z[:, 0], np.abs(a[:, 0] - b[:, 0]))

    def test_canonical_gradient_is_delta_times_psi(self, binary_inputs):
        a, b = binary_inputs
        delta = np.ones_like(a)
        grad, _ = trainers.ste_backward(np.zeros((1, 4)), BasisSpec(), a, b, delta)
        # 32 samples, each corner 8 times
        assert grad[0].tolist() == [32, 16, 16, 8]

    def test_walsh_basis(self, binary_inputs):
        a, b = binary_inputs
        grad = trainers.basis_sums(BasisSpec(BasisKind.WALSH), np.ones_like(a), a, b)
        assert grad[0].tolist() == [32, 0, 0, 0]

    def test_degenerate_bases(self, binary_inputs):
        a, b = binary_inputs
        delta = np.ones_like(a)
        expected = trainers.basis_sums(BasisSpec(BasisKind.EXPECTED_VALUE), delta, a, b)
        uniform = trainers.basis_sums(BasisSpec(BasisKind.UNIFORM), delta, a, b)
        np.testing.assert_allclose(expected[0], [32, 16, 16, 8])
        np.testing.assert_allclose(uniform[0], [32, 32, 32, 32])

    def test_basis_passes_through_forward(self, binary_inputs):
        a, b = binary_inputs
        spec = BasisSpec(BasisKind.SMOOTHED, epsilon=0.2)
        _, cache = trainers.layer_forward(Method.MULTILINEAR_STE, np.zeros((1, 4)), a, b, basis=spec)
        grad, _, _ = trainers.layer_backward(cache, np.ones_like(a), need_input_grads=False)
        np.testing.assert_allclose(grad, trainers.basis_sums(spec, np.ones_like(a), a, b))


class TestCovJac:
    def test_jacobian_matches_finite_differences(self, rng):
        for tau in (0.5, 1.0, 2.0):
            c = rng.normal(size=4)
            omega, _ = trainers.covjac_effective(c, tau)
            jac = trainers.covjac_jacobian(omega, tau)
            h = 1e-5
            for i in range(4):
                step = np.zeros(4)
                step[i] = h
                _, plus = trainers.covjac_effective(c + step, tau)
                _, minus = trainers.covjac_effective(c - step, tau)
                np.testing.assert_allclose(jac[:, i], (plus - minus) / (2 * h), rtol=1e-5, atol=1e-7)

    def test_jacobian_symmetric_psd(self, rng):
        omega, _ = trainers.covjac_effective(rng.normal(size=(20, 4)), 1.0)
        jac = trainers.covjac_jacobian(omega, 1.0)
        np.testing.assert_allclose(jac, np.swapaxes(jac, -1, -2), atol=1e-12)
        assert np.linalg.eigvalsh(jac).min() >= -1e-10
        assert np.all(np.diagonal(jac, axis1=-2, axis2=-1) > 0)

    def test_low_temperature_approaches_snap(self):
        c = np.array([[0.1, 0.9, 1.2, -1.7]])
        _, c_soft = trainers.covjac_effective(c, 0.01)
        np.testing.assert_allclose(c_soft[0], CODEBOOK[NAME_TO_GATE["XOR"]], atol=1e-6)

    def test_high_temperature_approaches_codebook_mean(self):
        _, c_soft = trainers.covjac_effective(np.zeros((1, 4)), 1e6)
        np.testing.assert_allclose(c_soft[0], CODEBOOK.mean(axis=0), atol=1e-4)

    def test_jacobian_at_uniform_weights(self):
        jac = trainers.covjac_jacobian(np.full(16, 1.0 / 16), 1.0)
        assert jac[0, 0] == pytest.approx(0.5)
        assert jac[1, 1] == pytest.approx(1.0)
        assert jac[0, 3] == pytest.approx(0.5)

    def test_half_interaction_splits_between_false_and_and(self):
        omega, _ = trainers.covjac_effective(np.array([[0.0, 0.0, 0.0, 0.5]]), 1.0)
        top = np.argsort(-omega[0], kind="stable")[:2]
        assert set(top.tolist()) == {NAME_TO_GATE["FALSE"], NAME_TO_GATE["AND"]}
        assert omega[0, NAME_TO_GATE["FALSE"]] == pytest.approx(omega[0, NAME_TO_GATE["AND"]])


class TestFactorial:
    def test_iwp_ste_rounding(self):
        raw = np.array([[0.5, 0.51, -3.0, 2.0]])
        s_hat, ids, coeffs = trainers.iwp_ste_effective(raw)
        assert s_hat[0].tolist() == [0, 1, 0, 1]
        assert ids.tolist() == [NAME_TO_GATE["A"]]
        assert coeffs[0].tolist() == CODEBOOK[NAME_TO_GATE["A"]].tolist()

    def test_iwp_ste_gradient_one_active_corner(self, binary_inputs):
        a, b = binary_inputs
        grad, _ = trainers.iwp_ste_backward(np.zeros((1, 4)), a, b, np.ones_like(a))
        assert grad[0].tolist() == [8, 8, 8, 8]

    def test_iwp_free_deploys_by_sign(self):
        raw = np.array([[-1.0, 2.0, 3.0, -0.5]])
        assert trainers.hard_gate_ids(Method.IWP_FREE, raw).tolist() == [NAME_TO_GATE["XOR"]]

    def test_multilinear_free_deploys_by_corner_sign(self):
        raw = CODEBOOK[[NAME_TO_GATE["AND"]]].astype(np.float64) * 4 - np.array([[2.0, 0, 0, 0]])
        # corner pre-activations: -2, -2, -2, +2
        assert trainers.hard_gate_ids(Method.MULTILINEAR_FREE, raw).tolist() == [NAME_TO_GATE["AND"]]


class TestDispatch:
    def test_hard_ids_logit_ties(self):
        raw = np.zeros((3, 16))
        assert trainers.hard_gate_ids(Method.SOFT_MIX, raw).tolist() == [0, 0, 0]

    def test_selection_weights_sum_to_one(self, rng):
        for method in Method:
            raw = trainers.init_params(method, 6, 1.0, rng).astype(np.float64)
            weights = trainers.selection_weights(method, raw, 1.0)
            assert weights.shape == (6, 16)
            np.testing.assert_allclose(weights.sum(axis=1), 1.0)

    def test_layer_backward_skips_input_grads(self, rng, binary_inputs):
        a, b = binary_inputs
        raw = rng.normal(size=(1, 4))
        _, cache = trainers.layer_forward(Method.MULTILINEAR_COVJAC, raw, a, b)
        grad, da, db = trainers.layer_backward(cache, np.ones_like(a), need_input_grads=False)
        assert grad.shape == (1, 4)
        assert da is None and db is None


class TestBasisMetrics:
    def test_canonical(self):
        assert trainers.basis_metrics(BasisSpec()) == (0.25, 1.0, 0.0)

    def test_walsh_full_coverage_zero_coherence(self):
        rho, kappa, bias = trainers.basis_metrics(BasisSpec(BasisKind.WALSH))
        assert rho == 1.0
        assert kappa == pytest.approx(0.0, abs=1e-12)
        assert bias > 0

    def test_smoothed(self):
        rho, kappa, bias = trainers.basis_metrics(BasisSpec(BasisKind.SMOOTHED, epsilon=0.2))
        assert rho == 1.0
        assert kappa == pytest.approx(1.0)
        assert bias > 0

    @pytest.mark.parametrize("spec", [
        BasisSpec(BasisKind.EXPECTED_VALUE),
        BasisSpec(BasisKind.UNIFORM),
        BasisSpec(BasisKind.AFFINE, alpha=0.5, beta=0.0),
    ])
    def test_degenerate_bases_rejected(self, spec):
        with pytest.raises(ValueError, match="degenerate"):
            trainers.basis_metrics(spec)
