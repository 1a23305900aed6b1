import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pledgespec.diffcore import Adam, ParameterStore, Tape, Var, gradient_check, ops
from pledgespec.heads import (DISTRIBUTION_KINDS, HEAD_KINDS, HeadConfig,
                              HeadError, binomial_masses, decode, expectation,
                              gaussian_target, head_forward, head_loss,
                              init_head_params, joint_loss, one_hot,
                              poisson_masses, temperature_softmax)


def _weakly_unimodal(masses, tol=1e-12):
    m = np.asarray(masses)
    for k in range(1, len(m) - 1):
        if m[k] < min(m[k - 1], m[k + 1]) - tol:
            return False
    return True


def _head_store(kind, input_dim=6, classes=7, seed=0, **kw):
    config = HeadConfig(kind=kind, classes=classes, **kw)
    store = ParameterStore()
    init_head_params(store, np.random.default_rng(seed), input_dim, config)
    return config, store


class TestBinomial:
    def test_center_mass(self):
        # C(6,3) / 2^6
        assert binomial_masses(0.5, 7)[3] == pytest.approx(0.3125)

    def test_degenerate_endpoints(self):
        lo = binomial_masses(0.0, 7)
        hi = binomial_masses(1.0, 7)
        assert lo[0] == 1.0 and lo[1:].sum() == 0.0
        assert hi[6] == 1.0 and hi[:6].sum() == 0.0

    def test_sums_to_one(self):
        for p in (0.1, 0.37, 0.5, 0.99):
            assert binomial_masses(p, 7).sum() == pytest.approx(1.0, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(HeadError):
            binomial_masses(1.2, 7)

    @given(st.floats(0.0, 1.0))
    def test_weakly_unimodal(self, p):
        assert _weakly_unimodal(binomial_masses(p, 7))


class TestPoisson:
    def test_zero_count_mass(self):
        assert poisson_masses(1.0, 7)[0] == pytest.approx(math.exp(-1.0))

    def test_mode_tie_at_unit_rate(self):
        m = poisson_masses(1.0, 7)
        assert m[0] == pytest.approx(m[1])

    def test_small_rate_concentrates_low(self):
        m = poisson_masses(1e-6, 7)
        assert m[0] / m.sum() > 0.999

    def test_invalid_rate(self):
        with pytest.raises(HeadError):
            poisson_masses(float("nan"), 7)
        with pytest.raises(HeadError):
            poisson_masses(-1.0, 7)

    @given(st.floats(1e-4, 50.0))
    def test_weakly_unimodal(self, lam):
        assert _weakly_unimodal(poisson_masses(lam, 7))


class TestTemperatureSoftmax:
    def test_uniform_on_constant_scores(self):
        np.testing.assert_allclose(temperature_softmax(np.zeros(3), 1.7),
                                   np.full(3, 1 / 3))

    def test_two_class_closed_form(self):
        # softplus(tau_raw) = 1 at tau_raw = ln(e - 1)
        q = temperature_softmax(np.array([1.0, 0.0]), math.log(math.e - 1.0))
        np.testing.assert_allclose(q, [0.7311, 0.2689], atol=5e-5)

    def test_zero_raw_temperature_is_log_two(self):
        phi = np.array([0.4, -1.2, 0.9])
        got = temperature_softmax(phi, 0.0)
        z = phi / math.log(2.0)
        want = np.exp(z - z.max())
        np.testing.assert_allclose(got, want / want.sum(), atol=1e-12)

    def test_sharpens_as_tau_shrinks(self):
        phi = np.array([1.0, 0.0, -1.0])
        cold = temperature_softmax(phi, -8.0)
        hot = temperature_softmax(phi, 8.0)
        assert cold[0] > hot[0]
        assert hot.max() - hot.min() < 0.25


class TestGaussianTarget:
    def test_boundary_class_mass(self):
        m = gaussian_target(1, sigma=1.0, classes=7)
        assert m[0] == pytest.approx(0.4057, abs=2e-4)

    def test_valid_distribution(self):
        for y in range(1, 8):
            for sigma in (0.3, 1.0, 2.5):
                m = gaussian_target(y, sigma, 7)
                assert (m >= 0).all()
                assert m.sum() == pytest.approx(1.0, abs=1e-12)

    def test_adjacent_bins_tie_on_integer_mean(self):
        m = gaussian_target(3, sigma=1.0, classes=7)
        assert m[2] == pytest.approx(m[3])

    def test_small_sigma_one_hot_with_centered_bins(self):
        m = gaussian_target(4, sigma=1e-3, classes=7, centered_bins=True)
        assert m[3] == pytest.approx(1.0, abs=1e-9)

    def test_monotone_outside_adjacent_pair(self):
        for y in range(1, 8):
            for sigma in (0.4, 1.0, 2.0):
                m = gaussian_target(y, sigma, 7)
                hi = min(y, 6)        # 0-indexed upper bin of the adjacent pair
                lo = y - 1
                for i in range(lo):
                    assert m[i] <= m[i + 1] + 1e-12
                for i in range(hi + 1, 7):
                    assert m[i] <= m[i - 1] + 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(HeadError):
            gaussian_target(0, 1.0, 7)
        with pytest.raises(HeadError):
            gaussian_target(8, 1.0, 7)


class TestExpectationAndLoss:
    def test_uniform_expectation(self):
        assert expectation(np.full(7, 1 / 7)) == pytest.approx(4.0)

    def test_one_hot_expectation(self):
        q = np.zeros(7)
        q[4] = 1.0
        assert expectation(q) == pytest.approx(5.0)

    def test_joint_loss_hand_case(self):
        config = HeadConfig(kind="categorical", classes=2, alpha=1.0)
        loss = joint_loss(np.array([0.5, 0.5]), 1.5, 1, config)
        assert loss == pytest.approx(0.9431, abs=5e-5)

    def test_one_hot_prediction_zero_loss(self):
        config = HeadConfig(kind="categorical", classes=7, alpha=1.0)
        q = one_hot(np.array([3]), 7)[0]
        assert joint_loss(q, 3.0, 3, config) == pytest.approx(0.0, abs=1e-9)

    def test_alpha_zero_is_pure_distribution_loss(self):
        config0 = HeadConfig(kind="categorical", classes=7, alpha=0.0)
        q = np.full(7, 1 / 7)
        # fx is far off, yet alpha = 0 ignores the squared term
        assert joint_loss(q, 7.0, 1, config0) == pytest.approx(math.log(7.0))

    def test_regression_losses(self):
        l2 = HeadConfig(kind="regression_l2")
        l1 = HeadConfig(kind="regression_l1")
        assert joint_loss(None, 4.5, 2, l2) == pytest.approx(6.25)
        assert joint_loss(None, 4.5, 2, l1) == pytest.approx(2.5)

    def test_config_validation(self):
        with pytest.raises(HeadError):
            HeadConfig(kind="ordinal_logit")
        with pytest.raises(HeadError):
            HeadConfig(classes=1)
        with pytest.raises(HeadError):
            HeadConfig(alpha=-0.1)
        with pytest.raises(HeadError):
            HeadConfig(sigma=0.0)


class TestHeadForward:
    def test_distributions_sum_to_one(self, rng):
        # 250 random encodings through each distribution head
        for kind in DISTRIBUTION_KINDS:
            config, store = _head_store(kind)
            enc = Var(rng.normal(size=(250, 6)))
            out = head_forward(enc, store, config)
            sums = out.q.value.sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_counting_heads_stay_unimodal(self, rng):
        for kind in ("binomial", "poisson"):
            config, store = _head_store(kind)
            enc = Var(rng.normal(size=(100, 6), scale=2.0))
            q = head_forward(enc, store, config).q.value
            for row in q:
                assert _weakly_unimodal(row)

    def test_expectation_in_class_range(self, rng):
        for kind in DISTRIBUTION_KINDS:
            config, store = _head_store(kind)
            enc = Var(rng.normal(size=(50, 6), scale=3.0))
            fx = head_forward(enc, store, config).fx.value
            assert (fx >= 1.0).all() and (fx <= 7.0).all()

    def test_gradients_all_heads(self, rng):
        enc_fixed = rng.normal(size=(3, 6))
        labels = np.array([2, 5, 7])
        for kind in HEAD_KINDS:
            config, store = _head_store(kind, seed=11)

            def graph():
                out = head_forward(Var(enc_fixed), store, config)
                return head_loss(out, labels, config)

            errors = gradient_check(graph, store, eps=1e-6)
            assert max(errors.values()) <= 1e-4, (kind, errors)

    def test_gauss_cross_entropy_minimized_at_target(self):
        config = HeadConfig(kind="gauss", classes=7, sigma=1.0)
        target = gaussian_target(4, 1.0, 7)[None, :]
        store = ParameterStore()
        store.add("z", np.zeros((1, 7)))
        opt = Adam(store, lr=0.05)
        for _ in range(4000):
            with Tape() as tape:
                loss = ops.cross_entropy_logits(store["z"], target)
            store.zero_grad()
            tape.backward(loss)
            opt.step()
        q = ops.softmax(store["z"]).value[0]
        # the CE floor is the target entropy, attained only at q = p*
        entropy = float(-(target * np.log(target)).sum())
        assert float(loss.value) - entropy < 1e-6
        np.testing.assert_allclose(q, target[0], atol=1e-3)
        del config

    def test_decode_classification_argmax(self, rng):
        config, store = _head_store("classification")
        enc = Var(rng.normal(size=(8, 6)))
        out = head_forward(enc, store, config)
        preds = decode(out, config)
        for p, row in zip(preds, out.q.value):
            assert p.value == float(np.argmax(row) + 1)

    def test_decode_distributional_matches_expectation(self, rng):
        config, store = _head_store("gauss")
        enc = Var(rng.normal(size=(8, 6)))
        out = head_forward(enc, store, config)
        for p in decode(out, config):
            assert p.q is not None
            assert p.value == pytest.approx(expectation(p.q), abs=1e-9)

    def test_decode_regression_clamped(self, rng):
        config, store = _head_store("regression_l2")
        enc = Var(rng.normal(size=(40, 6), scale=50.0))
        preds = decode(head_forward(enc, store, config), config)
        for p in preds:
            assert 1.0 <= p.value <= 7.0
            assert p.q is None

    def test_deterministic(self, rng):
        enc = rng.normal(size=(4, 6))
        config, store = _head_store("poisson")
        a = head_forward(Var(enc), store, config).q.value
        b = head_forward(Var(enc), store, config).q.value
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 7), st.floats(0.3, 3.0))
    def test_gauss_loss_floor_is_target_entropy(self, y, sigma):
        # CE(p*, q) >= H(p*) with equality only at q = p*
        config = HeadConfig(kind="gauss", classes=7, sigma=sigma)
        target = gaussian_target(y, sigma, 7)
        entropy = float(-(target * np.log(np.maximum(target, 1e-300))).sum())
        assert joint_loss(target, expectation(target), y, config) >= entropy - 1e-9
        del config
