import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pledgespec.diffcore import (Adam, ContainerError, NonFiniteGradientError,
                                 ParameterStore, ShapeError, Tape, Var,
                                 active_tape, gradient_check, load_tensors,
                                 save_tensors)
from pledgespec.diffcore import ops


def _finite(shape, lo=-3.0, hi=3.0):
    return hnp.arrays(np.float64, shape,
                      elements=st.floats(lo, hi, allow_nan=False, width=64))


def _check_scalar_graph(build, arrays, eps=1e-5, tol=1e-4):
    """Wrap arrays in a store and finite-difference the graph over them."""
    store = ParameterStore()
    for name, arr in arrays.items():
        store.add(name, np.asarray(arr, dtype=np.float64))
    errors = gradient_check(lambda: build(store), store, eps=eps)
    worst = max(errors.values())
    assert worst <= tol, f"worst relative error {worst}: {errors}"


class TestPrimitiveGradients:
    """Every primitive differentiates correctly against central differences."""

    def test_elementwise_chain(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        _check_scalar_graph(
            lambda s: ops.total(ops.mul(ops.tanh(s["a"]), ops.sigmoid(s["b"]))),
            {"a": a, "b": b})

    def test_broadcast_add_and_sub(self, rng):
        _check_scalar_graph(
            lambda s: ops.total(ops.sub(ops.add(s["a"], s["b"]), s["c"])),
            {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(1, 3)),
             "c": rng.normal(size=(4, 1))})

    def test_div_and_neg(self, rng):
        _check_scalar_graph(
            lambda s: ops.total(ops.div(s["a"], ops.add(ops.mul(s["b"], s["b"]),
                                                        Var(np.full((2, 3), 0.5))))),
            {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))})

    def test_matmul_concat(self, rng):
        _check_scalar_graph(
            lambda s: ops.total(ops.concat([ops.matmul(s["a"], s["b"]), s["c"]],
                                           axis=1)),
            {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2)),
             "c": rng.normal(size=(3, 2))})

    def test_unaries(self, rng):
        a = rng.normal(size=(3, 3))
        _check_scalar_graph(
            lambda s: ops.total(ops.add(
                ops.exp(ops.mul(Var(np.full((3, 3), 0.3)), s["a"])),
                ops.add(ops.softplus(s["a"]),
                        ops.sqrt(ops.add(ops.mul(s["a"], s["a"]),
                                         Var(np.ones((3, 3)))))))),
            {"a": a})

    def test_log_clamps_away_from_zero(self, rng):
        a = np.abs(rng.normal(size=(2, 2))) + 0.5
        _check_scalar_graph(lambda s: ops.total(ops.log(s["a"])), {"a": a})
        v = ops.log(Var(np.zeros((1, 1))))
        assert v.value[0, 0] == math.log(1e-12)

    def test_absolute_away_from_kink(self, rng):
        a = np.sign(rng.normal(size=(3, 3))) * (0.5 + np.abs(rng.normal(size=(3, 3))))
        _check_scalar_graph(lambda s: ops.total(ops.absolute(s["a"])), {"a": a})

    def test_softmax_cumsum_rows(self, rng):
        _check_scalar_graph(
            lambda s: ops.total(ops.mul(ops.cumsum(ops.softmax(s["a"])), s["w"])),
            {"a": rng.normal(size=(4, 5)), "w": rng.normal(size=(4, 5))})

    def test_reductions(self, rng):
        _check_scalar_graph(
            lambda s: ops.add(ops.mean(ops.sum_rows(s["a"])),
                              ops.total(ops.mean_rows(s["b"]))),
            {"a": rng.normal(size=(5, 3)), "b": rng.normal(size=(4, 2))})

    def test_losses(self, rng):
        logits = rng.normal(size=(4, 7))
        t = rng.dirichlet(np.ones(7), size=4)
        tgt = rng.normal(size=(4, 1))
        _check_scalar_graph(
            lambda s: ops.cross_entropy_logits(s["z"], t), {"z": logits})
        _check_scalar_graph(
            lambda s: ops.squared_error(s["p"], tgt), {"p": rng.normal(size=(4, 1))})

    def test_embedding_gradient_scatters(self):
        store = ParameterStore()
        store.add("table", np.arange(12, dtype=np.float64).reshape(4, 3))
        ids = np.array([[0, 2, 2]])
        _check_scalar_graph(
            lambda s: ops.total(ops.embedding(s["table"], ids)),
            {"table": store["table"].value})

    def test_random_battery(self, rng):
        """100 random elementwise graphs across the primitive set."""
        for trial in range(100):
            r = np.random.default_rng(trial)
            a = r.normal(size=(2, 3))
            b = r.normal(size=(2, 3))
            unary = (ops.tanh, ops.sigmoid, ops.softplus, ops.exp)[trial % 4]
            binary = (ops.add, ops.sub, ops.mul)[trial % 3]
            _check_scalar_graph(
                lambda s, u=unary, bi=binary: ops.total(bi(u(s["a"]), s["b"])),
                {"a": a, "b": b})


class TestSoftmax:
    @given(_finite((3, 7), -30, 30))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one_and_positive(self, logits):
        q = ops.softmax(Var(logits)).value
        assert np.all(q > 0)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance(self, rng):
        z = rng.normal(size=(2, 5))
        a = ops.softmax(Var(z)).value
        b = ops.softmax(Var(z + 100.0)).value
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestCrossEntropy:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_self_entropy(self, seed):
        """H(p) = CE(p, p) on random simplex points."""
        p = np.random.default_rng(seed).dirichlet(np.ones(7), size=2)
        ce = ops.cross_entropy(Var(p), p).value
        entropy = -np.mean(np.sum(p * np.log(p), axis=1))
        assert abs(float(ce) - entropy) < 1e-9

    def test_logits_form_matches_explicit(self, rng):
        z = rng.normal(size=(3, 7))
        t = rng.dirichlet(np.ones(7), size=3)
        a = float(ops.cross_entropy_logits(Var(z), t).value)
        q = ops.softmax(Var(z)).value
        b = -np.mean(np.sum(t * np.log(q), axis=1))
        assert abs(a - b) < 1e-9


class TestScalars:
    def test_softplus_at_zero(self):
        v = ops.softplus(Var(np.zeros((1, 1)))).value
        assert v.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_softplus_extremes_stable(self):
        v = ops.softplus(Var(np.array([[-800.0, 800.0]]))).value
        assert v[0, 0] == 0.0 and v[0, 1] == 800.0


class TestTape:
    def test_backward_requires_scalar(self):
        with Tape() as tape:
            out = ops.add(Var(np.ones((2, 2))), Var(np.ones((2, 2))))
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_no_recording_outside_tape(self):
        assert active_tape() is None
        store = ParameterStore()
        store.add("w", np.ones((1, 1)))
        out = ops.mul(store["w"], store["w"])
        assert out.value.item() == 1.0
        assert np.all(store["w"].grad == 0)

    def test_nested_tapes_are_rejected_or_isolated(self):
        with Tape():
            t = active_tape()
            assert t is not None
        assert active_tape() is None

    def test_gradient_accumulates_across_reuse(self):
        store = ParameterStore()
        store.add("w", np.array([[2.0]]))
        with Tape() as tape:
            w = store["w"]
            out = ops.total(ops.add(ops.mul(w, w), w))  # w^2 + w
        tape.backward(out)
        assert store["w"].grad.item() == pytest.approx(5.0)  # 2w + 1


class TestParameterStore:
    def test_add_rejects_nonfinite(self):
        store = ParameterStore()
        with pytest.raises(ValueError):
            store.add("w", np.array([[np.inf]]))

    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.add("w", np.ones((1, 1)))
        with pytest.raises(KeyError):
            store.add("w", np.ones((1, 1)))

    def test_copy_and_load_round_trip(self, rng):
        store = ParameterStore()
        store.add("a", rng.normal(size=(2, 3)))
        store.add("b", rng.normal(size=(1, 4)))
        snapshot = store.copy_values()
        store["a"].value += 1.0
        store.load_values(snapshot)
        np.testing.assert_array_equal(store["a"].value, snapshot["a"])

    def test_load_shape_mismatch(self):
        store = ParameterStore()
        store.add("a", np.ones((2, 2)))
        with pytest.raises(ShapeError):
            store.load_values({"a": np.ones((3, 3))})

    def test_zero_grad_clears(self):
        store = ParameterStore()
        store.add("w", np.array([[1.0]]))
        with Tape() as tape:
            out = ops.total(ops.mul(store["w"], store["w"]))
        tape.backward(out)
        assert store["w"].grad.item() != 0.0
        store.zero_grad()
        assert store["w"].grad.item() == 0.0

    def test_num_parameters(self):
        store = ParameterStore()
        store.add("a", np.ones((2, 3)))
        store.add("b", np.ones((4, 1)))
        assert store.num_parameters() == 10


class TestAdam:
    def test_quadratic_convergence(self):
        """(theta - 3)^2 reaches the optimum from zero."""
        store = ParameterStore()
        store.add("theta", np.zeros((1, 1)))
        opt = Adam(store, lr=0.05)
        target = Var(np.full((1, 1), 3.0))
        for _ in range(2000):
            store.zero_grad()
            with Tape() as tape:
                diff = ops.sub(store["theta"], target)
                loss = ops.total(ops.mul(diff, diff))
            tape.backward(loss)
            opt.step()
        assert abs(store["theta"].value.item() - 3.0) < 1e-3

    def test_nonfinite_gradient_aborts(self):
        store = ParameterStore()
        store.add("w", np.ones((1, 1)))
        opt = Adam(store, lr=0.1)
        store["w"].grad[...] = np.nan
        with pytest.raises(NonFiniteGradientError):
            opt.step()


class TestSerialize:
    def test_round_trip_f4_precision(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(7,))}
        path = tmp_path / "t.pstc"
        save_tensors(path, tensors, meta={"note": "x"})
        loaded, meta = load_tensors(path)
        assert meta == {"note": "x"}
        for k in tensors:
            np.testing.assert_array_equal(
                loaded[k], tensors[k].astype("<f4").astype(np.float64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.pstc"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ContainerError, match="magic"):
            load_tensors(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v.pstc"
        save_tensors(path, {"a": np.ones(1)})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(ContainerError, match="version"):
            load_tensors(path)


class TestShapeErrors:
    def test_matmul_requires_2d(self):
        with pytest.raises(ShapeError, match="matmul"):
            ops.matmul(Var(np.ones(3)), Var(np.ones((3, 2))))

    def test_binary_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="add"):
            ops.add(Var(np.ones((2, 3))), Var(np.ones((4, 5))))
