import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from deepgat import autodiff as ad
from deepgat.autodiff import Tape, Tensor, grad_check
from deepgat.exceptions import ContractError, DomainError, NonFiniteError
from deepgat.graph import build_graph

from conftest import random_graph


def probe(out, rng):
    """Scalar ``sum(out * R)`` with a fixed random ``R`` so every output entry matters."""
    r = Tensor(rng.standard_normal(out.shape))
    return ad.sum_all(ad.elementwise_mul(out, r))


def check(fn, params, rng, tol=1e-6):
    weights = {}

    def f():
        out = fn(params)
        if out.shape not in weights:
            weights[out.shape] = Tensor(np.random.default_rng(7).standard_normal(out.shape))
        return ad.sum_all(ad.elementwise_mul(out, weights[out.shape]))

    assert grad_check(f, params) < tol


def t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForward:
    def test_matmul_identity(self, rng):
        b = rng.standard_normal((2, 3))
        assert np.array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(b)).value, b)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ContractError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_concat_shape(self):
        out = ad.concat_cols(Tensor(np.ones((4, 2))), Tensor(np.ones((4, 3))))
        assert out.shape == (4, 5)

    def test_activation_values(self):
        x = Tensor(np.array([[0.0, -1e3, 2.0]]))
        assert np.array_equal(ad.activation(x, "identity").value, x.value)
        elu = ad.activation(x, "elu").value
        assert elu[0, 0] == 0.0
        assert elu[0, 1] == pytest.approx(-1.0, abs=1e-12)
        assert elu[0, 2] == 2.0
        assert np.allclose(ad.activation(x, "tanh").value, np.tanh(x.value))

    def test_edge_softmax_examples(self):
        equal = ad.edge_softmax(Tensor(np.zeros((4, 1))), np.array([0, 4]))
        assert np.allclose(equal.value.ravel(), 0.25, atol=1e-15)
        two = ad.edge_softmax(Tensor(np.log([[1.0], [3.0]])), np.array([0, 2]))
        assert np.allclose(two.value.ravel(), [0.25, 0.75], atol=1e-15)

    @given(arrays(np.float64, (9, 1), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_edge_softmax_groups_and_shift(self, scores, c):
        offsets = np.array([0, 2, 3, 7, 9])
        a = ad.edge_softmax(Tensor(scores), offsets).value.ravel()
        sums = np.add.reduceat(a, offsets[:-1])
        assert np.all(np.abs(sums - 1) <= 1e-12)
        shifted = ad.edge_softmax(Tensor(scores + c), offsets).value.ravel()
        assert np.allclose(a, shifted, atol=1e-12)

    def test_neighborhood_aggregate_examples(self):
        g = build_graph([(0, 1), (1, 2), (0, 2)], 3)
        alpha = Tensor(np.full((g.num_directed_entries, 1), 1 / 3))
        out = ad.neighborhood_aggregate(alpha, Tensor(np.eye(3)), g.csr_offsets, g.csr_targets)
        assert np.allclose(out.value, 1 / 3, atol=1e-15)
        iso = build_graph([], 1)
        h = np.array([[1.5, -2.0]])
        out = ad.neighborhood_aggregate(Tensor(np.ones((1, 1))), Tensor(h), iso.csr_offsets, iso.csr_targets)
        assert np.array_equal(out.value, h)

    def test_cross_entropy_examples(self):
        targets = np.eye(2)[[0, 1, 1]]
        mask = np.array([True, True, False])
        assert ad.cross_entropy(Tensor(targets.copy()), targets, mask).item() <= 1e-11
        assert ad.cross_entropy(Tensor(np.full((3, 2), 0.5)), targets, mask).item() == pytest.approx(np.log(2), abs=1e-15)
        with pytest.raises(DomainError):
            ad.cross_entropy(Tensor(targets), targets, np.zeros(3, dtype=bool))

    def test_non_finite_trips(self):
        with pytest.raises(NonFiniteError):
            ad.scale(Tensor(np.ones((1, 1))), np.inf)

    def test_no_recording_outside_tape(self, rng):
        a = t(rng, 2, 2)
        ad.matmul(a, a)
        with Tape() as tape:
            ad.matmul(a, a)
            ad.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        assert len(tape) == 1


class TestGradients:
    def test_trace_of_product(self, rng):
        a, b, c = t(rng, 3, 4), Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal((3, 2)))

        def f():
            return ad.sum_all(ad.elementwise_mul(ad.matmul(a, b), c))

        assert grad_check(f, {"A": a}, h=1e-5) < 1e-6
        # closed form: d/dA tr((AB)^T C) = C B^T
        a.zero_grad()
        with Tape() as tape:
            out = f()
        tape.backward(out)
        assert np.allclose(a.grad, c.value @ b.value.T, atol=1e-14)

    def test_sum_is_ones(self, rng):
        w = t(rng, 3, 3)
        assert grad_check(lambda: ad.sum_all(w), {"W": w}) <= 1e-10
        assert np.array_equal(w.grad, np.ones((3, 3)))

    @pytest.mark.parametrize(
        "name,fn,shapes",
        [
            ("matmul", lambda p: ad.matmul(p["a"], p["b"]), {"a": (3, 4), "b": (4, 2)}),
            ("add", lambda p: ad.add(p["a"], p["b"]), {"a": (3, 2), "b": (3, 2)}),
            ("sub", lambda p: ad.sub(p["a"], p["b"]), {"a": (3, 2), "b": (3, 2)}),
            ("scale", lambda p: ad.scale(p["a"], -2.5), {"a": (3, 2)}),
            ("mul", lambda p: ad.elementwise_mul(p["a"], p["b"]), {"a": (3, 2), "b": (3, 2)}),
            ("add_n", lambda p: ad.add_n([p["a"], p["b"], p["a"]]), {"a": (2, 2), "b": (2, 2)}),
            ("mean_n", lambda p: ad.mean_n([p["a"], p["b"]]), {"a": (2, 3), "b": (2, 3)}),
            ("concat", lambda p: ad.concat_cols(p["a"], p["b"]), {"a": (3, 2), "b": (3, 1)}),
            ("slice", lambda p: ad.slice_cols(p["a"], 1, 3), {"a": (3, 4)}),
            ("gather", lambda p: ad.gather_rows(p["a"], np.array([0, 2, 2, 1, 0])), {"a": (3, 2)}),
            ("rowwise_dot", lambda p: ad.rowwise_dot(p["a"], p["b"]), {"a": (4, 3), "b": (4, 3)}),
            ("elu", lambda p: ad.activation(p["a"], "elu"), {"a": (4, 3)}),
            ("tanh", lambda p: ad.activation(p["a"], "tanh"), {"a": (4, 3)}),
            ("identity", lambda p: ad.activation(p["a"], "identity"), {"a": (4, 3)}),
            ("row_softmax", lambda p: ad.row_softmax(p["a"]), {"a": (4, 3)}),
            ("edge_softmax", lambda p: ad.edge_softmax(p["a"], np.array([0, 3, 4, 7])), {"a": (7, 1)}),
        ],
    )
    def test_op_against_finite_differences(self, rng, name, fn, shapes):
        params = {k: t(rng, *s) for k, s in shapes.items()}
        if name == "elu":
            # keep away from the kink at 0
            params["a"].value += np.sign(params["a"].value) * 0.1
        check(fn, params, rng, tol=1e-6)

    def test_neighborhood_aggregate_gradients(self, rng):
        g = random_graph(rng, 8, 0.4)
        raw = t(rng, g.num_directed_entries, 1)
        h = t(rng, 8, 3)

        def fn(p):
            alpha = ad.edge_softmax(p["raw"], g.csr_offsets)
            return ad.neighborhood_aggregate(alpha, p["h"], g.csr_offsets, g.csr_targets)

        check(fn, {"raw": raw, "h": h}, rng, tol=1e-5)

    def test_cross_entropy_gradient(self, rng):
        logits = t(rng, 6, 3)
        targets = np.eye(3)[rng.integers(0, 3, 6)]
        mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)

        def f():
            return ad.cross_entropy(ad.row_softmax(logits), targets, mask)

        assert grad_check(f, {"logits": logits}) < 1e-5

    def test_reused_tensor_accumulates(self, rng):
        a = t(rng, 3, 3)
        assert grad_check(lambda: ad.sum_all(ad.matmul(a, ad.matmul(a, a))), {"a": a}) < 1e-6

    def test_detach_blocks_gradient(self, rng):
        a = t(rng, 2, 2)
        with Tape() as tape:
            out = ad.sum_all(ad.add(ad.detach(a), a))
        tape.backward(out)
        assert np.array_equal(a.grad, np.ones((2, 2)))

    def test_replay_identical(self, rng):
        a, b = t(rng, 4, 3), t(rng, 3, 2)
        results = []
        for _ in range(2):
            a.zero_grad(), b.zero_grad()
            with Tape() as tape:
                out = ad.sum_all(ad.activation(ad.matmul(a, b), "tanh"))
            tape.backward(out)
            results.append((out.value.copy(), a.grad.copy(), b.grad.copy()))
        for x, y in zip(*results):
            assert np.array_equal(x, y)

    def test_step_range(self, rng):
        a = t(rng, 1, 1)
        for h in (1e-8, 1e-2):
            with pytest.raises(ContractError):
                grad_check(lambda: ad.sum_all(a), {"a": a}, h=h)

    def test_sampled_coordinates(self, rng):
        a = t(rng, 30, 30)
        assert grad_check(lambda: ad.sum_all(ad.activation(a, "tanh")), {"a": a}, max_coords=10) < 1e-6
