import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsb import tensor as T
from bsb.tensor import Tape, Tensor, backward

from oracles import finite_difference, relative_error


def grad_of(tensor, grads):
    return grads[tensor.node_id]


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(a, b).data, b.data)

    def test_dot_product(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0], [4.0]])
        assert T.matmul(a, b).data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((4, 2)))
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(a, b)

    def test_grad_of_sum_wrt_a_is_column_sums_of_b(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)))
        with Tape() as tape:
            loss = T.tensor_sum(T.matmul(a, b))
        da = grad_of(a, backward(tape, loss))
        col_sums = b.data.sum(axis=1)
        for row in da:
            np.testing.assert_allclose(row, col_sums, rtol=1e-12)

    def test_grad_matches_finite_differences(self, rng):
        a0 = rng.standard_normal((3, 4))
        b = Tensor(rng.standard_normal((4, 2)))
        a = Tensor(a0, requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.matmul(a, b))
        da = grad_of(a, backward(tape, loss))
        fd = finite_difference(lambda x: float((x @ b.data).sum()), a0)
        assert relative_error(da, fd) <= 1e-4

    def test_batched_matmul_grads(self, rng):
        a0 = rng.standard_normal((2, 3, 4))
        b0 = rng.standard_normal((2, 4, 5))
        a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
        w = rng.standard_normal((2, 3, 5))
        with Tape() as tape:
            out = T.matmul(a, b)
            loss = T.tensor_sum(T.mul(out, Tensor(w)))
        grads = backward(tape, loss)
        fd_a = finite_difference(lambda x: float(((x @ b0) * w).sum()), a0)
        fd_b = finite_difference(lambda x: float(((a0 @ x) * w).sum()), b0)
        assert relative_error(grad_of(a, grads), fd_a) <= 1e-4
        assert relative_error(grad_of(b, grads), fd_b) <= 1e-4

    def test_identity_associativity_exact(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
        i = Tensor(np.eye(2))
        left = T.matmul(T.matmul(a, i), b).data
        right = T.matmul(a, T.matmul(i, b)).data
        assert np.array_equal(left, right)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-15)

    def test_shift_invariance(self, rng):
        x = rng.standard_normal(7)
        a = T.softmax(Tensor(x), axis=-1).data
        b = T.softmax(Tensor(x + 123.456), axis=-1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_closed_form_values(self):
        out = T.softmax(Tensor([1.0, 2.0, 3.0]), axis=-1)
        np.testing.assert_allclose(
            out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8
        )

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_rows_sum_to_one(self, row):
        out = T.softmax(Tensor([row]), axis=-1)
        assert np.all(out.data >= 0)
        assert abs(out.data.sum() - 1.0) <= 1e-9

    def test_grad_matches_finite_differences(self, rng):
        x0 = rng.standard_normal((2, 5))
        w = rng.standard_normal((2, 5))
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(T.softmax(x, axis=-1), Tensor(w)))
        dx = grad_of(x, backward(tape, loss))
        fd = finite_difference(
            lambda v: float(
                (np.exp(v - v.max(-1, keepdims=True))
                 / np.exp(v - v.max(-1, keepdims=True)).sum(-1, keepdims=True) * w).sum()
            ),
            x0,
        )
        assert relative_error(dx, fd) <= 1e-4


class TestLayerNorm:
    def gamma_beta(self, h):
        return Tensor(np.ones(h)), Tensor(np.zeros(h))

    def test_constant_row_damped_by_eps(self):
        g, b = self.gamma_beta(4)
        out = T.layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), g, b)
        np.testing.assert_allclose(out.data, np.zeros(4), atol=1e-6)

    def test_zero_gamma_broadcasts_beta(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        g = Tensor(np.zeros(4))
        b = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
        out = T.layer_norm(x, g, b)
        np.testing.assert_allclose(out.data, np.tile(b.data, (3, 1)), atol=1e-15)

    def test_closed_form_values(self):
        g, b = self.gamma_beta(4)
        out = T.layer_norm(Tensor([1.0, 2.0, 3.0, 4.0]), g, b)
        np.testing.assert_allclose(
            out.data, [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865],
            atol=1e-6,
        )

    def test_normalizes_mean_and_variance(self, rng):
        x = rng.standard_normal((6, 16))
        g, b = self.gamma_beta(16)
        out = T.layer_norm(Tensor(x), g, b).data
        assert np.abs(out.mean(axis=-1)).max() <= 1e-9
        assert np.abs(out.var(axis=-1) - 1.0).max() <= 1e-6

    def test_grad_matches_finite_differences(self, rng):
        x0 = rng.standard_normal((2, 6))
        g0 = rng.standard_normal(6)
        b0 = rng.standard_normal(6)
        w = rng.standard_normal((2, 6))
        eps = 1e-12

        def ref(x, g, b):
            mu = x.mean(-1, keepdims=True)
            var = x.var(-1, keepdims=True)
            return float((((x - mu) / np.sqrt(var + eps) * g + b) * w).sum())

        x, g, b = (Tensor(a, requires_grad=True) for a in (x0, g0, b0))
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(T.layer_norm(x, g, b, eps), Tensor(w)))
        grads = backward(tape, loss)
        assert relative_error(grad_of(x, grads), finite_difference(lambda v: ref(v, g0, b0), x0)) <= 1e-4
        assert relative_error(grad_of(g, grads), finite_difference(lambda v: ref(x0, v, b0), g0)) <= 1e-4
        assert relative_error(grad_of(b, grads), finite_difference(lambda v: ref(x0, g0, v), b0)) <= 1e-4


class TestGelu:
    def test_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptote(self):
        assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-6

    def test_phi_of_one(self):
        assert abs(T.gelu(Tensor([1.0])).data[0] - 0.8413447) <= 1e-6

    @pytest.mark.parametrize("form", ["erf", "tanh"])
    def test_grad_matches_finite_differences(self, form, rng):
        x0 = rng.standard_normal(9)
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.gelu(x, form=form))

        def ref(v):
            t = Tensor(v)
            return float(T.gelu(t, form=form).data.sum())

        dx = grad_of(x, backward(tape, loss))
        assert relative_error(dx, finite_difference(ref, x0)) <= 1e-4


class TestBackward:
    def test_sum_grad_is_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(x)
        np.testing.assert_array_equal(grad_of(x, backward(tape, loss)), np.ones((3, 5)))

    def test_square_grad_is_2x(self, rng):
        x0 = rng.standard_normal(6)
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x, x))
        np.testing.assert_allclose(grad_of(x, backward(tape, loss)), 2 * x0, rtol=1e-12)

    def test_non_scalar_loss_rejected(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(T.GradientError):
            backward(tape, y)

    def test_untracked_loss_rejected(self):
        x = Tensor([1.0])
        with Tape() as tape:
            pass
        with pytest.raises(T.GradientError):
            backward(tape, x)

    def test_random_graph_gradients(self, rng):
        # composite graph touching most primitives at once
        x0 = rng.standard_normal((4, 6))
        w0 = rng.standard_normal((6, 3))
        x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)

        def ref(xv, wv):
            h = xv @ wv
            p = np.exp(h - h.max(-1, keepdims=True))
            p = p / p.sum(-1, keepdims=True)
            from scipy.special import erf

            g = h * 0.5 * (1 + erf(h / np.sqrt(2)))
            return float((p * g).sum() + (xv * xv).mean())

        with Tape() as tape:
            h = T.matmul(x, w)
            loss = T.add(
                T.tensor_sum(T.mul(T.softmax(h, axis=-1), T.gelu(h))),
                T.mean(T.mul(x, x)),
            )
        grads = backward(tape, loss)
        assert relative_error(grad_of(x, grads), finite_difference(lambda v: ref(v, w0), x0)) <= 1e-4
        assert relative_error(grad_of(w, grads), finite_difference(lambda v: ref(x0, v), w0)) <= 1e-4


class TestDropoutAndLookups:
    def test_dropout_deterministic_given_seed(self, rng):
        x = Tensor(np.ones((100,)))
        a = T.dropout(x, 0.5, np.random.default_rng(7)).data
        b = T.dropout(x, 0.5, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)

    def test_dropout_inverted_scaling(self):
        x = Tensor(np.ones(100_00))
        out = T.dropout(x, 0.25, np.random.default_rng(0)).data
        assert set(np.unique(out)).issubset({0.0, 1.0 / 0.75})
        assert abs(out.mean() - 1.0) < 0.05

    def test_dropout_zero_p_is_identity(self):
        x = Tensor(np.ones(8))
        assert T.dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_dropout_grad_uses_mask(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        with Tape() as tape:
            y = T.dropout(x, 0.5, np.random.default_rng(3))
            loss = T.tensor_sum(y)
        g = grad_of(x, backward(tape, loss))
        np.testing.assert_array_equal((g > 0), (y.data > 0))

    def test_embedding_lookup_and_scatter(self, rng):
        table = Tensor(rng.standard_normal((10, 4)), requires_grad=True)
        ids = np.array([[1, 1, 3], [0, 9, 1]])
        with Tape() as tape:
            out = T.embedding(table, ids)
            loss = T.tensor_sum(out)
        np.testing.assert_array_equal(out.data, table.data[ids])
        g = grad_of(table, backward(tape, loss))
        assert g[1].tolist() == [3.0, 3.0, 3.0, 3.0]  # id 1 used three times
        assert g[2].tolist() == [0.0, 0.0, 0.0, 0.0]

    def test_embedding_range_check(self):
        table = Tensor(np.zeros((4, 2)))
        with pytest.raises(T.ShapeError):
            T.embedding(table, np.array([4]))

    def test_pick_and_take_rows_grads(self, rng):
        x0 = rng.standard_normal((5, 7))
        x = Tensor(x0, requires_grad=True)
        rows = np.array([0, 2, 2])
        cols = np.array([3, 1, 6])
        with Tape() as tape:
            taken = T.take_rows(x, rows)
            picked = T.pick(taken, cols)
            loss = T.tensor_sum(picked)
        g = grad_of(x, backward(tape, loss))
        expect = np.zeros_like(x0)
        for r, c in zip(rows, cols):
            expect[r, c] += 1.0
        np.testing.assert_array_equal(g, expect)


class TestNumericsAndDtype:
    def test_non_finite_op_output_raises(self):
        x = Tensor([700.0])
        with pytest.raises(T.NumericError):
            # exp overflow inside log_softmax's forward is fine (stable),
            # but a huge product overflows mul
            T.mul(Tensor([1e308]), Tensor([1e308]))
        assert x.data[0] == 700.0

    def test_non_finite_constructor_raises(self):
        with pytest.raises(T.NumericError):
            Tensor([np.nan])

    def test_constructor_copies(self):
        arr = np.ones(3)
        t = Tensor(arr)
        arr[0] = 99.0
        assert t.data[0] == 1.0

    def test_f32_mode_preserved(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        assert x.dtype == np.float32
        assert T.add(x, x).dtype == np.float32
        assert Tensor([1.0], dtype="f32").dtype == np.float32

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_random_small_graphs_gradcheck(seed):
    # random composition of the primitive set, checked against finite differences
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((3, 4))
    w0 = rng.standard_normal((4, 4))
    ops = rng.integers(0, 3, size=3)

    def forward_np(xv):
        h = xv @ w0
        for op in ops:
            if op == 0:
                e = np.exp(h - h.max(-1, keepdims=True))
                h = e / e.sum(-1, keepdims=True)
            elif op == 1:
                from scipy.special import erf

                h = h * 0.5 * (1 + erf(h / np.sqrt(2)))
            else:
                h = h + xv @ w0
        return float((h * h).mean())

    x = Tensor(x0, requires_grad=True)
    w_t = Tensor(w0)
    with Tape() as tape:
        h = T.matmul(x, w_t)
        for op in ops:
            if op == 0:
                h = T.softmax(h, axis=-1)
            elif op == 1:
                h = T.gelu(h)
            else:
                h = T.add(h, T.matmul(x, w_t))
        loss = T.mean(T.mul(h, h))
    g = backward(tape, loss)[x.node_id]
    fd = finite_difference(forward_np, x0)
    assert relative_error(g, fd) <= 1e-4
