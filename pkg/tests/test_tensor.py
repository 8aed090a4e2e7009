"""Autodiff engine tests: gradients checked against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elicitflow.tensor import (
    DomainError,
    ShapeError,
    Tensor,
    apply_elementwise,
    concat,
    index_select,
    matmul,
    pairwise_distance,
    reduce,
    reshape,
    softmax_expectation,
    sort_with_gradient,
)


def numeric_grad(fn, x, h=1e-6):
    """Central finite differences of scalar fn at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def gradcheck(build, x0, rtol=1e-5, h=1e-6):
    """Compare autodiff gradient of build(Tensor) against finite differences."""
    t = Tensor(x0.copy(), requires_grad=True)
    out = build(t)
    out.backward()
    auto = t.grad

    def scalar(x):
        return build(Tensor(x.copy(), requires_grad=True)).item()

    num = numeric_grad(scalar, x0.copy(), h=h)
    denom = np.maximum(np.abs(num), 1.0)
    assert auto is not None
    assert np.max(np.abs(auto - num) / denom) < rtol, (auto, num)


RNG = np.random.default_rng(20260818)


class TestElementwiseGradients:
    def test_add_sub_mul(self):
        a0 = RNG.normal(size=(4, 3))
        b0 = RNG.normal(size=(4, 3))

        for op in ("add", "sub", "mul"):
            a = Tensor(a0.copy(), requires_grad=True)
            b = Tensor(b0.copy(), requires_grad=True)
            out = reduce("sum", apply_elementwise(op, a, b))
            out.backward()

            def f(x, which=op):
                return reduce(
                    "sum",
                    apply_elementwise(which, Tensor(x), Tensor(b0)),
                ).item()

            num = numeric_grad(f, a0.copy())
            assert np.allclose(a.grad, num, rtol=1e-5, atol=1e-8)

    def test_div(self):
        a0 = RNG.normal(size=(3, 3))
        b0 = RNG.normal(size=(3, 3)) + 3.0
        gradcheck(
            lambda t: reduce("sum", apply_elementwise("div", t, Tensor(b0))), a0
        )
        gradcheck(
            lambda t: reduce("sum", apply_elementwise("div", Tensor(a0), t)), b0
        )

    @pytest.mark.parametrize(
        "op,sampler",
        [
            ("exp", lambda: RNG.normal(size=7)),
            ("log", lambda: RNG.uniform(0.5, 3.0, size=7)),
            ("sigmoid", lambda: RNG.normal(size=7) * 2),
            ("relu", lambda: RNG.normal(size=7) + 0.3),
            ("softplus", lambda: RNG.normal(size=7) * 3),
            ("atan", lambda: RNG.normal(size=7) * 2),
            ("square", lambda: RNG.normal(size=7)),
            ("sqrt", lambda: RNG.uniform(0.5, 4.0, size=7)),
            ("negate", lambda: RNG.normal(size=7)),
        ],
    )
    def test_unary(self, op, sampler):
        x0 = sampler()
        gradcheck(lambda t: reduce("sum", apply_elementwise(op, t)), x0)

    def test_softplus_stable_at_extremes(self):
        x = Tensor(np.array([-800.0, 0.0, 800.0]), requires_grad=True)
        y = apply_elementwise("softplus", x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == pytest.approx(0.0, abs=1e-12)
        assert y.data[2] == pytest.approx(800.0)
        reduce("sum", y).backward()
        assert np.all(np.isfinite(x.grad))

    def test_broadcasting_unbroadcast(self):
        a0 = RNG.normal(size=(4, 3))
        b0 = RNG.normal(size=(3,))
        gradcheck(
            lambda t: reduce("sum", apply_elementwise("mul", Tensor(a0), t) ), b0
        )
        c0 = RNG.normal(size=(4, 1))
        gradcheck(
            lambda t: reduce("sum", apply_elementwise("add", t, Tensor(b0))), c0
        )

    def test_domain_errors_name_op_and_index(self):
        with pytest.raises(DomainError, match="log.*flat index 1"):
            apply_elementwise("log", Tensor(np.array([1.0, -2.0, 3.0])))
        with pytest.raises(DomainError, match="sqrt"):
            apply_elementwise("sqrt", Tensor(np.array([-1.0])))
        with pytest.raises(DomainError, match="div"):
            apply_elementwise("div", Tensor(np.ones(3)), Tensor(np.array([1.0, 0.0, 2.0])))

    def test_incompatible_shapes_raise(self):
        with pytest.raises(ShapeError):
            apply_elementwise("add", Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_unknown_op_rejected(self):
        with pytest.raises(KeyError):
            apply_elementwise("tanh", Tensor(np.ones(2)))


class TestMatmul:
    def test_2d_2d(self):
        a0 = RNG.normal(size=(4, 3))
        b0 = RNG.normal(size=(3, 5))
        gradcheck(lambda t: reduce("sum", matmul(t, Tensor(b0))), a0)
        gradcheck(lambda t: reduce("sum", matmul(Tensor(a0), t)), b0)

    def test_1d_combinations(self):
        a0 = RNG.normal(size=3)
        b0 = RNG.normal(size=3)
        m0 = RNG.normal(size=(3, 4))
        gradcheck(lambda t: matmul(t, Tensor(b0)), a0)  # vec . vec -> scalar
        gradcheck(lambda t: reduce("sum", matmul(t, Tensor(m0))), a0)  # vec @ mat
        gradcheck(lambda t: reduce("sum", matmul(Tensor(m0.T), t)), a0)  # mat @ vec

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        with pytest.raises(ShapeError):
            matmul(Tensor(1.0), Tensor(np.ones(3)))


class TestReduce:
    def test_sum_mean_axes(self):
        x0 = RNG.normal(size=(3, 4))
        for op in ("sum", "mean"):
            gradcheck(lambda t, o=op: reduce(o, t), x0)
            gradcheck(lambda t, o=op: reduce("sum", reduce(o, t, axis=0)), x0)
            gradcheck(
                lambda t, o=op: reduce("sum", reduce(o, t, axis=1, keepdims=True)), x0
            )

    def test_variance_population_convention(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        v = reduce("variance", Tensor(x))
        assert v.item() == pytest.approx(np.var(x))          # /N, not /(N-1)
        s = reduce("std", Tensor(x))
        assert s.item() == pytest.approx(np.std(x))

    def test_variance_std_gradients(self):
        x0 = RNG.normal(size=(5,)) * 2 + 1
        gradcheck(lambda t: reduce("variance", t), x0)
        gradcheck(lambda t: reduce("std", t), x0)
        m0 = RNG.normal(size=(4, 3))
        gradcheck(lambda t: reduce("sum", reduce("variance", t, axis=0)), m0)
        gradcheck(lambda t: reduce("sum", reduce("std", t, axis=1)), m0)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            reduce("sum", Tensor(np.ones((2, 3))), axis=5)


class TestSort:
    def test_values_sorted(self):
        x0 = np.array([3.0, 1.0, 2.0, 1.0])
        out = sort_with_gradient(Tensor(x0))
        assert np.array_equal(out.data, np.array([1.0, 1.0, 2.0, 3.0]))

    def test_gradient_is_permutation(self):
        x0 = RNG.normal(size=9)
        gradcheck(
            lambda t: reduce(
                "sum",
                apply_elementwise(
                    "mul", sort_with_gradient(t), Tensor(np.arange(9.0))
                ),
            ),
            x0,
        )

    def test_ties_split_gradient_stably(self):
        x = Tensor(np.array([2.0, 2.0, 1.0]), requires_grad=True)
        out = sort_with_gradient(x)
        w = Tensor(np.array([10.0, 20.0, 30.0]))
        reduce("sum", apply_elementwise("mul", out, w)).backward()
        # sorted order: x[2], x[0], x[1] (stable for the tied pair)
        assert np.array_equal(x.grad, np.array([20.0, 30.0, 10.0]))

    def test_axis_sort(self):
        x0 = RNG.normal(size=(4, 6))
        w0 = RNG.normal(size=(4, 6))
        gradcheck(
            lambda t: reduce(
                "sum",
                apply_elementwise("mul", sort_with_gradient(t, axis=1), Tensor(w0)),
            ),
            x0,
        )

    def test_scalar_rejected(self):
        with pytest.raises(ShapeError):
            sort_with_gradient(Tensor(1.0))


class TestStructuralOps:
    def test_index_select_repeats_accumulate(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        out = index_select(x, [0, 0, 2])
        reduce("sum", out).backward()
        assert np.array_equal(x.grad, np.array([2.0, 0.0, 1.0]))

    def test_index_select_gradcheck(self):
        x0 = RNG.normal(size=(5, 3))
        idx = np.array([4, 0, 0, 2])
        gradcheck(lambda t: reduce("sum", apply_elementwise(
            "square", index_select(t, idx, axis=0))), x0)

    def test_concat_and_reshape(self):
        a0 = RNG.normal(size=(2, 3))
        b0 = RNG.normal(size=(4, 3))
        gradcheck(
            lambda t: reduce(
                "sum", apply_elementwise("square", concat([t, Tensor(b0)], axis=0))
            ),
            a0,
        )
        gradcheck(
            lambda t: reduce("sum", apply_elementwise("square", reshape(t, (6,)))), a0
        )

    def test_concat_shape_error(self):
        with pytest.raises(ShapeError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], axis=0)


class TestFusedKernels:
    def test_pairwise_distance_values(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        y = np.array([[0.0, 0.0]])
        d = pairwise_distance(Tensor(x), Tensor(y))
        assert np.allclose(d.data, [[0.0], [5.0]])

    def test_pairwise_distance_gradcheck(self):
        a0 = RNG.normal(size=(5, 3))
        b0 = RNG.normal(size=(4, 3))
        gradcheck(lambda t: reduce("sum", pairwise_distance(t, Tensor(b0))), a0)
        gradcheck(lambda t: reduce("sum", pairwise_distance(Tensor(a0), t)), b0)

    def test_pairwise_distance_coincident_subgradient_zero(self):
        x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        d = pairwise_distance(x, Tensor(np.array([[1.0, 2.0]])))
        reduce("sum", d).backward()
        assert np.array_equal(x.grad, np.zeros((1, 2)))

    def test_softmax_expectation_matches_manual(self):
        logits0 = RNG.normal(size=(6, 5))
        vals = np.arange(5.0)
        tau = 0.3
        out = softmax_expectation(Tensor(logits0), vals, tau)
        w = np.exp(logits0 / tau - (logits0 / tau).max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        assert np.allclose(out.data, w @ vals)

    def test_softmax_expectation_gradcheck(self):
        logits0 = RNG.normal(size=(4, 6))
        vals = np.linspace(-2, 3, 6)
        gradcheck(
            lambda t: reduce(
                "sum", apply_elementwise("square", softmax_expectation(t, vals, 0.5))
            ),
            logits0,
        )

    def test_softmax_expectation_bad_tau(self):
        with pytest.raises(DomainError):
            softmax_expectation(Tensor(np.ones((2, 3))), np.arange(3.0), 0.0)


class TestBackwardSemantics:
    def test_nonscalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            apply_elementwise("square", x).backward()

    def test_gradients_accumulate_across_calls(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = apply_elementwise("square", x)
        y.backward()
        y.backward()
        assert x.grad == pytest.approx(8.0)  # 2 calls x d(x^2)/dx = 4

    def test_diamond_graph_accumulates_once_per_path(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        a = apply_elementwise("square", x)     # x^2
        b = apply_elementwise("mul", x, a)     # x^3
        out = apply_elementwise("add", a, b)   # x^2 + x^3
        out.backward()
        assert x.grad == pytest.approx(2 * 3.0 + 3 * 9.0)

    def test_constants_record_no_graph(self):
        a = Tensor(np.ones(3))
        b = Tensor(np.ones(3))
        out = apply_elementwise("add", a, b)
        assert out._parents == ()
        assert not out.requires_grad

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = apply_elementwise("square", x).detach()
        z = apply_elementwise("mul", x, y)
        z.backward()
        assert x.grad == pytest.approx(4.0)  # only the direct factor

    def test_zero_grad_resets(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        apply_elementwise("square", x).backward()
        x.zero_grad()
        assert x.grad is None

    def test_float64_everywhere(self):
        out = apply_elementwise("add", Tensor([1, 2]), Tensor([3.0, 4.0]))
        assert out.data.dtype == np.float64

    def test_operator_sugar(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = ((x * 2 + 1 - 0.5) / 2 - -x)
        y.backward()
        assert y.item() == pytest.approx(6.25)
        assert x.grad == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=2, max_size=12
    )
)
def test_property_sort_preserves_sum_gradient(xs):
    """Sum of sorted values equals sum of values, so gradients are all ones."""
    x = Tensor(np.array(xs), requires_grad=True)
    reduce("sum", sort_with_gradient(x)).backward()
    assert np.array_equal(x.grad, np.ones(len(xs)))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-10, max_value=10, allow_nan=False),
        min_size=1,
        max_size=16,
    )
)
def test_property_variance_matches_numpy(xs):
    x = np.array(xs)
    assert reduce("variance", Tensor(x)).item() == pytest.approx(
        np.var(x), abs=1e-10
    )
