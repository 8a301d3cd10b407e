import zlib

import numpy as np
import pytest
from conftest import central_difference, relative_error

from koopcast import gradcore as gc
from koopcast.gradcore import ConditioningError, Param, ShapeError, Tape


def grad_of(build, params):
    tape = Tape()
    root = build(tape, [tape.param(p) for p in params])
    return root.value, tape.backward(root, params)


def value_of(build, params):
    tape = Tape()
    return float(build(tape, [tape.param(p) for p in params]).value)


# -- worked examples ---------------------------------------------------------


def test_tanh_at_zero():
    tape = Tape()
    x = tape.param(Param(0.0, "x"))
    y = tape.record("tanh", [x])
    assert y.value == 0.0
    assert tape.backward(y)["x"] == pytest.approx(1.0)


def test_square_via_mul():
    tape = Tape()
    x = tape.param(Param(3.0, "x"))
    assert tape.backward(tape.record("mul", [x, x]))["x"] == pytest.approx(6.0)


def test_matvec_identity():
    tape = Tape()
    out = tape.record("matvec", [tape.const(np.eye(2)), tape.const([1.0, 2.0])])
    np.testing.assert_array_equal(out.value, [1.0, 2.0])


def test_sum_of_squares_gradient():
    p = Param(np.array([3.0, 4.0]), "v")
    _, g = grad_of(lambda t, ps: gc.squared_norm(ps[0]), [p])
    np.testing.assert_allclose(g["v"], [6.0, 8.0])


def test_constant_root_has_zero_gradients():
    tape = Tape()
    p = Param(np.ones(3), "unused")
    root = gc.sum(tape.const([1.0, 2.0]))
    grads = tape.backward(root, [p])
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


def test_unreachable_param_maps_to_zero():
    tape = Tape()
    a, b = Param(2.0, "a"), Param(5.0, "b")
    na, _ = tape.param(a), tape.param(b)
    grads = tape.backward(na * na)
    assert grads["a"] == pytest.approx(4.0) and grads["b"] == 0.0


def test_non_scalar_root_rejected():
    tape = Tape()
    v = tape.param(Param(np.ones(2), "v"))
    with pytest.raises(ShapeError):
        tape.backward(v * 2.0)


def test_shape_mismatch_rejected():
    tape = Tape()
    with pytest.raises(ShapeError):
        gc.matmul(tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        gc.add(tape.const(np.ones(3)), tape.const(np.ones(2)))


def test_unknown_primitive():
    with pytest.raises(ValueError):
        Tape().record("erf", [1.0])


def test_param_is_a_single_leaf():
    tape = Tape()
    p = Param(np.ones(2), "p")
    assert tape.param(p) is tape.param(p)
    assert len(tape.params) == 1


def test_nodes_from_other_tape_rejected():
    a, b = Tape(), Tape()
    with pytest.raises(ValueError):
        gc.add(a.const(1.0), b.const(2.0))


# -- linear solve ------------------------------------------------------------


@pytest.mark.parametrize(
    "A,b,x",
    [
        (np.eye(2), [5.0, -1.0], [5.0, -1.0]),
        (np.diag([2.0, 4.0]), [2.0, 4.0], [1.0, 1.0]),
    ],
)
def test_solve_examples(A, b, x):
    tape = Tape()
    np.testing.assert_allclose(gc.solve_linear(tape.const(A), tape.const(b)).value, x)


def test_solve_gradient_matches_finite_differences(rng):
    A = Param(rng.uniform(-1, 1, (4, 4)) + 4 * np.eye(4), "A")
    b = Param(rng.uniform(-1, 1, 4), "b")

    def build(t, ps):
        return gc.squared_norm(gc.solve_linear(*ps))

    _, g = grad_of(build, [A, b])
    for p in (A, b):
        fd = central_difference(lambda: value_of(build, [A, b]), p.value)
        assert relative_error(g[p.name], fd) < 1e-4


def test_solve_matrix_right_hand_side(rng):
    A = rng.uniform(-1, 1, (3, 3)) + 3 * np.eye(3)
    B = rng.uniform(-1, 1, (3, 5))
    tape = Tape()
    np.testing.assert_allclose(gc.solve_linear(tape.const(A), tape.const(B)).value, np.linalg.solve(A, B))


def test_singular_matrix_raises_conditioning_error():
    tape = Tape()
    with pytest.raises(ConditioningError) as info:
        gc.solve_linear(tape.const([[1.0, 2.0], [2.0, 4.0]]), tape.const([1.0, 1.0]))
    assert info.value.condition > gc.PIVOT_RATIO_LIMIT


def test_ill_conditioned_matrix_raises():
    tape = Tape()
    A = np.diag([1.0, 1e-13])
    with pytest.raises(ConditioningError):
        gc.solve_linear(tape.const(A), tape.const([1.0, 1.0]))


def test_conditioning_error_is_a_linalg_error():
    assert issubclass(ConditioningError, np.linalg.LinAlgError)


# -- every primitive against finite differences ----------------------------

UNARY = ["tanh", "exp", "sin", "cos", "sigmoid", "neg", "sum", "squared_norm", "transpose"]


def _away_from_zero(x):
    return np.sign(x) * (0.25 + np.abs(x) * 0.875)


def _unary_cases():
    for op in UNARY:
        yield op, lambda t, ps, op=op: gc.sum(t.record(op, ps)), lambda x: x
    yield "reciprocal", lambda t, ps: gc.sum(gc.reciprocal(ps[0])), _away_from_zero
    yield "log", lambda t, ps: gc.sum(gc.log(ps[0])), lambda x: np.abs(_away_from_zero(x))
    yield "power", lambda t, ps: gc.sum(gc.power(ps[0], 3.0)), lambda x: x
    yield "clip", lambda t, ps: gc.squared_norm(gc.clip(ps[0], -1.0, 1.5)), lambda x: x
    yield "take", lambda t, ps: gc.squared_norm(gc.take(ps[0], [1, 0, 1], axis=1)), lambda x: x


@pytest.mark.parametrize("name,build,transform", list(_unary_cases()), ids=lambda v: v if isinstance(v, str) else "")
def test_unary_primitive_gradients(name, build, transform):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(100):
        p = Param(transform(rng.uniform(-2, 2, (2, 3))), "x")
        _, g = grad_of(build, [p])
        fd = central_difference(lambda: value_of(build, [p]), p.value)
        assert relative_error(g["x"], fd) < 1e-4, name


BINARY = {
    "add": ((2, 3), (3,)),
    "sub": ((3,), (2, 3)),
    "mul": ((2, 3), (2, 3)),
    "matmul": ((2, 3), (3, 4)),
    "matvec": ((2, 3), (3,)),
    "solve_linear": ((3, 3), (3, 2)),
}


@pytest.mark.parametrize("op", sorted(BINARY))
def test_binary_primitive_gradients(op):
    rng = np.random.default_rng(len(op))
    sa, sb = BINARY[op]
    for _ in range(100):
        a = Param(rng.uniform(-2, 2, sa), "a")
        b = Param(rng.uniform(-2, 2, sb), "b")
        if op == "solve_linear":
            a.value += 5 * np.eye(3)

        def build(t, ps):
            out = t.record(op, ps)
            return gc.sum(gc.mul(out, gc.sin(out)))

        _, g = grad_of(build, [a, b])
        for p in (a, b):
            fd = central_difference(lambda: value_of(build, [a, b]), p.value)
            assert relative_error(g[p.name], fd) < 1e-4, (op, p.name)


@pytest.mark.parametrize("op", ["stack", "concat"])
def test_joining_primitive_gradients(op, rng):
    ps = [Param(rng.uniform(-2, 2, 3), f"p{i}") for i in range(3)]
    join = gc.stack if op == "stack" else gc.concat
    weights = np.arange(9.0).reshape(3, 3) if op == "stack" else np.arange(9.0)

    def build(t, nodes):
        return gc.sum(gc.tanh(join(nodes)) * t.const(weights))

    _, g = grad_of(build, ps)
    for p in ps:
        fd = central_difference(lambda: value_of(build, ps), p.value)
        assert relative_error(g[p.name], fd) < 1e-4


def test_three_layer_mlp_gradient(rng):
    sizes = [3, 5, 4, 2]
    Ws = [Param(rng.normal(0, 0.7, (a, b)), f"W{i}") for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
    bs = [Param(rng.normal(0, 0.3, b), f"b{i}") for i, b in enumerate(sizes[1:])]
    X = rng.normal(size=(6, 3))
    Y = rng.normal(size=(6, 2))
    params = Ws + bs

    def build(t, nodes):
        W, b = nodes[:3], nodes[3:]
        h = t.const(X)
        for i in range(3):
            h = h @ W[i] + b[i]
            if i < 2:
                h = gc.tanh(h)
        return gc.squared_norm(h - Y)

    _, g = grad_of(build, params)
    for p in params:
        fd = central_difference(lambda: value_of(build, params), p.value)
        assert relative_error(g[p.name], fd) < 1e-4, p.name


# -- structural properties -------------------------------------------------


def test_backward_is_linear(rng):
    x = Param(rng.uniform(-2, 2, 4), "x")
    A = rng.uniform(-1, 1, (4, 4))

    def l1(t, n):
        return gc.sum(gc.tanh(gc.matvec(t.const(A), n)))

    def l2(t, n):
        return gc.squared_norm(gc.sin(n))

    a, b = 0.7, -2.3
    tape = Tape()
    n = tape.param(x)
    combined = tape.backward(a * l1(tape, n) + b * l2(tape, n))["x"]
    _, g1 = grad_of(lambda t, ps: l1(t, ps[0]), [x])
    _, g2 = grad_of(lambda t, ps: l2(t, ps[0]), [x])
    np.testing.assert_allclose(combined, a * g1["x"] + b * g2["x"], rtol=0, atol=1e-12)


def test_replay_is_deterministic(rng):
    W = Param(rng.normal(size=(3, 3)) + 3 * np.eye(3), "W")
    v = Param(rng.normal(size=3), "v")
    tape = Tape()
    nw, nv = tape.param(W), tape.param(v)
    root = gc.squared_norm(gc.tanh(gc.solve_linear(nw, nv)) * gc.exp(nv))
    first_value = root.value.copy()
    first = tape.backward(root)
    tape.replay()
    np.testing.assert_array_equal(root.value, first_value)
    second = tape.backward(root)
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_replay_tracks_new_param_values():
    p = Param(np.array([1.0, 2.0]), "p")
    tape = Tape()
    root = gc.squared_norm(tape.param(p))
    p.value = np.array([3.0, 4.0])
    tape.replay()
    assert float(root.value) == 25.0
    np.testing.assert_allclose(tape.backward(root)["p"], [6.0, 8.0])


def test_parents_precede_children(rng):
    tape = Tape()
    x = tape.param(Param(rng.normal(size=3), "x"))
    gc.sum(gc.exp(x) * gc.sin(x) + x)
    for node in tape.nodes:
        assert all(p.index < node.index for p in node.parents)


def test_operator_overloads_match_functions():
    tape = Tape()
    a = tape.const([[1.0, 2.0], [3.0, 4.0]])
    b = tape.const([[0.5, -1.0], [2.0, 0.0]])
    np.testing.assert_array_equal((a + b).value, gc.add(a, b).value)
    np.testing.assert_array_equal((2.0 - a).value, 2.0 - a.value)
    np.testing.assert_array_equal((a @ b).value, a.value @ b.value)
    np.testing.assert_array_equal(a.T.value, a.value.T)
    np.testing.assert_array_equal((-a).value, -a.value)
