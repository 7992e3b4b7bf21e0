import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhajam.checks import primitive_cases
from mhajam.neural import AdamState, ParamStore, Tape, Tensor, adam_step, grad_check, load_arrays, ops, save_arrays


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -------------------------------------------------------------- forward values

def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(4, 4))
    assert np.array_equal(ops.matmul(Tensor(a), Tensor(np.eye(4))).data, a)


def test_softmax_constant_is_uniform():
    out = ops.softmax(Tensor(np.full((2, 7), 3.3))).data
    np.testing.assert_allclose(out, 1 / 7)


def test_lstm_zero_weights_closed_form():
    c = np.array([[0.4, -1.2, 2.0]])
    h, c2 = ops.lstm_cell_step(Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), Tensor(c),
                               Tensor(np.zeros((2, 12))), Tensor(np.zeros((3, 12))), Tensor(np.zeros(12)))
    np.testing.assert_allclose(c2.data, 0.5 * c)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c))


def test_lstm_gate_order_against_manual():
    rng = np.random.default_rng(1)
    x, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    wi, wh, b = rng.normal(size=(3, 16)), rng.normal(size=(4, 16)), rng.normal(size=16)
    z = x @ wi + h0 @ wh + b
    i, f, g, o = sig(z[:, :4]), sig(z[:, 4:8]), np.tanh(z[:, 8:12]), sig(z[:, 12:])
    c = f * c0 + i * g
    h, c_out = ops.lstm_cell_step(*(Tensor(v) for v in (x, h0, c0, wi, wh, b)))
    np.testing.assert_allclose(c_out.data, c, rtol=1e-12)
    np.testing.assert_allclose(h.data, o * np.tanh(c), rtol=1e-12)
    h2, c2 = ops.lstm_cell_step_projected(Tensor(x @ wi + b), Tensor(h0), Tensor(c0), Tensor(wh))
    np.testing.assert_allclose(h2.data, h.data, rtol=1e-12)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding="same").data
    # height 7 needs a total pad of 2, width 6 a pad of 1 which goes on the right
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 1)))
    assert out.shape == (2, 4, 4, 3)
    for n in range(2):
        for k in range(4):
            for i in range(4):
                for j in range(3):
                    ref = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[k]).sum() + b[k]
                    assert out[n, k, i, j] == pytest.approx(ref, rel=1e-12, abs=1e-12)
    valid = ops.conv2d(Tensor(x), Tensor(w), None, stride=1, padding="valid").data
    assert valid.shape == (2, 4, 5, 4)


def test_elementwise_values():
    x = np.linspace(-3, 3, 13)
    t = Tensor(x)
    np.testing.assert_allclose(ops.tanh(t).data, np.tanh(x))
    np.testing.assert_allclose(ops.sigmoid(t).data, sig(x))
    np.testing.assert_allclose(ops.exp(t).data, np.exp(x))
    np.testing.assert_allclose(ops.softplus(t).data, np.log1p(np.exp(x)))
    np.testing.assert_allclose(ops.scale(t, 2.5).data, 2.5 * x)
    np.testing.assert_allclose(ops.concat([t, t], axis=0).data, np.concatenate([x, x]))
    assert ops.flatten(Tensor(np.zeros((2, 3, 4)))).shape == (2, 12)


def test_softplus_large_inputs_finite():
    out = ops.softplus(Tensor(np.array([-800.0, 800.0]))).data
    assert np.isfinite(out).all() and out[1] == 800.0


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ValueError, match="add"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_scatter_rows_to_grid_one_hot_probe():
    rows = leaf(np.arange(6.0).reshape(3, 2))
    index = [4, 0, 2]
    for cell in range(5):
        probe = np.zeros((5, 2))
        probe[cell] = [1.0, 1.0]
        rows.grad = np.zeros_like(rows.data)
        with Tape() as tape:
            out = ops.sum(ops.mul(ops.scatter_rows_to_grid(rows, index, 5), Tensor(probe)))
        tape.backward(out)
        expected = np.zeros((3, 2))
        if cell in index:
            expected[index.index(cell)] = 1.0
        assert np.array_equal(rows.grad, expected)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_softmax_is_a_distribution(b, n, seed):
    x = np.random.default_rng(seed).normal(0, 30, size=(b, n))
    p = ops.softmax(Tensor(x)).data
    assert (p >= 0).all()
    assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-6


def test_forward_bit_deterministic():
    cases = primitive_cases(7)
    for name, (f, inputs) in cases.items():
        a = f(*(Tensor(x) for x in inputs)).data
        b = f(*(Tensor(x) for x in inputs)).data
        assert np.array_equal(a, b), name


# -------------------------------------------------------------- gradients

def test_grad_of_sum_of_squares_exact():
    x = np.random.default_rng(0).normal(size=(3, 4))
    t = leaf(x)
    with Tape() as tape:
        out = ops.sum(ops.square(t))
    tape.backward(out)
    assert np.array_equal(t.grad, 2 * x)
    assert grad_check(lambda a: ops.sum(ops.square(a)), [x]).max_error < 1e-9


def test_random_lstm_step_gradient():
    f, inputs = primitive_cases(3)["lstm_cell_step"]
    assert grad_check(f, inputs).max_error < 1e-5


@pytest.mark.parametrize("seed", range(100))
def test_every_primitive_gradient(seed):
    failures = {}
    for name, (f, inputs) in primitive_cases(seed).items():
        err = grad_check(f, inputs).max_error
        if not err < 1e-5:
            failures[name] = err
    assert not failures


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_linear_softmax_random_shapes(b, n_in, n_out, seed):
    rng = np.random.default_rng(seed)
    wt = rng.normal(size=(b, n_out))

    def f(x, w, bias):
        return ops.sum(ops.mul(ops.log_softmax(ops.tanh(ops.linear(x, w, bias))), wt))

    # fan-in scaled weights keep tanh out of saturation, where gradients shrink to roundoff level
    assert grad_check(f, [rng.normal(size=(b, n_in)), rng.normal(size=(n_in, n_out)) / np.sqrt(n_in),
                          rng.normal(size=n_out) * 0.5]).max_error < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 7), st.integers(3, 7), st.sampled_from([1, 2]), st.sampled_from(["same", "valid"]),
       st.integers(0, 2**31 - 1))
def test_conv2d_random_shapes(h, w, stride, padding, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(1, 2, h, w)), rng.normal(size=(3, 2, 3, 3))
    shape = ops.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).shape
    wt = rng.normal(size=shape)
    f = lambda a, b: ops.sum(ops.mul(ops.conv2d(a, b, stride=stride, padding=padding), wt))  # noqa: E731
    assert grad_check(f, [x, k]).max_error < 1e-5


def test_grad_accumulates_over_reuse():
    t = leaf([1.0, 2.0])
    with Tape() as tape:
        out = ops.sum(ops.add(ops.mul(t, 3.0), ops.square(t)))
    tape.backward(out)
    np.testing.assert_allclose(t.grad, 3 + 2 * t.data)


def test_no_tape_records_nothing():
    t = leaf([1.0])
    out = ops.exp(t)
    assert not out.requires_grad


@pytest.mark.filterwarnings("ignore:invalid value")
def test_grad_check_rejects_non_finite():
    with pytest.raises(ValueError):
        grad_check(lambda a: ops.sum(ops.log(a)), [np.array([-1.0])])


def test_grad_check_flags_corrupted_backward():
    def f(a):
        out = ops.tanh(a)
        return ops.sum(ops.add(out, ops.scale(a, 0.0)))

    good = grad_check(f, [np.array([0.3, -0.2])])
    assert good.max_error < 1e-8

    def wrong(a):
        # forward of tanh, backward of the identity
        y = Tensor(np.tanh(a.data))
        z = ops.add(ops.sub(a, Tensor(a.data)), y)
        return ops.sum(z)

    assert grad_check(wrong, [np.array([0.3, -0.2])]).max_error > 1e-2


# -------------------------------------------------------------- params and Adam

def test_param_store_names_unique_and_ordered():
    ps = ParamStore()
    ps.zeros("b", (2,))
    ps.zeros("a", (3,))
    assert ps.names() == ["b", "a"]
    with pytest.raises(KeyError):
        ps.zeros("a", (1,))
    assert not ps["a"].grad.any()


def test_adam_zero_grad_leaves_params():
    ps = ParamStore(np.float64)
    ps.add("w", [1.0, -2.0])
    st_ = AdamState()
    adam_step(ps, st_)
    assert np.array_equal(ps["w"].data, [1.0, -2.0]) and st_.step == 1


def test_adam_first_step_closed_form():
    ps = ParamStore(np.float64)
    ps.add("w", [1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    ps["w"].grad = g.copy()
    st_ = AdamState(lr=0.01)
    adam_step(ps, st_)
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(ps["w"].data, expected, rtol=1e-12)
    assert not ps["w"].grad.any()
    assert st_.m["w"].shape == ps["w"].shape


def test_adam_descends_on_quadratic():
    ps = ParamStore(np.float64)
    ps.add("x", [1.0])
    st_ = AdamState(lr=0.1)
    values = []
    for _ in range(2):
        x = ps["x"]
        with Tape() as tape:
            loss = ops.sum(ops.square(x))
        values.append(float(loss.data))
        tape.backward(loss)
        adam_step(ps, st_)
    values.append(float(ps["x"].data[0] ** 2))
    assert values[0] > values[1] > values[2]


def test_checkpoint_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"enc.w": rng.normal(size=(3, 4)).astype(np.float32), "b": np.float32([1e-30, -0.0, 7.5])}
    path = tmp_path / "c.mjam"
    save_arrays(path, arrays, {"k": 1})
    raw = path.read_bytes()
    assert raw[:4] == b"MJAM"
    back, meta = load_arrays(path)
    assert meta == {"k": 1}
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ValueError, match="not an MJAM"):
        load_arrays(path)
