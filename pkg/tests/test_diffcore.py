import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scanhmer import diffcore as dc
from scanhmer.diffcore import ShapeError, Tensor, checkpoint
from scanhmer.diffcore.checkpoint import CheckpointError
from scanhmer.selftest import primitive_cases

CASES = primitive_cases(np.random.default_rng(0))


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, dtype=np.float64)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    np.testing.assert_allclose(dc.matmul(Tensor(np.eye(3)), Tensor(a)).data, a, rtol=1e-6)


def test_softmax_uniform():
    np.testing.assert_allclose(Tensor(np.zeros(3)).softmax().data, [1 / 3] * 3)


def test_softmax_large_values_are_stable():
    p = Tensor(np.array([1000.0, 1000.0]), dtype=np.float64).softmax().data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_analytic_gradient():
    x = leaf([1.0, 2.0])
    dc.backward(((x * 2.0) * (x * 2.0)).sum())
    np.testing.assert_allclose(x.grad, [8.0, 16.0])


def test_backward_on_constant():
    x = leaf([1.0, 2.0])
    dc.backward((x * 0.0).sum() + 3.0)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_accumulates():
    x = leaf([1.0, -2.0, 0.5])
    for _ in range(2):
        dc.backward((x * x).sum())
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        dc.backward(leaf([1.0, 2.0]) * 2.0)


def test_shape_error_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as err:
        dc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    msg = str(err.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 5)" in msg


def test_no_broadcast_beyond_bias():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((2, 1)))


def test_log_clamp():
    v = Tensor(np.array([0.0]), dtype=np.float64).log().data
    assert v[0] == pytest.approx(np.log(1e-12))


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with dc.no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_precision_context():
    with dc.precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_avgpool_factors():
    x = Tensor(np.arange(16.0).reshape(1, 16), dtype=np.float64)
    once = dc.avgpool(x, (2,))
    twice = dc.avgpool(once, (2,))
    assert once.shape == (1, 8) and twice.shape == (1, 4)
    np.testing.assert_allclose(twice.data[0], [1.5, 5.5, 9.5, 13.5])
    g = dc.avgpool(Tensor(np.ones((2, 4, 6))), (2, 2))
    assert g.shape == (2, 2, 3)


def test_same_padding_convs():
    assert dc.conv1d(Tensor(np.ones((2, 9))), Tensor(np.ones((3, 2, 7)))).shape == (3, 9)
    assert dc.conv2d(Tensor(np.ones((1, 5, 6))), Tensor(np.ones((4, 1, 3, 3)))).shape == (4, 5, 6)


def test_dropout_is_identity_at_eval(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    np.testing.assert_array_equal(dc.dropout(x, 0.5, rng, training=False).data, x.data)


def test_grad_check_identity_is_exact():
    # dyadic values and step keep the central difference free of rounding
    x = leaf([0.25, -1.25, 2.0])
    rep = dc.grad_check(lambda: x.sum(), x, h=2.0 ** -10)
    assert rep.max_rel_error == 0.0


def test_grad_check_tanh_at_zero():
    with dc.precision(np.float64):
        x = leaf([0.0])
        rep = dc.grad_check(lambda: x.tanh().sum(), x, h=1e-4, rtol=1e-3)
        assert rep.passed
        dc.backward(x.tanh().sum())
        assert x.grad[0] == pytest.approx(1.0)


def test_grad_check_catches_wrong_gradient():
    x = leaf([1.0, 2.0])
    # a detached branch yields a zero analytic gradient
    rep = dc.grad_check(lambda: (x.detach() * x.detach()).sum() + 0.0 * x.sum(), x)
    assert not rep.passed


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    f, leaves = CASES[name]
    with dc.precision(np.float64):
        rep = dc.grad_check(f, leaves, h=1e-5, rtol=1e-3)
    assert rep.passed, f"{name}: {rep.max_rel_error:.2e} at {rep.worst}"


def test_maxout_gradient_goes_to_winner():
    from scanhmer.nn import maxout

    x = leaf([1.0, 3.0, 2.0, 0.0])
    dc.backward(maxout(x).sum())
    np.testing.assert_array_equal(x.grad, [0, 1, 1, 0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    with dc.precision(np.float64):
        p = Tensor(x).softmax().data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    p32 = Tensor(x.astype(np.float32)).softmax().data
    np.testing.assert_allclose(p32.sum(axis=-1, dtype=np.float64), 1.0, atol=1e-6)


# -- checkpoint archive ---------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"enc.block0.conv.w": rng.normal(size=(3, 2, 5)), "b": rng.normal(size=(4,)), "s": np.array(1.5)}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, tensors)
    back = checkpoint.load(path)
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k].astype(np.float32))
    assert checkpoint.dumps(back) == path.read_bytes()
    assert path.read_bytes().startswith(b"SCANCKPT1")


def test_checkpoint_errors(rng):
    blob = checkpoint.dumps({"w": rng.normal(size=(2, 3))})
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"NOTACKPT" + blob[9:])
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:-3])


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       arrays(np.float32, st.lists(st.integers(1, 3), max_size=3).map(tuple),
                              elements=st.floats(-1e6, 1e6, width=32)),
                       max_size=4))
def test_checkpoint_bytes_stable(tensors):
    blob = checkpoint.dumps(tensors)
    assert checkpoint.dumps(checkpoint.loads(blob)) == blob
