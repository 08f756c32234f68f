import numpy as np
import pytest

from clqlab import autodiff as ad
from clqlab.autodiff import (
    NonFiniteError,
    ParameterSet,
    ShapeError,
    Tensor,
    grad_check,
    sgd_step,
    track_kinks,
)


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_scalar_backward_chain():
    x = t(3.0)
    y = ad.exp(x * 2.0) + ad.log(x)
    y.backward()
    assert x.grad == pytest.approx(2 * np.exp(6.0) + 1 / 3.0)


def test_backward_requires_scalar():
    x = t(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_gradient_accumulates_over_shared_inputs():
    x = t(np.array([1.0, 2.0]))
    y = ad.sum_(x * x + x)
    y.backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_broadcast_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        t(np.ones((2, 3))) + t(np.ones(4))


def test_unbroadcast():
    a = t(np.ones((2, 3)))
    b = t(np.ones((1, 3)))
    ad.sum_(a * b).backward()
    assert b.grad.shape == (1, 3)
    assert np.allclose(b.grad, 2.0)


def test_no_grad_builds_no_graph():
    x = t(np.ones(3))
    with ad.no_grad():
        y = x * 2
    assert not y.requires_grad


def test_detach_stops_gradient():
    x = t(2.0)
    y = x * x.detach()
    y.backward()
    assert x.grad == pytest.approx(2.0)


def test_sigmoid_stable_extremes():
    x = t(np.array([-800.0, 0.0, 800.0]))
    s = ad.sigmoid(x)
    assert np.all(np.isfinite(s.data))
    assert s.data[1] == 0.5
    ad.sum_(s).backward()
    assert np.all(np.isfinite(x.grad))


SMOOTH_UNARY = [
    ("exp", lambda x: ad.sum_(ad.exp(x))),
    ("log", lambda x: ad.sum_(ad.log(x * x + 1.0))),
    ("sigmoid", lambda x: ad.sum_(ad.sigmoid(x) * x)),
    ("power", lambda x: ad.sum_(ad.power(x * x + 0.5, 0.3))),
    ("div", lambda x: ad.sum_(x / (x * x + 2.0))),
    ("mean", lambda x: ad.mean(x * x, axis=0).reshape(-1)[0] + ad.mean(x)),
    ("transpose", lambda x: ad.sum_(ad.transpose(x) * np.arange(x.size).reshape(x.shape[::-1]))),
    ("index", lambda x: ad.sum_(x[[0, 0, 1]] * 3.0)),
    ("concat", lambda x: ad.sum_(ad.concat([x, x * x], axis=0) ** 2)),
    ("stack", lambda x: ad.sum_(ad.stack([x, ad.exp(x)], axis=1) * 0.5)),
    ("matmul", lambda x: ad.sum_(ad.matmul(x, ad.transpose(x)))),
]


@pytest.mark.parametrize("name,f", SMOOTH_UNARY, ids=[n for n, _ in SMOOTH_UNARY])
def test_smooth_op_gradients(name, f):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    assert grad_check(f, [x]) < 1e-6


@pytest.mark.parametrize("op", ["relu", "abs", "clip", "maximum", "minimum"])
def test_kinked_op_gradients_away_from_kinks(op):
    rng = np.random.default_rng(1)
    funcs = {
        "relu": lambda x, y: ad.sum_(ad.relu(x) * y),
        "abs": lambda x, y: ad.sum_(ad.abs_(x) * y),
        "clip": lambda x, y: ad.sum_(ad.clip(x, -0.5, 0.5) * y),
        "maximum": lambda x, y: ad.sum_(ad.maximum(x, y)),
        "minimum": lambda x, y: ad.sum_(ad.minimum(x, y)),
    }
    f = funcs[op]
    checked = 0
    while checked < 20:
        x, y = rng.normal(size=5), rng.normal(size=5)
        with track_kinks() as k:
            f(Tensor(x), Tensor(y))
        if k.margin < 1e-3:
            continue
        assert grad_check(f, [x, y]) < 1e-6
        checked += 1


def test_kink_tracker_detects_relu_zero():
    with track_kinks() as k:
        ad.relu(Tensor(np.array([1.0, 1e-9])))
    assert k.margin == pytest.approx(1e-9)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oh, ow = out.shape[2:]
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    assert (oh, ow) == (4, 3)
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_gradients():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(1, 3, 3, 3))
    f = lambda x, w, b: ad.sum_(ad.conv2d(x, w, b, stride=2, padding=1) * r)  # noqa: E731
    assert grad_check(f, [x, w, b]) < 1e-6


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 5, 3, 3))))


def test_bilinear_sample_values_and_padding():
    feat = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    ys = np.array([[0.0, 0.5, 1.5, -1.0, 3.5]])
    xs = np.array([[0.0, 0.5, 2.0, 0.0, 3.0]])
    out = ad.bilinear_sample(Tensor(feat), Tensor(ys), Tensor(xs)).data[0, 0]
    assert out[0] == 0.0
    assert out[1] == pytest.approx((0 + 1 + 4 + 5) / 4)
    assert out[2] == pytest.approx(0.5 * (6 + 10))
    assert out[3] == 0.0  # fully outside
    assert out[4] == pytest.approx(0.5 * 15)  # half of the taps padded


def test_bilinear_sample_gradients():
    rng = np.random.default_rng(4)
    feat = rng.normal(size=(2, 3, 5, 5))
    ys = rng.uniform(-1, 5, size=(2, 6)) + 0.25
    xs = rng.uniform(-1, 5, size=(2, 6)) + 0.25
    r = rng.normal(size=(2, 3, 6))
    f = lambda fe, y, x: ad.sum_(ad.bilinear_sample(fe, y, x) * r)  # noqa: E731
    with track_kinks() as k:
        f(Tensor(feat), Tensor(ys), Tensor(xs))
    assert k.margin > 1e-3
    assert grad_check(f, [feat, ys, xs]) < 1e-6


def test_grad_check_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        grad_check(lambda x: ad.sum_(ad.log(x)), [np.array([-1.0])])


def test_backward_frees_graph():
    x = t(np.ones(2))
    y = ad.sum_(x * 2)
    y.backward()
    assert y._parents == ()


def test_parameter_set_unique_names_and_state():
    ps = ParameterSet()
    ps.add("a", np.ones(3))
    with pytest.raises(ValueError):
        ps.add("a", np.ones(3))
    ps.add("b", np.zeros((2, 2)))
    assert ps.count() == 7
    state = ps.state()
    state["a"][0] = 99.0
    assert ps["a"].data[0] == 1.0
    ps.load_state({"a": np.full(3, 2.0), "b": np.ones((2, 2))})
    assert np.all(ps["a"].data == 2.0)
    with pytest.raises(KeyError):
        ps.load_state({"a": np.ones(3)})


def test_sgd_step_momentum_and_decay():
    ps = ParameterSet()
    p = ps.add("w", np.array([1.0]))
    p.grad = np.array([0.5])
    sgd_step(ps, lr=0.1, momentum=0.9, weight_decay=0.1)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * (0.5 + 0.1))
    assert p.grad is None
    p.grad = np.array([0.5])
    sgd_step(ps, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p.data[0] == pytest.approx(0.94 - 0.1 * (0.9 * 0.6 + 0.5))
