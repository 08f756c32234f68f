import numpy as np
import pytest

from clqlab import kernels
from clqlab import _kernels_py as py


def boxes(rng, n):
    xy = rng.uniform(0, 50, (n, 2))
    wh = rng.uniform(1, 30, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.fixture
def compiled():
    if kernels.compiled_backend is None:
        pytest.skip("compiled extension not built")
    return kernels.compiled_backend


def test_im2col_col2im_parity(compiled, rng):
    xp = rng.normal(size=(2, 3, 9, 8))
    a = py.im2col(xp, 3, 3, 2, 4, 3)
    b = compiled.im2col(xp, 3, 3, 2, 4, 3)
    assert np.array_equal(a, b)
    assert np.allclose(py.col2im(a, 9, 8, 2), compiled.col2im(a, 9, 8, 2), atol=1e-12)


def test_col2im_is_adjoint_of_im2col(backend, rng):
    xp = rng.normal(size=(1, 2, 7, 7))
    cols_g = rng.normal(size=(1, 2, 3, 3, 5, 5))
    lhs = np.sum(kernels.im2col(xp, 3, 3, 1, 5, 5) * cols_g)
    rhs = np.sum(xp * kernels.col2im(cols_g, 7, 7, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_bilinear_parity(compiled, rng):
    feat = rng.normal(size=(2, 4, 6, 5))
    ys = rng.uniform(-2, 7, (2, 30))
    xs = rng.uniform(-2, 6, (2, 30))
    gout = rng.normal(size=(2, 4, 30))
    assert np.allclose(py.bilinear_forward(feat, ys, xs), compiled.bilinear_forward(feat, ys, xs), atol=1e-12)
    for a, b in zip(py.bilinear_backward(feat, ys, xs, gout), compiled.bilinear_backward(feat, ys, xs, gout)):
        assert np.allclose(a, b, atol=1e-10)


def test_iou_and_nms_parity(compiled, rng):
    a, b = boxes(rng, 40), boxes(rng, 25)
    assert np.allclose(py.iou_matrix(a, b), compiled.iou_matrix(a, b), atol=1e-15)
    for thr in (0.3, 0.5, 0.7):
        assert np.array_equal(py.nms_sorted(a, thr), compiled.nms_sorted(a, thr))


def test_nms_sorted_suppresses_strictly_above(backend):
    b = np.array([[0, 0, 2, 2], [1, 1, 3, 3], [0, 0, 2, 2.0]], dtype=float)
    keep = np.asarray(kernels.nms_sorted(b, 1 / 7)).astype(bool)
    assert keep.tolist() == [True, True, False]  # 1/7 is not above 1/7


def test_wrappers_accept_non_contiguous(backend, rng):
    a = boxes(rng, 10)[::2]
    assert kernels.iou_matrix(a, a).shape == (5, 5)
    assert np.allclose(np.diag(kernels.iou_matrix(a, a)), 1.0)


def test_benchmark_script_runs(tmp_path):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--repeat", "1", "--no-e2e", "--csv", str(tmp_path / "b.csv")])
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert len(lines) > 1
