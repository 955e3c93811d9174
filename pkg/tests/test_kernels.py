import numpy as np
import pytest

from ccf import kernels
from ccf.kernels import python as pyk

compiled = kernels.compiled
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def _instance(rng, n=40, p=7, q=3, k=2):
    X = np.ascontiguousarray(rng.standard_normal((n + k, p)))
    Y = np.ascontiguousarray(rng.standard_normal((n, q)))
    beta = rng.standard_normal(p)
    return X, Y, beta, k, float(np.sum(Y * Y))


def _direct_g1(X, Y, beta, k):
    n = Y.shape[0]
    f = X @ beta
    F = np.array([[f[k + i - a] for a in range(k + 1)] for i in range(n)])
    G = np.linalg.lstsq(F, Y, rcond=None)[0].T
    E = Y - F @ G.T
    return np.sum(E * E) / n


def test_python_value_matches_direct_loop(rng):
    for _ in range(5):
        X, Y, beta, k, yy = _instance(rng)
        assert pyk.g1_value(X, Y, beta, k, yy) == pytest.approx(_direct_g1(X, Y, beta, k), rel=1e-10)


@needs_compiled
@pytest.mark.parametrize("shape", [(30, 4, 1, 0), (50, 12, 5, 3), (136, 200, 50, 3), (20, 3, 2, 1)])
def test_compiled_matches_python(rng, shape):
    n, p, q, k = shape
    X, Y, beta, k, yy = _instance(rng, n, p, q, k)
    v1 = pyk.g1_value(X, Y, beta, k, yy)
    v2 = compiled.g1_value(X, Y, beta, k, yy)
    assert v2 == pytest.approx(v1, rel=1e-10)
    a = pyk.g1_value_grad(X, Y, beta, k, yy)
    b = compiled.g1_value_grad(X, Y, beta, k, yy)
    assert b[0] == pytest.approx(a[0], rel=1e-10)
    np.testing.assert_allclose(b[1], a[1], rtol=1e-9, atol=1e-12 * np.abs(a[1]).max())
    np.testing.assert_allclose(b[2], a[2], rtol=1e-9, atol=1e-12)


@needs_compiled
def test_compiled_singular_design():
    X = np.zeros((12, 3))
    Y = np.ones((10, 2))
    beta = np.array([1.0, 0.0, 0.0])
    assert compiled.g1_value(X, Y, beta, 2, 20.0) == np.inf
    assert pyk.g1_value(X, Y, beta, 2, 20.0) == np.inf
    v, g, G = compiled.g1_value_grad(X, Y, beta, 2, 20.0)
    assert v == np.inf and G is None and np.all(np.isnan(g))


@needs_compiled
def test_threshold_and_prox_parity(rng):
    v = rng.standard_normal(50)
    np.testing.assert_array_equal(compiled.soft_threshold(v, 0.4), pyk.soft_threshold(v, 0.4))
    beta = rng.standard_normal(50)
    beta /= np.linalg.norm(beta)
    g = rng.standard_normal(50)
    np.testing.assert_allclose(compiled.prox_point(beta, g, 0.1, 0.5), pyk.prox_point(beta, g, 0.1, 0.5),
                               atol=1e-15)
    assert compiled.prox_point(beta, g, 1.0, 1e3) is None
    assert pyk.prox_point(beta, g, 1.0, 1e3) is None


def test_prox_point_is_unit(rng):
    beta = rng.standard_normal(9)
    beta /= np.linalg.norm(beta)
    out = pyk.prox_point(beta, rng.standard_normal(9), 0.05, 0.3)
    assert abs(np.linalg.norm(out) - 1) < 1e-12


def test_backend_switch():
    before = kernels.active
    try:
        assert kernels.set_backend("python") is pyk
        assert kernels.backend_name() == "python"
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
        if compiled is not None:
            kernels.set_backend("cython")
            assert kernels.backend_name() == "cython"
    finally:
        kernels.active = before
