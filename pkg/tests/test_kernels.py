import numpy as np
import pytest

from envtricascade import kernels
from envtricascade.kernels import _fallback

try:
    from envtricascade.kernels import _core
except ImportError:  # extension not built
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


@needs_core
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (3, 2, 5, 7), (2, 4, 16, 33)])
def test_layer_fuse_backends_agree(shape):
    rng = np.random.default_rng(sum(shape))
    X = rng.standard_normal(shape) * 3
    w = rng.standard_normal(shape[-1])
    a1, h1 = _core.layer_fuse(X, w)
    a2, h2 = _fallback.layer_fuse(X, w)
    np.testing.assert_allclose(a1, a2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(h1, h2, rtol=1e-12, atol=1e-12)


@needs_core
@pytest.mark.parametrize("shape", [(1, 1, 1), (4, 9, 128), (2, 3, 5)])
def test_attentive_stats_backends_agree(shape):
    rng = np.random.default_rng(sum(shape))
    seq = np.maximum(rng.standard_normal(shape), 0)
    w = rng.standard_normal(shape[-1])
    for x, y in zip(_core.attentive_stats(seq, w, 0.3), _fallback.attentive_stats(seq, w, 0.3)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


@needs_core
def test_core_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        _core.layer_fuse(np.zeros((1, 1, 1, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        _core.attentive_stats(np.zeros((1, 1, 3)), np.zeros(2), 0.0)


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("compiled", "numpy")
    a, h = kernels.layer_fuse(np.ones((1, 2, 1, 1), np.float32), np.ones(1))
    np.testing.assert_allclose(a, 0.5)
