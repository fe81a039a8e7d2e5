"""
Module provides tests to test the neural network building blocks.
"""
import math
import numpy as np
import pytest

from pathomil.rng import CanonicalRng, derive_seed
from pathomil.nn import AffineParams, affine, gelu, gelu_exact, softmax, dropout, \
    smooth_labels, FocalLossConfig, focal_loss, weighted_cross_entropy, AdamState, adam_step, \
    finite_diff_grad, MODE_TRAIN, MODE_EVAL
from pathomil.exceptions import NumericalError

from .utils import assert_grad_close


def test_affine():
    assert np.allclose(affine(np.array([1., 2.]), AffineParams(np.eye(2), np.zeros(2))),
                       [1., 2.])
    assert np.allclose(affine(np.array([7., -1.]), AffineParams(np.zeros((2, 2)),
                                                                np.array([3., 4.]))), [3., 4.])
    p = AffineParams(np.array([[1., 2.], [3., 4.]]), np.array([.5, -.5]))
    assert np.allclose(affine(np.array([1., 1.]), p), [3.5, 6.5])

    with pytest.raises(ValueError):
        affine(np.ones(3), p)


def test_gelu():
    assert gelu(0.) == 0.
    assert abs(gelu(10.) - 10.) < 1e-9
    assert abs(gelu(1.) - 0.841192) < 1e-5

    x = np.linspace(-4, 4, 81)
    assert np.max(np.abs(gelu(x) - gelu_exact(x))) < 1e-3


def test_softmax():
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    assert np.allclose(softmax(np.array([math.log(2.), 0.])), [2 / 3, 1 / 3], atol=1e-12)

    p = softmax(np.array([1000., 0.]))
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.)

    with pytest.raises(ValueError):
        softmax(np.array([]))


def test_dropout():
    v = np.ones(100000)
    rng = CanonicalRng(42)
    assert np.array_equal(dropout(v, 0., MODE_TRAIN, rng), v)
    assert np.array_equal(dropout(v, .4, MODE_EVAL), v)

    out = dropout(v, .4, MODE_TRAIN, rng)
    assert .99 <= out.mean() <= 1.01
    assert set(np.unique(out).tolist()) <= {0., 1. / .6}

    with pytest.raises(ValueError):
        dropout(v, .4, MODE_TRAIN)
    with pytest.raises(ValueError):
        dropout(v, 1., MODE_TRAIN, rng)


def test_smooth_labels():
    assert np.allclose(smooth_labels(0, .1, 3), [.9 + .1 / 3, .1 / 3, .1 / 3])
    assert np.array_equal(smooth_labels(1, 0., 3), [0., 1., 0.])
    assert np.allclose(smooth_labels(2, .3, 3), [.1, .1, .8])

    rng = CanonicalRng(7)
    for _ in range(100):
        eps = rng.uniform() * .9
        y = smooth_labels(rng.randbelow(3), eps, 3)
        assert abs(y.sum() - 1.) < 1e-12
        assert y.min() == eps / 3

    with pytest.raises(ValueError):
        smooth_labels(3, .1, 3)


def test_focal_loss():
    cfg = FocalLossConfig(alpha=(1., 1., 1.), gamma=0., smoothing_eps=0.)
    loss, _ = focal_loss(np.zeros(3), smooth_labels(0, 0., 3), 0, cfg)
    assert loss == pytest.approx(math.log(3.))

    loss, _ = focal_loss(np.array([50., 0., 0.]), smooth_labels(0, 0., 3), 0, cfg)
    assert loss < 1e-10

    cfg = FocalLossConfig(alpha=(3., 1., 1.), gamma=2., smoothing_eps=0.)
    logits = np.log(np.array([.3, .35, .35]))
    loss, _ = focal_loss(logits, smooth_labels(0, 0., 3), 0, cfg)
    assert abs(loss - 1.76984) < 1e-4

    with pytest.raises(ValueError):
        focal_loss(logits, smooth_labels(2, 0., 3), -1, cfg)
    with pytest.raises(ValueError):
        focal_loss(logits, smooth_labels(2, 0., 3), 3, cfg)


def test_focal_loss_reduces_to_cross_entropy():
    cfg = FocalLossConfig(alpha=(1., 1., 1.), gamma=0., smoothing_eps=0.)
    rng = CanonicalRng(derive_seed(42, 5))
    for _ in range(1000):
        logits = rng.gaussian_array(3) * 3.
        label = rng.randbelow(3)
        loss, grad = focal_loss(logits, smooth_labels(label, 0., 3), label, cfg)
        ce, ce_grad = weighted_cross_entropy(logits, label, np.ones(3))
        assert abs(loss - ce) < 1e-12
        assert np.allclose(grad, ce_grad, atol=1e-12)


def test_focal_loss_gradient():
    rng = CanonicalRng(3)
    cfg = FocalLossConfig(alpha=(1., 3., 1.), gamma=2., smoothing_eps=.1)
    for _ in range(20):
        logits = rng.gaussian_array(3)
        label = rng.randbelow(3)
        target = smooth_labels(label, cfg.smoothing_eps, 3)
        _, grad = focal_loss(logits, target, label, cfg)
        numeric = finite_diff_grad(lambda z: focal_loss(z, target, label, cfg)[0], logits)
        assert_grad_close(grad, numeric, rel_tol=1e-6)


def test_weighted_cross_entropy():
    loss, _ = weighted_cross_entropy(np.zeros(3), 1, np.ones(3))
    assert loss == pytest.approx(math.log(3.))

    loss2, _ = weighted_cross_entropy(np.zeros(3), 1, np.array([1., 2., 1.]))
    assert loss2 == pytest.approx(2. * loss)

    loss, _ = weighted_cross_entropy(np.array([2., 0., 0.]), 0, np.ones(3))
    assert abs(loss - .23955) < 1e-4

    with pytest.raises(ValueError):
        weighted_cross_entropy(np.zeros(3), 0, np.array([1., 0., 1.]))


def test_adam_step():
    params = np.array([.5, -1.])
    new_params, state = adam_step(params, np.zeros(2), AdamState(1e-3), 0)
    assert np.array_equal(new_params, params)
    assert state.step_count == 1

    new_params, _ = adam_step(np.zeros(1), np.ones(1), AdamState(3e-5), 10)
    assert new_params[0] == pytest.approx(-3e-5 / (1. + 1e-8), rel=1e-12)

    new_params, _ = adam_step(np.zeros(1), np.ones(1), AdamState(3e-5, warmup_epochs=5), 0)
    assert new_params[0] == pytest.approx(-6e-6, rel=1e-6)

    state = AdamState(1e-3, warmup_epochs=5)
    assert state.effective_lr(4) == pytest.approx(1e-3)
    assert state.effective_lr(100) == pytest.approx(1e-3)

    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState(1e-3), 0)


def test_finite_diff_grad():
    assert abs(finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.]))[0] - 6.) < 1e-8
    assert np.array_equal(finite_diff_grad(lambda x: 1., np.ones(4)), np.zeros(4))

    x = np.array([1., 2.])
    finite_diff_grad(lambda z: float(np.sum(z ** 2)), x)
    assert np.array_equal(x, [1., 2.])

    with pytest.raises(NumericalError):
        finite_diff_grad(lambda z: float("nan"), x)
