import numpy as np
import pytest

from shortcut_vsr.data import GaussianMixture
from shortcut_vsr.experiments import default_mixture, evaluation_batch
from shortcut_vsr.metrics import median_bandwidth, mmd, mmd2
from shortcut_vsr.toy import gaussian_alpha


def mc_posterior_velocity(mix, xt, t, n=400_000, seed=0):
    """Importance-weighted E[x1 - x0 | x_t] from prior draws of x0."""
    rng = np.random.default_rng(seed)
    x0 = mix.sample(rng, n)
    out = []
    for z in xt:
        x1 = (z - (1 - t) * x0) / t
        logw = -0.5 * np.sum(x1 ** 2, axis=1)
        w = np.exp(logw - logw.max())
        out.append(np.sum(w[:, None] * (x1 - x0), axis=0) / w.sum())
    return np.array(out)


def test_posterior_velocity_matches_importance_sampling():
    mix = GaussianMixture()
    xt = np.array([[0.0, 0.0], [1.0, 0.5], [-1.5, -0.2]])
    for t in (0.3, 0.7):
        assert np.allclose(mix.posterior_velocity(xt, t), mc_posterior_velocity(mix, xt, t), atol=0.03)


def test_single_component_posterior_is_gaussian_oracle():
    s = 0.7
    mix = GaussianMixture(means=((0.0,),), std=s)
    x = np.linspace(-3, 3, 11)[:, None]
    for t in (0.1, 0.5, 0.9):
        assert np.allclose(mix.posterior_velocity(x, t), gaussian_alpha(t, s) * x, atol=1e-12)


def test_evaluation_batch_is_balanced_and_antithetic():
    mix = default_mixture()
    ref, x1 = evaluation_batch(mix, 4096, 0)
    assert ref.shape == x1.shape == (4096, 2)
    assert np.array_equal(x1[:2048], -x1[2048:])
    labels = np.argmin(((ref[:, None] - mix.mu[None]) ** 2).sum(-1), axis=1)
    assert np.bincount(labels).tolist() == [2048, 2048]


def test_mmd_properties():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 500, 2))
    assert mmd2(x, x) == pytest.approx(0.0, abs=1e-12)
    assert mmd2(x, y) == pytest.approx(mmd2(y, x))
    assert mmd2(x, y + 3) > 10 * mmd2(x, y)
    assert mmd(x, y + 3) == pytest.approx(np.sqrt(mmd2(x, y + 3)))
    assert abs(mmd2(x, y, unbiased=True)) < mmd2(x, y)


def test_mmd_matches_dense_formula():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(40, 2)), rng.normal(1, 1, size=(30, 2))
    bw = 1.3
    k = lambda a, b: np.exp(-((a[:, None] - b[None]) ** 2).sum(-1) / (2 * bw ** 2))
    dense = k(x, x).mean() + k(y, y).mean() - 2 * k(x, y).mean()
    assert mmd2(x, y, bw) == pytest.approx(dense, rel=1e-12)


def test_median_bandwidth_stable_on_balanced_reference():
    # about half of all pairs cross modes, so the median is only stable when mode counts are fixed
    mix = default_mixture()
    bws = [median_bandwidth(evaluation_batch(mix, n, s)[0]) for s, n in ((0, 4096), (1, 16384), (2, 8192))]
    assert max(bws) / min(bws) < 1.05
