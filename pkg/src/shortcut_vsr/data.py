"""Synthetic data with closed-form posteriors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .flow import expand_scalar


@dataclass(frozen=True)
class GaussianMixture:
    """Equal-weight isotropic Gaussian mixture.

    The default is two tight modes in 2-D, far enough apart that a
    one-step flow sampler lands between them.
    """

    means: tuple = ((-2.0, -1.0), (2.0, 1.0))
    std: float = 0.3

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.means, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.integers(len(self.means), size=n)
        return self.mu[k] + self.std * rng.standard_normal((n, self.dim))

    def __call__(self, rng, n):
        return self.sample(rng, n)

    def posterior_velocity(self, xt, t) -> np.ndarray:
        """Exact ``E[x1 - x0 | x_t]`` under the linear interpolant."""
        xt = np.asarray(xt, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt.shape[0],))
        s2 = self.std ** 2
        var = (1 - t) ** 2 * s2 + t ** 2                        # (B,)
        resid = xt[:, None, :] - (1 - t)[:, None, None] * self.mu[None]   # (B, K, n)
        logw = -0.5 * np.sum(resid ** 2, axis=2) / var[:, None]
        w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
        gain0 = ((1 - t) * s2 / var)[:, None, None]
        gain1 = (t / var)[:, None, None]
        e_x0 = self.mu[None] + gain0 * resid
        e_x1 = gain1 * resid
        return np.einsum("bk,bkn->bn", w, e_x1 - e_x0)

    def conditional_variance_floor(self, rng, n: int, t_sampler) -> float:
        """Monte-Carlo estimate of the irreducible flow loss ``E||v - E[v|x_t]||^2 / dim``."""
        x0 = self.sample(rng, n)
        x1 = rng.standard_normal(x0.shape)
        t = t_sampler(rng, n)
        tt = expand_scalar(t, x0)
        xt = (1 - tt) * x0 + tt * x1
        r = (x1 - x0) - self.posterior_velocity(xt, t)
        return float(np.mean(r ** 2))


def gaussian_data(sigma: float, dim: int = 1):
    def draw(rng, n):
        return sigma * rng.standard_normal((n, dim))

    return draw
