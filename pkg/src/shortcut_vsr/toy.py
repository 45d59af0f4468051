"""Velocity models for desk-scale experiments.

``GaussianOracle`` and ``FlowMapOracle`` are exact closed-form / quadrature
fields for isotropic Gaussian data.  ``ToyNet`` is a small numpy MLP with
sinusoidal ``(t, d)`` embeddings, an optional condition-injection branch and
a hand-written reverse pass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import DimensionError, DomainError, NumericError
from .flow import expand_scalar

LOG_D_FLOOR = -8.0
CN_STD_FLOOR = 1e-8


def gaussian_alpha(t, sigma: float = 1.0):
    """Slope of ``E[x1 - x0 | x_t] = alpha(t) x_t`` for data ~ N(0, sigma^2 I)."""
    t = np.asarray(t, dtype=np.float64)
    s2 = sigma * sigma
    return (t - (1.0 - t) * s2) / ((1.0 - t) ** 2 * s2 + t * t)


def oracle_velocity(x, t, sigma: float = 1.0) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return expand_scalar(gaussian_alpha(t_arr, sigma), x) * x


@dataclass(frozen=True)
class GaussianOracle:
    """Marginal velocity of the linear interpolant for Gaussian data; ignores ``d``."""

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    def __call__(self, x, t, d=0.0):
        return oracle_velocity(x, t, self.sigma)


@dataclass(frozen=True)
class FlowMapOracle:
    """Exact average velocity over a step of size ``d`` for Gaussian data.

    The marginal ODE is linear, ``dx/dt = alpha(t) x``, so the flow map is a
    scalar gain ``exp(int alpha)``; the integral is evaluated on a fine
    Simpson grid.  ``orientation="forward"`` averages over ``[t, t + d]``,
    ``"reverse"`` over ``[t - d, t]``.
    """

    sigma: float = 1.0
    orientation: str = "reverse"
    n_quad: int = 4097

    def gain(self, t0: float, t1: float) -> float:
        """Flow-map multiplier carrying a state from time ``t0`` to ``t1``."""
        if t0 == t1:
            return 1.0
        s = np.linspace(t0, t1, self.n_quad)
        return float(np.exp(simpson(gaussian_alpha(s, self.sigma), x=s)))

    def __call__(self, x, t, d):
        x = np.asarray(x, dtype=np.float64)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],) if np.ndim(t) or np.ndim(d) else ())
        d_arr = np.broadcast_to(np.asarray(d, dtype=np.float64), t_arr.shape)
        coef = np.empty(t_arr.shape)
        for idx in np.ndindex(t_arr.shape):
            ti, di = float(t_arr[idx]), float(d_arr[idx])
            if di <= 0:
                coef[idx] = gaussian_alpha(ti, self.sigma)
            elif self.orientation == "forward":
                coef[idx] = (self.gain(ti, ti + di) - 1.0) / di
            else:
                coef[idx] = (1.0 - self.gain(ti, ti - di)) / di
        return expand_scalar(coef, x) * x


def sinusoidal_embedding(s, width: int) -> np.ndarray:
    """``[sin(pi 2^k s), cos(pi 2^k s)]`` for ``k < width / 2``; ``s`` is ``(B,)``."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    freqs = np.pi * 2.0 ** np.arange(width // 2)
    ang = s[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def step_size_coordinate(d) -> np.ndarray:
    """Map ``d`` in ``[0, 1]`` to ``[0, 1]`` on a log2 scale (``d <= 2^-8`` maps to 0)."""
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(divide="ignore"):
        ld = np.log2(np.maximum(d, 2.0 ** LOG_D_FLOOR))
    return 1.0 - ld / LOG_D_FLOOR


def _silu(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig, sig


@dataclass(frozen=True)
class NetSpec:
    """Architecture descriptor for :class:`ToyNet`."""

    dim: int = 2
    hidden: tuple = (64, 64, 64)
    emb_width: int = 8
    d_conditioning: bool = True
    cond_dim: int = 0
    inject_multiply: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dim < 1 or self.emb_width < 2 or self.emb_width % 2:
            raise DomainError("dim must be >= 1 and emb_width a positive even number")
        if self.cond_dim and not self.hidden:
            raise DomainError("condition injection needs at least one hidden layer")

    @property
    def in_dim(self) -> int:
        return self.dim + self.emb_width * (2 if self.d_conditioning else 1)

    def layer_shapes(self):
        """``(name, shape)`` for every parameter block, in storage order."""
        sizes = (self.in_dim,) + self.hidden + (self.dim,)
        shapes = []
        for i in range(len(sizes) - 1):
            shapes.append((f"W{i}", (sizes[i], sizes[i + 1])))
            shapes.append((f"b{i}", (sizes[i + 1],)))
        if self.cond_dim:
            shapes.append(("Wc", (self.cond_dim, self.hidden[0])))
            shapes.append(("bc", (self.hidden[0],)))
        return shapes

    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in self.layer_shapes()))

    def to_dict(self):
        return asdict(self)


class ToyNet:
    """MLP velocity model ``v(x, t, d[, cond])`` over flat vectors.

    Layout: ``[x, emb(t), emb(d)]`` -> SiLU hidden layers -> linear output.
    With ``cond_dim > 0`` a linear condition branch is cross-normalised to
    the per-row statistics of the first hidden activation and added to it,
    the sum divided by sqrt(2) (multiplied when ``inject_multiply``).
    """

    def __init__(self, spec: NetSpec = NetSpec(), params=None, seed: int | None = 0, out_scale: float = 0.1):
        self.spec = spec
        self._shapes = spec.layer_shapes()
        self._offsets = {}
        off = 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            self._offsets[name] = (off, off + size, shape)
            off += size
        if params is None:
            params = self.init_params(np.random.default_rng(seed), out_scale)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (off,):
            raise DimensionError(f"expected {off} parameters, got {params.shape}")
        self.params = params.copy()

    def init_params(self, rng, out_scale: float = 0.1) -> np.ndarray:
        blocks = []
        n_layers = len(self.spec.hidden) + 1
        for name, shape in self._shapes:
            if name.startswith("b") or name == "bc":
                blocks.append(np.zeros(shape))
                continue
            w = rng.normal(size=shape) / np.sqrt(shape[0])
            if name == f"W{n_layers - 1}":
                w *= out_scale
            blocks.append(w)
        return np.concatenate([b.ravel() for b in blocks])

    def layer(self, name: str, params=None) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        p = self.params if params is None else params
        return p[lo:hi].reshape(shape)

    def layer_slices(self):
        """``{name: slice}`` into the flat parameter vector."""
        return {name: slice(lo, hi) for name, (lo, hi, _) in self._offsets.items()}

    def with_params(self, params) -> "ToyNet":
        return ToyNet(self.spec, params=params)

    # forward / backward

    def _inputs(self, x, t, d):
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        feats = [x, sinusoidal_embedding(t, self.spec.emb_width)]
        if self.spec.d_conditioning:
            d = np.broadcast_to(np.asarray(d, dtype=np.float64), (B,))
            feats.append(sinusoidal_embedding(step_size_coordinate(d), self.spec.emb_width))
        return np.concatenate(feats, axis=1)

    def forward(self, x, t, d, cond=None, return_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
            if cond is not None:
                cond = np.asarray(cond, dtype=np.float64)[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.dim:
            raise DimensionError(f"expected input of width {self.spec.dim}, got {x.shape}")
        spec = self.spec
        if spec.cond_dim:
            if cond is None:
                raise DimensionError("this network expects a condition input")
            cond = np.asarray(cond, dtype=np.float64)
            if cond.shape != (x.shape[0], spec.cond_dim):
                raise DimensionError(f"condition must be {(x.shape[0], spec.cond_dim)}, got {cond.shape}")
        h = self._inputs(x, t, d)
        cache = {"acts": [h], "pre": [], "sig": []}
        n_layers = len(spec.hidden) + 1
        for i in range(n_layers):
            z = h @ self.layer(f"W{i}") + self.layer(f"b{i}")
            if i == n_layers - 1:
                h = z
                break
            h, sig = _silu(z)
            cache["pre"].append(z)
            cache["sig"].append(sig)
            if i == 0 and spec.cond_dim:
                h = self._inject(h, cond, cache)
            cache["acts"].append(h)
        out = h[0] if single else h
        if return_cache:
            cache["single"] = single
            return out, cache
        return out

    def _inject(self, h, cond, cache):
        c = cond @ self.layer("Wc") + self.layer("bc")
        mu_c = c.mean(axis=1, keepdims=True)
        sd_c = np.maximum(c.std(axis=1, keepdims=True), CN_STD_FLOOR)
        c_hat = (c - mu_c) / sd_c
        mu_h = h.mean(axis=1, keepdims=True)
        sd_h = np.maximum(h.std(axis=1, keepdims=True), CN_STD_FLOOR)
        scale = np.sqrt(2.0) if self.spec.inject_multiply else 1.0 / np.sqrt(2.0)
        cache["inj"] = (cond, h, c_hat, sd_c, mu_h, sd_h, scale)
        return (h + c_hat * sd_h + mu_h) * scale

    def __call__(self, x, t, d, cond=None):
        return self.forward(x, t, d, cond)

    def backward(self, cache, grad_out) -> np.ndarray:
        """Parameter gradient of ``sum(grad_out * output)``."""
        spec = self.spec
        g = np.asarray(grad_out, dtype=np.float64)
        if cache["single"]:
            g = g[None, :]
        grads = {}
        n_layers = len(spec.hidden) + 1
        acts = cache["acts"]
        for i in reversed(range(n_layers)):
            a_in = acts[i]
            grads[f"W{i}"] = a_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i == 0:
                break
            g = g @ self.layer(f"W{i}").T
            if i == 1 and spec.cond_dim:
                g = self._inject_backward(g, grads, cache["inj"])
            z, sig = cache["pre"][i - 1], cache["sig"][i - 1]
            g = g * sig * (1.0 + z * (1.0 - sig))
        flat = np.empty_like(self.params)
        for name, (lo, hi, _) in self._offsets.items():
            blk = grads[name]
            if not np.all(np.isfinite(blk)):
                raise NumericError(f"non-finite gradient in layer {name}", kind=name)
            flat[lo:hi] = blk.ravel()
        return flat

    def _inject_backward(self, g_out, grads, inj):
        cond, h, c_hat, sd_c, mu_h, sd_h, scale = inj
        g = g_out * scale
        H = h.shape[1]
        # through target statistics of the hidden state
        g_mu_h = g.sum(axis=1, keepdims=True)
        g_sd_h = (g * c_hat).sum(axis=1, keepdims=True)
        g_h = g + g_mu_h / H + g_sd_h * (h - mu_h) / (H * sd_h)
        # through the self-normalisation of the condition branch
        g_chat = g * sd_h
        g_c = (g_chat - g_chat.mean(axis=1, keepdims=True)
               - c_hat * (g_chat * c_hat).mean(axis=1, keepdims=True)) / sd_c
        grads["Wc"] = cond.T @ g_c
        grads["bc"] = g_c.sum(axis=0)
        return g_h


def toynet_gradient(net: ToyNet, closure):
    """Reverse-mode gradient of a scalar loss built from network evaluations.

    ``closure(net)`` returns ``(loss, terms)`` where each term is
    ``(cache, grad_out)`` from ``net.forward(..., return_cache=True)``.
    Evaluations left out of ``terms`` are treated as constants (stop-gradient).
    """
    loss, terms = closure(net)
    grad = np.zeros_like(net.params)
    for cache, g in terms:
        grad += net.backward(cache, g)
    return float(loss), grad


@dataclass
class Adam:
    """Adaptive-moment optimiser over a flat parameter vector."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
