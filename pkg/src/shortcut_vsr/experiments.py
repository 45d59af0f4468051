"""Reusable toy experiments behind the CLI, the demos and the acceptance suite."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import CodecConfig, encode, moving_pattern_clip
from .conditioning import assemble_condition, noise_augment, whole_video_condition
from .data import GaussianMixture
from .errors import DomainError
from .flow import euler_sample, interpolate
from .metrics import median_bandwidth, mmd2
from .schedule import NO_SHIFT, ShiftConfig, StepSizeSet, sampling_path
from .shortcut import TrainConfig, flow_loss_grad, shortcut_sample, train
from .toy import Adam, NetSpec, ToyNet

VARIANTS = ("baseline", "shortcut", "uniform")


def default_mixture(scale: float = 3.0) -> GaussianMixture:
    """Two-mode 2-D mixture; ``scale`` multiplies the whole distribution.

    Larger scales raise the signal-to-noise ratio at every ``t``, the toy
    counterpart of high-resolution inputs that motivate shifting ``t``
    toward noise.
    """
    return GaussianMixture(means=((-2.0 * scale, -1.0 * scale), (2.0 * scale, 1.0 * scale)), std=0.3 * scale)


@dataclass
class ToyTask:
    scale: float = 3.0
    shift: float = 3.0
    steps: int = 8000
    lr: float = 3e-4
    batch_size: int = 256
    hidden: tuple = (64, 64, 64)
    n_eval: int = 4096
    # all arms are evaluated on averaged weights; the last iterate is noisy at constant lr
    ema_decay: float = 0.999

    @property
    def data(self) -> GaussianMixture:
        return default_mixture(self.scale)

    def to_dict(self):
        return asdict(self)


def variant_setup(variant: str, task: ToyTask):
    """``(spec, train config kwargs, step set, shift)`` for one ablation arm."""
    full = StepSizeSet()
    if variant == "baseline":
        return NetSpec(hidden=task.hidden, d_conditioning=False), dict(flow_fraction=1.0), full, ShiftConfig(task.shift)
    if variant == "shortcut":
        return NetSpec(hidden=task.hidden), dict(mode="nonuniform"), full, ShiftConfig(task.shift)
    if variant == "uniform":
        return NetSpec(hidden=task.hidden), dict(mode="uniform"), full.dyadic(), NO_SHIFT
    raise DomainError(f"unknown variant {variant!r}, expected one of {VARIANTS}")


def train_variant(variant: str, seed: int, task: ToyTask = ToyTask(), steps: int | None = None):
    spec, kw, step_set, shift = variant_setup(variant, task)
    net = ToyNet(spec, seed=seed)
    cfg = TrainConfig(batch_size=task.batch_size, lr=task.lr, seed=seed,
                      total_steps=task.steps if steps is None else steps, ema_decay=task.ema_decay, **kw)
    report = train(net, task.data, cfg, step_set, shift)
    return net, report


def sample_model(net, x1, n_steps: int, variant: str, task: ToyTask = ToyTask()):
    """Shortcut sampling for step-conditioned nets, plain Euler otherwise."""
    _, _, step_set, shift = variant_setup(variant, task)
    if getattr(getattr(net, "spec", None), "d_conditioning", True):
        return shortcut_sample(net, x1, n_steps, step_set, shift)
    return euler_sample(net, x1, sampling_path(n_steps, shift))


def evaluation_batch(data: GaussianMixture, n: int, seed: int):
    """Reference sample with exactly equal mode counts, and antithetic start noise.

    Both remove mode-count fluctuations that otherwise dominate MMD at a
    few thousand samples.
    """
    rng = np.random.default_rng(10_000 + seed)
    K = len(data.means)
    per = n // K
    ref = np.concatenate([data.mu[k] + data.std * rng.standard_normal((per, data.dim)) for k in range(K)])
    half = rng.standard_normal((n // 2, data.dim))
    x1 = np.concatenate([half, -half])
    return ref, x1


def mmd_table(models: dict, task: ToyTask, seed: int, steps=(1, 2, 4, 10)):
    """``[(n_steps, mmd2, variant)]`` for every ``{variant: net}``."""
    ref, x1 = evaluation_batch(task.data, task.n_eval, seed)
    bw = median_bandwidth(ref)
    rows = []
    for n in steps:
        for variant, net in models.items():
            rows.append((n, mmd2(sample_model(net, x1, n, variant, task), ref, bw), variant))
    return rows


# factorised conditioning


@dataclass
class FactorizedTask:
    n_frames: int = 9
    size: int = 8
    n_train: int = 512
    n_test: int = 256
    strength: float = 1.0
    factor: int = 4
    steps: int = 1500
    lr: float = 1e-3
    batch_size: int = 64
    hidden: tuple = (64, 64)
    augment: bool = False
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(spatial_factor=4, channel_expand=4))


def _clip_dataset(task: FactorizedTask, rng, n):
    clips = [moving_pattern_clip(rng, task.n_frames, task.size, max_speed=1.0) for _ in range(n)]
    hr = np.stack([encode(c, task.codec) for c in clips])
    fact, whole = [], []
    for c in clips:
        # both arms see the same degradation draw
        seed = int(rng.integers(2 ** 31))
        f = assemble_condition(c, "video_sr", task.codec, c[0], task.strength, np.random.default_rng(seed), task.factor)
        w = whole_video_condition(c, task.codec, task.strength, np.random.default_rng(seed), task.factor)
        fact.append(f)
        whole.append(w)
    return hr, fact, whole


def factorized_ablation(seed: int, task: FactorizedTask = FactorizedTask()):
    """Held-out flow loss on the video latents for factorised vs whole-video conditions.

    Returns ``{"factorized": loss, "whole": loss}``.  Both arms share data,
    degradations, architecture, initialisation and optimiser settings.
    """
    rng = np.random.default_rng(seed)
    hr_tr, f_tr, w_tr = _clip_dataset(task, rng, task.n_train)
    hr_te, f_te, w_te = _clip_dataset(task, rng, task.n_test)
    lat_shape = hr_tr.shape[1:]
    dim = int(np.prod(lat_shape))
    flat = lambda a: a.reshape(a.shape[0], -1)
    x_tr, x_te = flat(hr_tr), flat(hr_te)
    video_mask = np.zeros(lat_shape, dtype=bool)
    video_mask[1:] = True
    video_mask = video_mask.ravel()

    eval_rng = np.random.default_rng(seed + 1)
    t_eval = np.linspace(0.05, 0.95, 10)
    noise_eval = eval_rng.standard_normal((t_eval.size,) + x_te.shape)

    results = {}
    for arm, packs_tr, packs_te in (("factorized", f_tr, f_te), ("whole", w_tr, w_te)):
        arm_rng = np.random.default_rng(seed + 2)
        net = ToyNet(NetSpec(dim=dim, hidden=task.hidden, d_conditioning=False, cond_dim=dim), seed=seed)
        opt = Adam(task.lr)
        c_tr = np.stack([p.cond_latent.ravel() for p in packs_tr])
        c_te = np.stack([p.cond_latent.ravel() for p in packs_te])
        for _ in range(task.steps):
            idx = arm_rng.integers(task.n_train, size=task.batch_size)
            cond = c_tr[idx]
            if task.augment:
                cond = np.stack([noise_augment(packs_tr[i], int(arm_rng.integers(301)), arm_rng).cond_latent.ravel()
                                 for i in idx])
            x0 = x_tr[idx]
            x1 = arm_rng.standard_normal(x0.shape)
            t = arm_rng.random(task.batch_size)
            _, grad = flow_loss_grad(net, x0, x1, t, 0.0, cond)
            net.params = opt.step(net.params, grad)
        losses = []
        for t, x1 in zip(t_eval, noise_eval):
            xt = interpolate(x_te, x1, t)
            pred = net(xt, t, 0.0, c_te)
            losses.append(np.mean(((pred - (x1 - x_te))[:, video_mask]) ** 2))
        results[arm] = float(np.mean(losses))
    return results
