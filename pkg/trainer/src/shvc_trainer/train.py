"""ELBO objective and training loop.

Latents are relaxed to continuous logistics during training; the image
likelihood stays discretized since the data is.  In self-seeding mode the
bound splits into a latent-conditioned part over the first ``split_s``
sub-blocks and an exact codelength for the remaining latent-free
partition, and the initial-bits constraint is enforced with a hinge
penalty on (posterior codelength - latent-free codelength).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .dists import (discretized_mixture_log_pmf, logistic_log_pdf,
                    sample_logistic)
from .model import MODE_ARIB, TorchShvc, reorder_f, reorder_g

LOG2 = math.log(2.0)


@dataclass
class ElboParts:
    """Per-image codelength breakdown; every field is (N,) in bits."""

    likelihood_bits: torch.Tensor   # latent-conditioned image sub-blocks
    free_bits: torch.Tensor         # latent-free sub-blocks (0 in shvc mode)
    prior_bits: torch.Tensor        # latents under their priors
    posterior_bits: torch.Tensor    # -log q of the sampled latents
    dims: int                       # number of image scalars in the batch

    @property
    def total_bits(self) -> torch.Tensor:
        return (self.likelihood_bits + self.free_bits + self.prior_bits
                - self.posterior_bits)

    @property
    def bpd(self) -> torch.Tensor:
        return self.total_bits.sum() / self.dims


def _volume_log_pdf(params, g_volume, channels):
    """Continuous logistic log-density of a latent volume, (N,) nats."""
    n, _, hh, ww = g_volume.shape
    k2 = params.alpha.shape[1]
    vals = g_volume.view(n, k2, channels, hh, ww)
    mu = params.means[:, :, 0] + torch.einsum(
        "nkcjhw,nkjhw->nkchw", params.beta, vals) + params.alpha
    return logistic_log_pdf(vals, mu, params.log_scales[:, :, 0]) \
        .sum(dim=(1, 2, 3, 4))


def _volume_log_pmf(params, g_volume, sym_volume, channels):
    """Discretized mixture log-mass per image and sub-block slot (nats)."""
    n, _, hh, ww = g_volume.shape
    k2 = params.alpha.shape[1]
    vals = g_volume.view(n, k2, channels, hh, ww)
    sym = sym_volume.view(n, k2, channels, hh, ww)
    mu = torch.einsum("nkcjhw,nkjhw->nkchw", params.beta, vals) + params.alpha
    means = params.means + mu.unsqueeze(2)
    logp = discretized_mixture_log_pmf(
        sym, means.movedim(2, 0), params.log_scales.movedim(2, 0),
        params.logits.movedim(2, 0))
    return logp.sum(dim=(2, 3, 4))    # (N, k2)


def elbo(model: TorchShvc, images: torch.Tensor,
         generator: torch.Generator | None = None,
         use_f_op: bool = False) -> ElboParts:
    """Evidence bound for a uint8 image batch (N, C, H, W).

    ``use_f_op`` orders level-0 sub-blocks channel-first instead of
    offset-first, the ablation variant of the decomposition operator.
    """
    cfg = model.config
    sym = images.to(torch.long)
    x = images.to(torch.float64) * (2.0 / 255.0) - 1.0
    n, c, h, w = x.shape
    if h % cfg.divisor or w % cfg.divisor:
        raise ValueError(f"spatial dims must divide {cfg.divisor}")

    # posterior samples, bottom-up
    zs, posterior_nats = [], x.new_zeros(n)
    inp = x
    for l in range(1, cfg.L + 1):
        mq, lsq = model.posterior_params(l, inp)
        z = sample_logistic(mq, lsq, generator=generator)
        posterior_nats = posterior_nats + \
            logistic_log_pdf(z, mq, lsq).sum(dim=(1, 2, 3))
        zs.append(z)
        inp = z

    # latent priors, top-down
    prior_nats = x.new_zeros(n)
    for l in range(cfg.L, 0, -1):
        ctx = (model.context_features(l + 1, zs[l])
               if l < cfg.L else None)
        gvol = reorder_g(zs[l - 1], cfg.k)
        params = model.prior_parallel(l, ctx, gvol)
        prior_nats = prior_nats + _volume_log_pdf(params, gvol,
                                                  cfg.z_channels)

    # image likelihood
    level0_reorder = reorder_f if use_f_op else reorder_g
    gvol = level0_reorder(x, cfg.k)
    svol = level0_reorder(sym.to(torch.float64), cfg.k).to(torch.long)
    ctx1 = model.context_features(1, zs[0])
    per_slot = _volume_log_pmf(model.prior_parallel(0, ctx1, gvol),
                               gvol, svol, cfg.C)
    if cfg.mode == MODE_ARIB:
        free_slot = _volume_log_pmf(model.prior_parallel(0, None, gvol),
                                    gvol, svol, cfg.C)
        like_nats = per_slot[:, :cfg.split_s].sum(dim=1)
        free_nats = free_slot[:, cfg.split_s:].sum(dim=1)
    else:
        like_nats = per_slot.sum(dim=1)
        free_nats = x.new_zeros(n)

    return ElboParts(
        likelihood_bits=-like_nats / LOG2,
        free_bits=-free_nats / LOG2,
        prior_bits=-prior_nats / LOG2,
        posterior_bits=-posterior_nats / LOG2,
        dims=n * c * h * w)


def penalized_loss(parts: ElboParts, lam: float = 0.0) -> torch.Tensor:
    """Training loss in bits/dim plus the initial-bits hinge penalty.

    The hinge charges ``lam`` per bit by which the posterior codelength
    exceeds what the latent-free partition can supply; with ``lam == 0``
    this is exactly the negative evidence bound.
    """
    if lam < 0:
        raise ValueError("penalty weight must be non-negative")
    loss = parts.bpd
    if lam > 0:
        shortfall = torch.relu(parts.posterior_bits - parts.free_bits)
        loss = loss + lam * shortfall.sum() / parts.dims
    return loss


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 5e-4
    final_lr: float = 1e-5
    lam: float = 0.0
    grad_clip: float = 10.0
    seed: int = 0
    use_f_op: bool = False

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lam < 0:
            raise ValueError("penalty weight must be non-negative")
        if not 0 < self.final_lr <= self.lr:
            raise ValueError("need 0 < final_lr <= lr")


def train(model: TorchShvc, data: np.ndarray, config: TrainConfig,
          log_every: int = 0) -> list[float]:
    """Fit the model on a uint8 array (N, C, H, W); returns loss history."""
    if data.ndim != 4 or data.shape[1] != model.config.C:
        raise ValueError("data must be (N, C, H, W) with matching channels")
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gamma = (config.final_lr / config.lr) ** (1.0 / config.steps)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=gamma)
    history = []
    for step in range(config.steps):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        batch = torch.as_tensor(data[idx])
        parts = elbo(model, batch, generator=gen, use_f_op=config.use_f_op)
        loss = penalized_loss(parts, config.lam)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        sched.step()
        history.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}: loss {history[-1]:.4f} bits/dim "
                  f"(lr {sched.get_last_lr()[0]:.2e})")
    return history


def histogram_bpd(train_data: np.ndarray, test_data: np.ndarray) -> float:
    """Bits/dim of a smoothed per-byte histogram fit on the training set."""
    counts = np.bincount(train_data.reshape(-1), minlength=256) + 1.0
    logp = np.log2(counts / counts.sum())
    return float(-logp[test_data.reshape(-1)].mean())


def smooth_patches(count: int, side: int = 8, channels: int = 3,
                   seed: int = 0) -> np.ndarray:
    """Synthetic spatially-smooth uint8 patches for toy training runs."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(count, channels, side, side))
    for axis in (2, 3):
        for _ in range(3):
            base = (base + np.roll(base, 1, axis=axis)
                    + np.roll(base, -1, axis=axis)) / 3.0
    base = base - base.min(axis=(1, 2, 3), keepdims=True)
    peak = base.max(axis=(1, 2, 3), keepdims=True)
    levels = rng.uniform(40, 215, size=(count, 1, 1, 1))
    offs = rng.uniform(0, 40, size=(count, 1, 1, 1))
    return np.clip(base / np.maximum(peak, 1e-9) * levels + offs,
                   0, 255).astype(np.uint8)
