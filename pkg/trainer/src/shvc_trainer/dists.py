"""Logistic distribution helpers for training, in torch.

Latents stay continuous during training (reparameterized logistic
noise); only the image likelihood is discretized, over the same 256-bin
grid the coder uses.
"""

from __future__ import annotations

import math

import numpy as np
import torch

LOG_SCALE_MIN = -7.0
LOG_SCALE_MAX = 7.0

X_BINS = 256
X_ORIGIN = -1.0
X_BIN_WIDTH = 2.0 / 255.0

LOG2E = math.log2(math.e)


def logistic_log_pdf(x, mean, log_scale):
    """Log density of a logistic distribution, in nats."""
    z = (x - mean) / torch.exp(log_scale)
    return -z - 2.0 * torch.nn.functional.softplus(-z) - log_scale


def sample_logistic(mean, log_scale, generator=None):
    """Reparameterized draw: mean + scale * sigmoid^-1(u)."""
    u = torch.rand(mean.shape, dtype=mean.dtype, device=mean.device,
                   generator=generator)
    u = u.clamp(1e-7, 1 - 1e-7)
    return mean + torch.exp(log_scale) * (torch.log(u) - torch.log1p(-u))


def discretized_logistic_log_pmf(sym, mean, log_scale,
                                 num_bins=X_BINS, origin=X_ORIGIN,
                                 bin_width=X_BIN_WIDTH):
    """Log mass of integer symbols under a binned logistic, in nats.

    Bin v covers [origin + (v - 1/2) w, origin + (v + 1/2) w); the first
    and last bins absorb the tails.
    """
    inv_s = torch.exp(-log_scale)
    center = origin + sym.to(inv_s.dtype) * bin_width
    upper = (center - mean + bin_width / 2) * inv_s
    lower = (center - mean - bin_width / 2) * inv_s
    cdf_hi = torch.where(sym >= num_bins - 1,
                         torch.ones_like(upper), torch.sigmoid(upper))
    cdf_lo = torch.where(sym <= 0,
                         torch.zeros_like(lower), torch.sigmoid(lower))
    return torch.log((cdf_hi - cdf_lo).clamp_min(1e-12))


def discretized_mixture_log_pmf(sym, means, log_scales, logits):
    """Mixture version; component axis is dim 0 of the parameter tensors."""
    log_w = torch.log_softmax(logits, dim=0)
    comp = discretized_logistic_log_pmf(sym.unsqueeze(0), means, log_scales)
    return torch.logsumexp(log_w + comp, dim=0)


# -- numpy-side table quantization (float64, matches the coder format) -------

ROUND_STEP = 1e-4
PRECISION = 16

Z_BINS = 64
Z_ORIGIN = -15.75
Z_BIN_WIDTH = 0.5


def round_to_grid(a: np.ndarray, step: float = ROUND_STEP) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64) / step) * step


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic_pmf_rows(means, log_scales, num_bins, origin, bin_width):
    """Discretized logistic pmf rows, bit-identical to the coder's."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 1)
    scales = np.exp(np.clip(np.asarray(log_scales, dtype=np.float64),
                            LOG_SCALE_MIN, LOG_SCALE_MAX)).reshape(-1, 1)
    edges = origin + (np.arange(num_bins + 1) - 0.5) * bin_width
    edges[0], edges[-1] = -np.inf, np.inf
    cdf = _stable_sigmoid((edges[None, :] - means) / scales)
    cdf[:, 0], cdf[:, -1] = 0.0, 1.0
    return np.maximum(np.diff(cdf, axis=1), 1e-40)


def quantize_rows(pmf: np.ndarray, precision: int = PRECISION) -> np.ndarray:
    """Largest-remainder quantization to integer rows summing 2**precision.

    Freqs start at max(1, round(p * 2**P)); the residual is balanced one
    pass at a time toward the largest (or away from the smallest)
    remainders, ties broken by lower symbol index.  The inference runtime
    uses the identical rule, so regenerated tables are byte-equal.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    n, s = pmf.shape
    total = 1 << precision
    if s > total:
        raise ValueError(f"{s} symbols exceed 2**{precision} capacity")
    ideal = pmf * total
    freqs = np.maximum(1, np.rint(ideal)).astype(np.int64)
    deficit = total - freqs.sum(axis=1)
    for row in np.nonzero(deficit)[0]:
        d = int(deficit[row])
        f = freqs[row]
        while d != 0:
            r = ideal[row] - f
            if d > 0:
                order = np.argsort(-r, kind="stable")
                take = min(d, s)
                f[order[:take]] += 1
                d -= take
            else:
                r = np.where(f > 1, r, np.inf)
                order = np.argsort(r, kind="stable")
                take = min(-d, int((f > 1).sum()))
                f[order[:take]] -= 1
                d += take
    return freqs.astype(np.uint32)
