"""Torch mirror of the inference model, trainable end to end.

Weight records use the same names and shapes as the SHVW file format, so
a trained state exports directly.  Two prior evaluation paths exist: the
serial per-sub-block recurrence the coder uses, and a parallel one built
from the off-center input convolution plus B-masked 3D convolutions.
Both compute the same function; the parallel path is what training runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dists import LOG_SCALE_MAX, LOG_SCALE_MIN
from .masks import MaskSpec, masked_conv3d, off_center_conv

MODE_SHVC = "shvc"
MODE_ARIB = "arib"


@dataclass(frozen=True)
class ModelConfig:
    """Mirror of the weight-file config block."""

    L: int = 1
    k: int = 2
    C: int = 3
    split_s: int = 2
    mode: str = MODE_SHVC
    M: int = 5
    widths: tuple[int, ...] = (32, 24, 16, 8)
    z_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.L <= 4:
            raise ValueError("L must be in [1, 4]")
        if self.mode not in (MODE_SHVC, MODE_ARIB):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_ARIB and not 1 <= self.split_s < self.k ** 2:
            raise ValueError("split_s must lie in [1, k**2)")
        if len(self.widths) < self.L + 1:
            raise ValueError("need a width for every hierarchy level")

    @property
    def num_subblocks(self) -> int:
        return self.k * self.k

    @property
    def divisor(self) -> int:
        return self.k ** (self.L + 1)

    def var_channels(self, level: int) -> int:
        return self.C if level == 0 else self.z_channels

    def var_mixtures(self, level: int) -> int:
        return self.M if level == 0 else 1

    def head_channels(self, level: int) -> int:
        c = self.var_channels(level)
        m = self.var_mixtures(level)
        return c + c * (c - 1) // 2 + 3 * m * c


def _conv_spec(name, out_ch, in_ch, ksize=3, bias=True, prelu=True):
    recs = [(f"{name}.weight", (out_ch, in_ch, ksize, ksize))]
    if bias:
        recs.append((f"{name}.bias", (out_ch,)))
    if prelu:
        recs.append((f"{name}.alpha", (out_ch,)))
    return recs


def weight_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Record table of the weight file, in file order."""
    k2 = config.num_subblocks
    zc = config.z_channels
    specs: list[tuple[str, tuple[int, ...]]] = []
    for l in range(1, config.L + 1):
        w = config.widths[l - 1]
        in_ch = config.C * k2 if l == 1 else zc
        specs += _conv_spec(f"q{l}.conv0", w, in_ch)
        specs += _conv_spec(f"q{l}.conv1", w, w)
        specs += _conv_spec(f"q{l}.conv2", w, w)
        specs += _conv_spec(f"q{l}.conv3", 2 * zc, w, prelu=False)
    for l in range(1, config.L + 1):
        w = config.widths[l - 1]
        specs += _conv_spec(f"ctx{l}.conv0", w, zc)
        specs += _conv_spec(f"ctx{l}.conv1", w, w)
        specs += _conv_spec(f"ctx{l}.conv2", w, w)
        specs += _conv_spec(f"ctx{l}.conv3", w, w, prelu=False)
    for v in range(config.L + 1):
        w = config.widths[v]
        specs += _conv_spec(f"pr{v}.in_prev", w, config.var_channels(v))
        if v < config.L:
            specs.append((f"pr{v}.in_ctx.weight", (w, config.widths[v], 3, 3)))
        for j in (1, 2):
            specs.append((f"pr{v}.mid{j}.prev.weight", (w, w, 3, 3)))
            specs += _conv_spec(f"pr{v}.mid{j}.cur", w, w)
        specs += _conv_spec(f"pr{v}.head", config.head_channels(v), w,
                            prelu=False)
    specs.append((f"pr{config.L}.slice0", (config.head_channels(config.L),)))
    return specs


# -- space-to-depth reorders -------------------------------------------------


def reorder_g(x: torch.Tensor, k: int) -> torch.Tensor:
    """Offset-grouped flattening: (N, C, H, W) -> (N, C k^2, H/k, W/k)."""
    n, c, h, w = x.shape
    v = x.view(n, c, h // k, k, w // k, k)
    return v.permute(0, 3, 5, 1, 2, 4).reshape(n, c * k * k, h // k, w // k)


def reorder_g_inv(x: torch.Tensor, k: int, channels: int) -> torch.Tensor:
    n, ck2, hb, wb = x.shape
    v = x.view(n, k, k, channels, hb, wb)
    return v.permute(0, 3, 4, 1, 5, 2).reshape(n, channels, hb * k, wb * k)


def reorder_f(x: torch.Tensor, k: int) -> torch.Tensor:
    """Channel-grouped flattening (the ablation's alternative order)."""
    n, c, h, w = x.shape
    v = x.view(n, c, h // k, k, w // k, k)
    return v.permute(0, 1, 3, 5, 2, 4).reshape(n, c * k * k, h // k, w // k)


@dataclass
class SubblockParams:
    """Parameters of every sub-block, stacked on a slot axis."""

    alpha: torch.Tensor       # (N, k2, C, H, W)
    beta: torch.Tensor        # (N, k2, C, C, H, W) strictly lower triangular
    means: torch.Tensor       # (N, k2, M, C, H, W)
    log_scales: torch.Tensor  # (N, k2, M, C, H, W) clamped
    logits: torch.Tensor      # (N, k2, M, C, H, W)


class TorchShvc(nn.Module):
    """Trainable model with coder-compatible weight records."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        params = {}
        for name, shape in weight_specs(config):
            if name.endswith(".alpha"):
                data = torch.full(shape, 0.25, dtype=torch.float64)
            elif name.endswith(".slice0"):
                data = torch.zeros(shape, dtype=torch.float64)
            else:
                fan_in = int(np.prod(shape[1:])) if name.endswith(".weight") \
                    else max(1, shape[0])
                a = 1.0 / math.sqrt(fan_in)
                data = torch.empty(shape, dtype=torch.float64).uniform_(-a, a)
            params[name.replace(".", "__")] = nn.Parameter(data)
        self.params = nn.ParameterDict(params)

    # -- weight plumbing ---------------------------------------------------

    def _w(self, name: str) -> torch.Tensor:
        return self.params[name.replace(".", "__")]

    def named_records(self) -> dict[str, np.ndarray]:
        """Weights as float32 arrays keyed by file record name."""
        return {name: self._w(name).detach().numpy().astype(np.float32)
                for name, _ in weight_specs(self.config)}

    def load_records(self, records: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, shape in weight_specs(self.config):
                src = torch.as_tensor(np.asarray(records[name],
                                                 dtype=np.float64))
                if tuple(src.shape) != shape:
                    raise ValueError(f"{name}: shape {tuple(src.shape)} "
                                     f"does not match {shape}")
                self._w(name).copy_(src)

    # -- shared layers -----------------------------------------------------

    def _conv(self, name, x, stride=1, act=True):
        out = torch.nn.functional.conv2d(
            x, self._w(f"{name}.weight"), self._w(f"{name}.bias"),
            stride=stride, padding=1)
        if act:
            out = torch.nn.functional.prelu(out, self._w(f"{name}.alpha"))
        return out

    def posterior_params(self, l: int, inp: torch.Tensor):
        """(means, log_scales) of latent layer l; batched input."""
        cfg = self.config
        if l == 1:
            g = reorder_g(inp, cfg.k)
            if cfg.mode == MODE_ARIB:
                mask = torch.ones(g.shape[1], 1, 1, dtype=g.dtype)
                mask[cfg.split_s * cfg.C:] = 0.0
                g = g * mask
            h = self._conv(f"q{l}.conv0", g)
        else:
            h = self._conv(f"q{l}.conv0", inp, stride=cfg.k)
        h = self._conv(f"q{l}.conv1", h)
        h = self._conv(f"q{l}.conv2", h)
        out = self._conv(f"q{l}.conv3", h, act=False)
        zc = cfg.z_channels
        return out[:, :zc], out[:, zc:].clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)

    def context_features(self, l: int, conditioning: torch.Tensor):
        h = self._conv(f"ctx{l}.conv0", conditioning)
        h = self._conv(f"ctx{l}.conv1", h)
        h = self._conv(f"ctx{l}.conv2", h)
        return self._conv(f"ctx{l}.conv3", h, act=False)

    # -- priors: parallel masked path --------------------------------------

    def prior_parallel(self, level: int, ctx: torch.Tensor | None,
                       g_volume: torch.Tensor) -> SubblockParams:
        """All sub-block parameters in one causal pass.

        `g_volume` is (N, C_v k^2, H, W) in sub-block order; `ctx` is the
        decoded context features or None for the top prior / latent-free
        partition.
        """
        cfg = self.config
        v = level
        cv = cfg.var_channels(v)
        k2 = cfg.num_subblocks
        n, _, hh, ww = g_volume.shape

        kernel = self._w(f"pr{v}.in_prev.weight")
        h0 = off_center_conv(g_volume, kernel, self._w(f"pr{v}.in_prev.bias"),
                             cv)                       # (N, f, k2, H, W)
        if ctx is not None:
            ctx_term = torch.nn.functional.conv2d(
                ctx, self._w(f"pr{v}.in_ctx.weight"), None, padding=1)
            h0 = h0 + ctx_term.unsqueeze(2)
        col = torch.nn.functional.prelu(h0, self._w(f"pr{v}.in_prev.alpha"))

        spec = MaskSpec("B", depth=3, stride_c=cv)
        for layer in ("mid1", "mid2"):
            prev_k = self._w(f"pr{v}.{layer}.prev.weight")
            cur_k = self._w(f"pr{v}.{layer}.cur.weight")
            # depth slot 0 reads the previous sub-block column, slot 1 the
            # current one; slot 2 exists only to be zeroed by the mask
            kern3 = torch.stack(
                [prev_k, cur_k, torch.zeros_like(cur_k)], dim=2)
            h = masked_conv3d(col, kern3, self._w(f"pr{v}.{layer}.cur.bias"),
                              spec)
            col = torch.nn.functional.prelu(
                h, self._w(f"pr{v}.{layer}.cur.alpha"))

        flat = col.permute(0, 2, 1, 3, 4).reshape(n * k2, -1, hh, ww)
        raw = torch.nn.functional.conv2d(
            flat, self._w(f"pr{v}.head.weight"), self._w(f"pr{v}.head.bias"),
            padding=1)
        raw = raw.view(n, k2, -1, hh, ww)
        if v == cfg.L:
            const = self._w(f"pr{v}.slice0").view(1, -1, 1, 1)
            raw = torch.cat([const.expand(n, -1, hh, ww).unsqueeze(1),
                             raw[:, 1:]], dim=1)
        return self._unpack(v, raw)

    # -- priors: serial path (the coder's recurrence) -----------------------

    def prior_serial(self, level: int, ctx: torch.Tensor | None,
                     g_volume: torch.Tensor) -> SubblockParams:
        cfg = self.config
        v = level
        cv = cfg.var_channels(v)
        k2 = cfg.num_subblocks
        n, _, hh, ww = g_volume.shape
        ctx_term = None
        if ctx is not None:
            ctx_term = torch.nn.functional.conv2d(
                ctx, self._w(f"pr{v}.in_ctx.weight"), None, padding=1)
        cols = [[], [], []]
        raws = []
        for i in range(k2):
            prev = (g_volume[:, (i - 1) * cv:i * cv] if i > 0 else
                    torch.zeros(n, cv, hh, ww, dtype=g_volume.dtype))
            h0 = torch.nn.functional.conv2d(
                prev, self._w(f"pr{v}.in_prev.weight"),
                self._w(f"pr{v}.in_prev.bias"), padding=1)
            if ctx_term is not None:
                h0 = h0 + ctx_term
            cols[0].append(torch.nn.functional.prelu(
                h0, self._w(f"pr{v}.in_prev.alpha")))
            for j, layer in ((1, "mid1"), (2, "mid2")):
                h = torch.nn.functional.conv2d(
                    cols[j - 1][i], self._w(f"pr{v}.{layer}.cur.weight"),
                    self._w(f"pr{v}.{layer}.cur.bias"), padding=1)
                if i > 0:
                    h = h + torch.nn.functional.conv2d(
                        cols[j - 1][i - 1],
                        self._w(f"pr{v}.{layer}.prev.weight"), None,
                        padding=1)
                cols[j].append(torch.nn.functional.prelu(
                    h, self._w(f"pr{v}.{layer}.cur.alpha")))
            if v == cfg.L and i == 0:
                raws.append(self._w(f"pr{v}.slice0").view(1, -1, 1, 1)
                            .expand(n, -1, hh, ww))
            else:
                raws.append(torch.nn.functional.conv2d(
                    cols[2][i], self._w(f"pr{v}.head.weight"),
                    self._w(f"pr{v}.head.bias"), padding=1))
        return self._unpack(v, torch.stack(raws, dim=1))

    def _unpack(self, level: int, raw: torch.Tensor) -> SubblockParams:
        """Split (N, k2, head_ch, H, W) into structured parameters."""
        cfg = self.config
        cv = cfg.var_channels(level)
        m = cfg.var_mixtures(level)
        n, k2, _, hh, ww = raw.shape
        pos = 0
        alpha = raw[:, :, :cv]
        pos += cv
        rows = []
        for c in range(cv):
            pads = [torch.zeros(n, k2, cv - c, hh, ww, dtype=raw.dtype)]
            if c:
                pads.insert(0, raw[:, :, pos:pos + c])
            rows.append(torch.cat(pads, dim=2))
            pos += c
        beta = torch.stack(rows, dim=2)
        means = raw[:, :, pos:pos + m * cv].view(n, k2, m, cv, hh, ww)
        pos += m * cv
        log_scales = raw[:, :, pos:pos + m * cv].view(n, k2, m, cv, hh, ww) \
            .clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)
        pos += m * cv
        logits = raw[:, :, pos:pos + m * cv].view(n, k2, m, cv, hh, ww)
        return SubblockParams(alpha=alpha, beta=beta, means=means,
                              log_scales=log_scales, logits=logits)

    def channel_means(self, p: SubblockParams,
                      g_volume: torch.Tensor) -> torch.Tensor:
        """Weak-autoregressive per-channel means: (N, k2, C, H, W).

        The linear in-sub-block term shifts all mixture components of a
        channel equally; `g_volume` supplies the decoded channel values
        in sub-block order.
        """
        cfg = self.config
        cv = p.alpha.shape[2]
        n, _, hh, ww = g_volume.shape
        vals = g_volume.view(n, cfg.num_subblocks, cv, hh, ww)
        return p.alpha + torch.einsum("nkcjhw,nkjhw->nkchw", p.beta, vals)
