"""Deterministic forward inference for the hierarchical latent codec.

The model is a small ladder of convolutional networks:

* posterior nets produce factorised logistic parameters for each latent
  layer (layer 1 conditioned on the sub-block-reordered image, deeper
  layers on the previous latent);
* context decoders map a latent to feature maps conditioning the variable
  one level below;
* prior nets produce, one sub-block at a time, the linear channel-mean
  coefficients and mixture parameters of the coded variable.

Prior nets are structured so that sub-block i only ever sees sub-blocks
< i: the input layer convolves the *previous* sub-block's channels, and
every middle layer mixes the current running feature column with the one
before it.  Evaluating sub-block i therefore needs the feature columns of
slots 0..i, which :class:`PriorEvaluator` builds incrementally.

All arithmetic is float64 over float32-stored weights, which keeps
repeated evaluation bit-identical on one platform; coder tables are
additionally computed from parameters snapped to a 1e-4 grid.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .dists import (LOG_SCALE_MAX, LOG_SCALE_MIN, SymbolGrid)
from .tensors import ShapeError, subpixel_unshuffle_g

MAGIC = b"SHVW"
VERSION = 1

MODE_SHVC = "shvc"
MODE_ARIB = "arib"
_MODE_CODES = {MODE_SHVC: 0, MODE_ARIB: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

# Coding grids: 8-bit image symbols normalized to [-1, 1]; latent symbols
# on a 64-bin half-unit grid spanning [-15.75, 15.75].
X_GRID = SymbolGrid(num_symbols=256, origin=-1.0, bin_width=2.0 / 255.0)
Z_GRID = SymbolGrid(num_symbols=64, origin=-15.75, bin_width=0.5)


class WeightFormatError(ValueError):
    """Raised for malformed weight files."""


@dataclass(frozen=True)
class ModelConfig:
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
        if self.k < 1 or self.C < 1 or self.M < 1 or self.z_channels < 1:
            raise ValueError("k, C, M, z_channels must be positive")
        if self.mode not in _MODE_CODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_ARIB and not 1 <= self.split_s < self.k ** 2:
            raise ValueError("ArIB requires 1 <= split_s < k**2")
        if len(self.widths) < self.L + 1:
            raise ValueError("need a network width for every hierarchy level")

    @property
    def num_subblocks(self) -> int:
        return self.k * self.k

    @property
    def divisor(self) -> int:
        """Spatial dims must divide by this for the full hierarchy."""
        return self.k ** (self.L + 1)

    def var_channels(self, level: int) -> int:
        """Channels of the level-`level` variable (level 0 is the image)."""
        return self.C if level == 0 else self.z_channels

    def var_mixtures(self, level: int) -> int:
        return self.M if level == 0 else 1

    def z_shape(self, l: int, height: int, width: int) -> tuple[int, int, int]:
        return (self.z_channels, height // self.k ** l, width // self.k ** l)

    def head_channels(self, level: int) -> int:
        c = self.var_channels(level)
        m = self.var_mixtures(level)
        return c + c * (c - 1) // 2 + 3 * m * c


@dataclass
class WeakArParams:
    """Per-sub-block linear-mean and mixture parameters.

    ``beta[c, j]`` multiplies already-decoded channel j (< c) of the same
    sub-block; rows at or above the diagonal are zero by construction.
    """

    alpha: np.ndarray       # (C, H, W)
    beta: np.ndarray        # (C, C, H, W), strictly lower-triangular in (c, j)
    means: np.ndarray       # (M, C, H, W) per-component mean offsets
    log_scales: np.ndarray  # (M, C, H, W)
    logits: np.ndarray      # (M, C, H, W)


@dataclass(frozen=True)
class PosteriorParams:
    means: np.ndarray       # (C, H, W)
    log_scales: np.ndarray  # (C, H, W), clamped


@dataclass(frozen=True)
class ContextD:
    features: np.ndarray    # (f, H, W)
    has_latent: bool


def weak_ar_mean(p: WeakArParams, decoded, c: int, site: tuple[int, int]) -> float:
    """Channel-c mean at one site: alpha plus the linear prefix term."""
    h, w = site
    mu = p.alpha[c, h, w]
    for j in range(c):
        mu += p.beta[c, j, h, w] * decoded[j, h, w]
    return float(mu)


def weak_ar_mean_field(p: WeakArParams, decoded: np.ndarray, c: int) -> np.ndarray:
    """Vectorized channel-c means given decoded channels (c, H, W)."""
    mu = p.alpha[c].copy()
    for j in range(c):
        mu += p.beta[c, j] * decoded[j]
    return mu


# ---------------------------------------------------------------------------
# Weight records


def _conv_spec(name, out_ch, in_ch, ksize=3, bias=True, prelu=True):
    recs = [(f"{name}.weight", (out_ch, in_ch, ksize, ksize))]
    if bias:
        recs.append((f"{name}.bias", (out_ch,)))
    if prelu:
        recs.append((f"{name}.alpha", (out_ch,)))
    return recs


def weight_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) table of every weight record."""
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
        cv = config.var_channels(v)
        specs += _conv_spec(f"pr{v}.in_prev", w, cv)
        if v < config.L:
            specs.append((f"pr{v}.in_ctx.weight", (w, config.widths[v], 3, 3)))
        for j in (1, 2):
            specs.append((f"pr{v}.mid{j}.prev.weight", (w, w, 3, 3)))
            specs += _conv_spec(f"pr{v}.mid{j}.cur", w, w)
        specs += _conv_spec(f"pr{v}.head", config.head_channels(v), w, prelu=False)
    specs.append((f"pr{config.L}.slice0", (config.head_channels(config.L),)))
    return specs


def init_weights_seeded(config: ModelConfig) -> dict[str, np.ndarray]:
    """Deterministic uniform [-a, a] init with a = 1/sqrt(fan_in)."""
    rng = np.random.default_rng(config.seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in weight_specs(config):
        if name.endswith(".alpha"):
            data = np.full(shape, 0.25, dtype=np.float32)
        elif name.endswith(".slice0"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:]))
            else:  # bias: fan_in of the conv it belongs to
                fan_in = max(1, shape[0])
            a = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-a, a, size=shape).astype(np.float32)
        weights[name] = data
    return weights


def save_weights(config: ModelConfig, weights: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    buf.write(struct.pack("<BBHHBB", config.L, config.k, config.C,
                          config.split_s, _MODE_CODES[config.mode], config.M))
    buf.write(struct.pack("<B", len(config.widths)))
    for w in config.widths:
        buf.write(struct.pack("<H", w))
    buf.write(struct.pack("<HQ", config.z_channels, config.seed))
    buf.write(struct.pack("<I", len(weights)))
    for name, data in weights.items():
        enc = name.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return buf.getvalue()


def load_weights(blob: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    buf = io.BytesIO(blob)

    def read(n):
        b = buf.read(n)
        if len(b) != n:
            raise WeightFormatError("truncated weight file")
        return b

    if read(4) != MAGIC:
        raise WeightFormatError("bad magic")
    (version,) = struct.unpack("<B", read(1))
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    L, k, C, split_s, mode_code, M = struct.unpack("<BBHHBB", read(8))
    if mode_code not in _MODE_NAMES:
        raise WeightFormatError(f"unknown mode code {mode_code}")
    (n_widths,) = struct.unpack("<B", read(1))
    widths = tuple(struct.unpack("<H", read(2))[0] for _ in range(n_widths))
    z_channels, seed = struct.unpack("<HQ", read(10))
    config = ModelConfig(L=L, k=k, C=C, split_s=split_s,
                         mode=_MODE_NAMES[mode_code], M=M, widths=widths,
                         z_channels=z_channels, seed=seed)
    (count,) = struct.unpack("<I", read(4))
    weights: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", read(1))
        shape = tuple(struct.unpack("<I", read(4))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(read(4 * n), dtype="<f4").reshape(shape)
        if not np.all(np.isfinite(data)):
            raise WeightFormatError(f"non-finite values in record {name!r}")
        weights[name] = data.copy()
    expected = dict(weight_specs(config))
    for name, shape in expected.items():
        if name not in weights:
            raise WeightFormatError(f"missing record {name!r}")
        if weights[name].shape != shape:
            raise WeightFormatError(
                f"record {name!r} has shape {weights[name].shape}, "
                f"expected {shape}")
    return config, weights


# ---------------------------------------------------------------------------
# Forward primitives


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
           stride: int = 1) -> np.ndarray:
    """3x3 same-padded convolution via per-offset matmuls."""
    out_ch, in_ch, kh, kw = w.shape
    c, h, width = x.shape
    if c != in_ch:
        raise ShapeError(f"conv expects {in_ch} channels, got {c}")
    xp = np.zeros((c, h + kh - 1, width + kw - 1), dtype=np.float64)
    xp[:, kh // 2:kh // 2 + h, kw // 2:kw // 2 + width] = x
    out = np.zeros((out_ch, h, width), dtype=np.float64)
    flat = out.reshape(out_ch, -1)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy:dy + h, dx:dx + width].reshape(c, -1)
            flat += w[:, :, dy, dx] @ patch
    if b is not None:
        out += b[:, None, None]
    if stride > 1:
        out = np.ascontiguousarray(out[:, ::stride, ::stride])
    return out


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, alpha[:, None, None] * x)


def normalize_image(symbols: np.ndarray) -> np.ndarray:
    """Map 8-bit symbols to the real grid values the networks consume."""
    return np.asarray(X_GRID.value(symbols), dtype=np.float64)


class ShvcModel:
    """Immutable weights plus the spec'd forward operations."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        self.config = config
        self.weights = {k: np.asarray(v, dtype=np.float64)
                        for k, v in weights.items()}
        self._raw = weights

    @classmethod
    def seeded(cls, config: ModelConfig) -> "ShvcModel":
        return cls(config, init_weights_seeded(config))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ShvcModel":
        config, weights = load_weights(blob)
        return cls(config, weights)

    def to_bytes(self) -> bytes:
        return save_weights(self.config, self._raw)

    def _w(self, name):
        return self.weights[name]

    def _conv(self, name, x, stride=1, act=True):
        out = conv2d(x, self._w(f"{name}.weight"),
                     self._w(f"{name}.bias"), stride=stride)
        if act:
            out = prelu(out, self._w(f"{name}.alpha"))
        return out

    # -- posterior ---------------------------------------------------------

    def posterior_params(self, l: int, inp: np.ndarray) -> PosteriorParams:
        """Factorised logistic parameters over latent layer l.

        For l == 1, `inp` is the real-valued image (C, H, W); in ArIB mode
        only the first split_s sub-blocks of its reorder are visible.  For
        l > 1, `inp` is the real-valued latent of layer l - 1.
        """
        cfg = self.config
        if not 1 <= l <= cfg.L:
            raise ValueError(f"layer {l} outside [1, {cfg.L}]")
        if l == 1:
            if inp.shape[0] != cfg.C:
                raise ShapeError(f"expected {cfg.C}-channel image input")
            g = subpixel_unshuffle_g(inp, cfg.k)
            if cfg.mode == MODE_ARIB:
                g = g.copy()
                g[cfg.split_s * cfg.C:] = 0.0
            h = self._conv(f"q{l}.conv0", g)
        else:
            if inp.shape[0] != cfg.z_channels:
                raise ShapeError(f"expected {cfg.z_channels}-channel latent")
            h = self._conv(f"q{l}.conv0", inp, stride=cfg.k)
        h = self._conv(f"q{l}.conv1", h)
        h = self._conv(f"q{l}.conv2", h)
        out = self._conv(f"q{l}.conv3", h, act=False)
        zc = cfg.z_channels
        return PosteriorParams(
            means=out[:zc],
            log_scales=np.clip(out[zc:], LOG_SCALE_MIN, LOG_SCALE_MAX))

    # -- context decoders --------------------------------------------------

    def context_features(self, l: int, conditioning: np.ndarray) -> ContextD:
        """Features conditioning level l - 1's variable on latent l."""
        cfg = self.config
        if not 1 <= l <= cfg.L:
            raise ValueError(f"layer {l} outside [1, {cfg.L}]")
        if conditioning.shape[0] != cfg.z_channels:
            raise ShapeError("context conditioning must be a latent tensor")
        h = self._conv(f"ctx{l}.conv0", conditioning)
        h = self._conv(f"ctx{l}.conv1", h)
        h = self._conv(f"ctx{l}.conv2", h)
        out = conv2d(h, self._w(f"ctx{l}.conv3.weight"),
                     self._w(f"ctx{l}.conv3.bias"))
        return ContextD(features=out, has_latent=True)

    def latent_free_context(self, l: int, spatial: tuple[int, int]) -> ContextD:
        """Zeroed context for conditioning that must not see any latent."""
        return ContextD(
            features=np.zeros((self.config.widths[l - 1], *spatial)),
            has_latent=False)

    # -- priors ------------------------------------------------------------

    def prior_subblock_params(self, level: int, d: ContextD | None,
                              decoded_prefix: np.ndarray, i: int) -> WeakArParams:
        """One sub-block's parameters given the decoded prefix.

        `decoded_prefix` is the full (C_v*k^2, H, W) reordered variable with
        sub-blocks >= i zeroed; only sub-blocks < i influence the output.
        """
        cv = self.config.var_channels(level)
        if decoded_prefix.shape[0] != cv * self.config.num_subblocks:
            raise ShapeError("decoded prefix has wrong channel count")
        ev = PriorEvaluator(self, level, d, spatial=decoded_prefix.shape[1:])
        params = None
        for j in range(i + 1):
            prev = decoded_prefix[(j - 1) * cv:j * cv] if j > 0 else None
            params = ev.step(prev)
        return params

    def unpack_head(self, level: int, raw: np.ndarray) -> WeakArParams:
        """Split a head output (head_ch, H, W) into structured parameters."""
        cfg = self.config
        cv = cfg.var_channels(level)
        m = cfg.var_mixtures(level)
        _, h, w = raw.shape
        pos = 0
        alpha = raw[pos:pos + cv]
        pos += cv
        beta = np.zeros((cv, cv, h, w))
        for c in range(1, cv):
            beta[c, :c] = raw[pos:pos + c]
            pos += c
        means = raw[pos:pos + m * cv].reshape(m, cv, h, w)
        pos += m * cv
        log_scales = np.clip(raw[pos:pos + m * cv].reshape(m, cv, h, w),
                             LOG_SCALE_MIN, LOG_SCALE_MAX)
        pos += m * cv
        logits = raw[pos:pos + m * cv].reshape(m, cv, h, w)
        return WeakArParams(alpha=alpha, beta=beta, means=means,
                            log_scales=log_scales, logits=logits)


class PriorEvaluator:
    """Incremental per-sub-block evaluation of one prior network.

    ``step`` is called once per sub-block in index order; each call feeds
    the real-valued channels of the *previous* sub-block (None for the
    first) and returns that sub-block's parameters.
    """

    def __init__(self, model: ShvcModel, level: int, d: ContextD | None,
                 spatial: tuple[int, int] | None = None):
        cfg = model.config
        if level < 0 or level > cfg.L:
            raise ValueError(f"level {level} outside [0, {cfg.L}]")
        if level < cfg.L and d is None:
            raise ValueError("non-top prior requires decoded context")
        if spatial is None:
            if d is None:
                raise ValueError("top prior needs explicit spatial dims")
            spatial = d.features.shape[1:]
        if d is not None and tuple(d.features.shape[1:]) != tuple(spatial):
            raise ShapeError("context spatial dims do not match variable")
        self.model = model
        self.level = level
        self.d = d
        self.spatial = tuple(spatial)
        self.slot = 0
        self._cols: list[list[np.ndarray]] = [[], [], []]  # activations per layer
        self._ctx_term = None
        if d is not None:
            self._ctx_term = conv2d(d.features,
                                    model._w(f"pr{level}.in_ctx.weight"), None)

    def step(self, prev_subblock: np.ndarray | None) -> WeakArParams:
        cfg = self.model.config
        m, v = self.model, self.level
        i = self.slot
        if i >= cfg.num_subblocks:
            raise IndexError("all sub-blocks already evaluated")
        if (cfg.mode == MODE_ARIB and v == 0 and i >= cfg.split_s
                and self.d is not None and self.d.has_latent):
            raise ValueError(
                "ArIB causality violation: latent context supplied for a "
                "sub-block that must be latent-free")
        if prev_subblock is None:
            prev_subblock = np.zeros((cfg.var_channels(v), *self.spatial))
        self._push_column(prev_subblock)
        self.slot += 1
        if v == cfg.L and i == 0:
            # learnable unconditional parameters for the first top slice
            raw = np.broadcast_to(
                m._w(f"pr{v}.slice0")[:, None, None],
                (cfg.head_channels(v), *self.spatial)).copy()
        else:
            raw = conv2d(self._cols[2][i], m._w(f"pr{v}.head.weight"),
                         m._w(f"pr{v}.head.bias"))
        return m.unpack_head(v, raw)

    def _push_column(self, prev):
        m, v = self.model, self.level
        i = len(self._cols[0])
        h0 = conv2d(prev, m._w(f"pr{v}.in_prev.weight"),
                    m._w(f"pr{v}.in_prev.bias"))
        if self._ctx_term is not None:
            h0 = h0 + self._ctx_term
        a0 = prelu(h0, m._w(f"pr{v}.in_prev.alpha"))
        self._cols[0].append(a0)
        for j, layer in ((1, "mid1"), (2, "mid2")):
            cur_in = self._cols[j - 1][i]
            h = conv2d(cur_in, m._w(f"pr{v}.{layer}.cur.weight"),
                       m._w(f"pr{v}.{layer}.cur.bias"))
            if i > 0:
                h = h + conv2d(self._cols[j - 1][i - 1],
                               m._w(f"pr{v}.{layer}.prev.weight"), None)
            self._cols[j].append(prelu(h, m._w(f"pr{v}.{layer}.cur.alpha")))
