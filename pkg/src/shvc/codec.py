"""Coding schedules tying the model to the ANS coder.

Encoding follows the bits-back recipe: latents are *popped* from the
stream under the posterior (consuming auxiliary bits), then data and
latents are *pushed* under the priors.  With more than one latent layer
the pops and pushes interleave so the peak auxiliary demand stays
bounded.  Within every variable, sub-blocks are pushed in reverse index
order (and channels in reverse within a sub-block) so the decoder reads
them forward.

The ArIB schedule removes the external auxiliary source: the final
sub-blocks of the image, conditionally independent of the latent, are
pushed first and supply the bits the posterior pop consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ans import AnsState, AuxSource, WORD_BITS
from .dists import (cumulative_rows, logistic_pmf_rows, quantize_rows,
                    round_to_grid, softmax)
from .model import (MODE_ARIB, MODE_SHVC, ContextD, PriorEvaluator, ShvcModel,
                    WeakArParams, X_GRID, Z_GRID, normalize_image,
                    weak_ar_mean_field)
from .tensors import ShapeError, subpixel_shuffle_g_inv, subpixel_unshuffle_g

PRECISION = 16


@dataclass(frozen=True)
class Step:
    kind: str           # "pop" | "push"
    dist: str           # "q" | "p"
    target: int         # variable level being coded (0 = image)
    cond: int | None    # conditioning variable level


def bitswap_schedule(L: int) -> list[Step]:
    """Interleaved encode plan; the decode plan is its reverse with
    pops and pushes swapped."""
    if L < 1:
        raise ValueError("need at least one latent layer")
    steps = []
    for l in range(1, L + 1):
        steps.append(Step("pop", "q", l, l - 1))
        steps.append(Step("push", "p", l - 1, l))
    steps.append(Step("push", "p", L, None))
    return steps


def decode_schedule(L: int) -> list[Step]:
    swap = {"pop": "push", "push": "pop"}
    return [Step(swap[s.kind], s.dist, s.target, s.cond)
            for s in reversed(bitswap_schedule(L))]


@dataclass(frozen=True)
class OverheadReport:
    total_bits: int
    model_bits: float        # -log2 of coded masses, pops refunded
    aux_bits_consumed: int
    aux_bits_returned: int

    @property
    def net_bits(self) -> int:
        return self.total_bits - self.aux_bits_returned


@dataclass
class EncodeResult:
    words: list[int]
    aux: AuxSource
    model_bits: float
    num_symbols: int

    @property
    def total_bits(self) -> int:
        return WORD_BITS * len(self.words)


# ---------------------------------------------------------------------------
# Table construction (all parameters snapped to the 1e-4 grid first)


def _posterior_tables(model: ShvcModel, l: int, cond_real: np.ndarray):
    """Row tables for latent l in sub-block flattening order."""
    pp = model.posterior_params(l, cond_real)
    k = model.config.k
    means = round_to_grid(subpixel_unshuffle_g(pp.means, k)).reshape(-1)
    log_s = round_to_grid(subpixel_unshuffle_g(pp.log_scales, k)).reshape(-1)
    pmf = logistic_pmf_rows(means, log_s, Z_GRID)
    freqs = quantize_rows(pmf, PRECISION)
    return freqs, cumulative_rows(freqs)


def _channel_tables(params: WeakArParams, c: int, decoded_real: np.ndarray,
                    grid, m: int):
    """Row tables for one sub-block channel given decoded lower channels."""
    mu = weak_ar_mean_field(params, decoded_real, c)
    means = round_to_grid(params.means[:, c] + mu[None])
    log_s = round_to_grid(params.log_scales[:, c])
    w = softmax(round_to_grid(params.logits[:, c]), axis=0)
    comp = logistic_pmf_rows(means.reshape(m, -1), log_s.reshape(m, -1), grid)
    pmf = np.einsum("mn,mns->ns", w.reshape(m, -1), comp)
    freqs = quantize_rows(pmf, PRECISION)
    return freqs, cumulative_rows(freqs)


def _push_rows(ans: AnsState, freqs, cum, syms: np.ndarray) -> None:
    """Push per-site symbols in reverse site order."""
    f = freqs.tolist()
    cm = cum.tolist()
    s = syms.tolist()
    for t in range(len(s) - 1, -1, -1):
        v = s[t]
        ans.push(cm[t][v], f[t][v], PRECISION)


def _pop_rows(ans: AnsState, freqs, cum) -> np.ndarray:
    """Pop per-site symbols in forward site order."""
    n = freqs.shape[0]
    out = np.empty(n, dtype=np.int64)
    f = freqs.tolist()
    cm = cum.tolist()
    for t in range(n):
        cf = ans.pop_cf(PRECISION)
        row = cm[t]
        sym = int(np.searchsorted(cum[t], cf, side="right")) - 1
        ans.pop_advance(cf, row[sym], f[t][sym], PRECISION)
        out[t] = sym
    return out


# ---------------------------------------------------------------------------
# Per-variable coding


def _pop_var_q(ans, model, l, cond_real):
    cfg = model.config
    freqs, cum = _posterior_tables(model, l, cond_real)
    syms = _pop_rows(ans, freqs, cum)
    # latent l lives at 1/k the resolution of its conditioning variable
    hl, wl = (d // cfg.k for d in cond_real.shape[1:])
    sym_g = syms.reshape(cfg.z_channels * cfg.k ** 2,
                         hl // cfg.k, wl // cfg.k)
    return subpixel_shuffle_g_inv(sym_g, cfg.k, cfg.z_channels)


def _push_var_q(ans, model, l, cond_real, z_sym):
    freqs, cum = _posterior_tables(model, l, cond_real)
    syms = subpixel_unshuffle_g(z_sym, model.config.k).reshape(-1)
    _push_rows(ans, freqs, cum, syms)


def _prior_params_all(model, level, ctx, real_g):
    """All k^2 sub-block parameter sets, teacher-forced on known data."""
    cfg = model.config
    cv = cfg.var_channels(level)
    ev = PriorEvaluator(model, level, ctx, spatial=real_g.shape[1:])
    params = []
    for i in range(cfg.num_subblocks):
        prev = real_g[(i - 1) * cv:i * cv] if i > 0 else None
        params.append(ev.step(prev))
    return params


def _push_subblock(ans, model, level, params, sym_g, real_g, i):
    cfg = model.config
    cv = cfg.var_channels(level)
    grid = X_GRID if level == 0 else Z_GRID
    m = cfg.var_mixtures(level)
    block_sym = sym_g[i * cv:(i + 1) * cv]
    block_real = real_g[i * cv:(i + 1) * cv]
    for c in range(cv - 1, -1, -1):
        freqs, cum = _channel_tables(params[i], c, block_real[:c], grid, m)
        _push_rows(ans, freqs, cum, block_sym[c].reshape(-1))


def _push_var_p(ans, model, level, ctx, sym_g, real_g):
    params = _prior_params_all(model, level, ctx, real_g)
    for i in range(model.config.num_subblocks - 1, -1, -1):
        _push_subblock(ans, model, level, params, sym_g, real_g, i)


def _pop_var_p(ans, model, level, ctx, spatial, subblocks=None):
    """Decode a variable (or its first `subblocks` sub-blocks) in g-space."""
    cfg = model.config
    cv = cfg.var_channels(level)
    grid = X_GRID if level == 0 else Z_GRID
    m = cfg.var_mixtures(level)
    n_sub = cfg.num_subblocks if subblocks is None else subblocks
    sym_g = np.zeros((cv * cfg.num_subblocks, *spatial), dtype=np.int64)
    real_g = np.zeros((cv * cfg.num_subblocks, *spatial))
    ev = PriorEvaluator(model, level, ctx, spatial=spatial)
    _continue_pop_var_p(ans, model, level, ev, sym_g, real_g, 0, n_sub, grid, m)
    return sym_g, real_g, ev


def _continue_pop_var_p(ans, model, level, ev, sym_g, real_g, start, stop,
                        grid, m):
    cfg = model.config
    cv = cfg.var_channels(level)
    for i in range(start, stop):
        prev = real_g[(i - 1) * cv:i * cv] if i > 0 else None
        params = ev.step(prev)
        for c in range(cv):
            freqs, cum = _channel_tables(params, c,
                                         real_g[i * cv:i * cv + c], grid, m)
            syms = _pop_rows(ans, freqs, cum)
            sym_g[i * cv + c] = syms.reshape(sym_g.shape[1:])
            real_g[i * cv + c] = grid.value(sym_g[i * cv + c])


# ---------------------------------------------------------------------------
# Whole-image schedules


def _check_image(model, x_sym):
    cfg = model.config
    if x_sym.ndim != 3 or x_sym.shape[0] != cfg.C:
        raise ShapeError(f"expected ({cfg.C}, H, W) image, got {x_sym.shape}")
    if x_sym.shape[1] % cfg.divisor or x_sym.shape[2] % cfg.divisor:
        raise ShapeError(
            f"spatial dims {x_sym.shape[1:]} must divide by {cfg.divisor}")
    if x_sym.min() < 0 or x_sym.max() >= X_GRID.num_symbols:
        raise ValueError("image symbols outside [0, 255]")


def num_coded_symbols(model: ShvcModel, height: int, width: int) -> int:
    cfg = model.config
    n = cfg.C * height * width
    for l in range(1, cfg.L + 1):
        n += int(np.prod(cfg.z_shape(l, height, width)))
    return n


def _encode_ops_shvc(ans, model, x_sym):
    cfg = model.config
    x_real = normalize_image(x_sym)
    reals = {0: x_real}
    syms = {0: np.asarray(x_sym, dtype=np.int64)}
    for step in bitswap_schedule(cfg.L):
        if step.kind == "pop":
            z_sym = _pop_var_q(ans, model, step.target, reals[step.cond])
            syms[step.target] = z_sym
            reals[step.target] = np.asarray(Z_GRID.value(z_sym))
        else:
            v = step.target
            ctx = (model.context_features(v + 1, reals[v + 1])
                   if v < cfg.L else None)
            sym_g = subpixel_unshuffle_g(syms[v], cfg.k)
            real_g = subpixel_unshuffle_g(reals[v], cfg.k)
            _push_var_p(ans, model, v, ctx, sym_g, real_g)
    return syms


def _decode_ops_shvc(ans, model, height, width):
    cfg = model.config
    reals = {}
    syms = {}
    for step in decode_schedule(cfg.L):
        if step.kind == "pop":   # was an encode push under p
            v = step.target
            ctx = (model.context_features(v + 1, reals[v + 1])
                   if v < cfg.L else None)
            if v == 0:
                cv, hh, ww = cfg.C, height, width
            else:
                cv, hh, ww = cfg.z_shape(v, height, width)
            spatial = (hh // cfg.k, ww // cfg.k)
            sym_g, _, _ = _pop_var_p(ans, model, v, ctx, spatial)
            syms[v] = subpixel_shuffle_g_inv(sym_g, cfg.k, cv)
            grid = X_GRID if v == 0 else Z_GRID
            reals[v] = np.asarray(grid.value(syms[v]))
        else:                    # was an encode pop under q
            _push_var_q(ans, model, step.target, reals[step.cond],
                        syms[step.target])
    return syms


def encode_image_shvc(x_sym: np.ndarray, model: ShvcModel,
                      aux: AuxSource) -> EncodeResult:
    if model.config.mode != MODE_SHVC:
        raise ValueError("model is not configured for SHVC coding")
    if aux.mode == "none":
        raise ValueError("SHVC encoding requires an auxiliary bit source")
    _check_image(model, x_sym)
    ans = AnsState(aux)
    ans.seed_state_from_aux()
    _encode_ops_shvc(ans, model, x_sym)
    return EncodeResult(words=ans.serialize_words(), aux=aux,
                        model_bits=ans.push_bits - ans.pop_bits,
                        num_symbols=num_coded_symbols(model, *x_sym.shape[1:]))


def decode_image_shvc(words: list[int], model: ShvcModel, height: int,
                      width: int) -> tuple[np.ndarray, AnsState]:
    """Exact inverse of encode_image_shvc; the returned state's stack
    holds the auxiliary bits given back by the final posterior pushes."""
    ans = AnsState.from_words(words, aux=AuxSource.none())
    syms = _decode_ops_shvc(ans, model, height, width)
    return syms[0], ans


def _encode_ops_arib(ans, model, x_sym):
    cfg = model.config
    s = cfg.split_s
    x_real = normalize_image(x_sym)
    sym_g = subpixel_unshuffle_g(np.asarray(x_sym, dtype=np.int64), cfg.k)
    real_g = subpixel_unshuffle_g(x_real, cfg.k)
    spatial = real_g.shape[1:]

    # Step 0: the latent-free sub-blocks supply the initial bits.
    ctx_free = model.latent_free_context(1, spatial)
    params_free = _prior_params_all(model, 0, ctx_free, real_g)
    for i in range(cfg.num_subblocks - 1, s - 1, -1):
        _push_subblock(ans, model, 0, params_free, sym_g, real_g, i)

    # Step 1: pop the first latent (posterior only sees sub-blocks < s).
    z_sym = _pop_var_q(ans, model, 1, x_real)
    reals = {0: x_real, 1: np.asarray(Z_GRID.value(z_sym))}
    syms = {0: np.asarray(x_sym, dtype=np.int64), 1: z_sym}

    # Step 2: the latent-conditioned sub-blocks.
    ctx1 = model.context_features(1, reals[1])
    ev = PriorEvaluator(model, 0, ctx1, spatial=spatial)
    params_z = []
    for i in range(s):
        prev = real_g[(i - 1) * cfg.C:i * cfg.C] if i > 0 else None
        params_z.append(ev.step(prev))
    for i in range(s - 1, -1, -1):
        _push_subblock(ans, model, 0, params_z, sym_g, real_g, i)

    # Step 3: latents exactly as in SHVC.
    for step in bitswap_schedule(cfg.L):
        if step.target == 0 or (step.kind == "pop" and step.target == 1):
            continue  # image and first pop handled above
        if step.kind == "pop":
            z = _pop_var_q(ans, model, step.target, reals[step.cond])
            syms[step.target] = z
            reals[step.target] = np.asarray(Z_GRID.value(z))
        else:
            v = step.target
            ctx = (model.context_features(v + 1, reals[v + 1])
                   if v < cfg.L else None)
            _push_var_p(ans, model, v, ctx,
                        subpixel_unshuffle_g(syms[v], cfg.k),
                        subpixel_unshuffle_g(reals[v], cfg.k))
    return syms


def _decode_ops_arib(ans, model, height, width):
    cfg = model.config
    s = cfg.split_s
    reals = {}
    syms = {}
    # Latents first, mirroring the SHVC decode order.
    for step in decode_schedule(cfg.L):
        if step.target == 0 or (step.kind == "push" and step.target == 1):
            continue
        if step.kind == "pop":
            v = step.target
            ctx = (model.context_features(v + 1, reals[v + 1])
                   if v < cfg.L else None)
            cv, hh, ww = cfg.z_shape(v, height, width)
            sym_g, _, _ = _pop_var_p(ans, model, v, ctx,
                                     (hh // cfg.k, ww // cfg.k))
            syms[v] = subpixel_shuffle_g_inv(sym_g, cfg.k, cv)
            reals[v] = np.asarray(Z_GRID.value(syms[v]))
        else:
            _push_var_q(ans, model, step.target, reals[step.cond],
                        syms[step.target])

    spatial = (height // cfg.k, width // cfg.k)
    # Sub-blocks < s under the latent-conditioned prior.
    ctx1 = model.context_features(1, reals[1])
    sym_g, real_g, _ = _pop_var_p(ans, model, 0, ctx1, spatial, subblocks=s)

    # Return the posterior's borrowed bits given the decoded partition.
    x_partial = subpixel_shuffle_g_inv(real_g, cfg.k, cfg.C)
    _push_var_q(ans, model, 1, x_partial, syms[1])

    # Sub-blocks >= s under the latent-free prior.
    ctx_free = model.latent_free_context(1, spatial)
    ev = PriorEvaluator(model, 0, ctx_free, spatial=spatial)
    grid, m = X_GRID, cfg.M
    for i in range(s):  # rebuild feature columns over the known prefix
        prev = real_g[(i - 1) * cfg.C:i * cfg.C] if i > 0 else None
        ev.step(prev)
    _continue_pop_var_p(ans, model, 0, ev, sym_g, real_g, s,
                        cfg.num_subblocks, grid, m)
    syms[0] = subpixel_shuffle_g_inv(sym_g, cfg.k, cfg.C)
    return syms


def encode_image_arib(x_sym: np.ndarray, model: ShvcModel,
                      pad_seed: int = 0) -> EncodeResult:
    """Auxiliary-bits-free encoding; PRNG padding (counted) only if the
    posterior pop outruns the bits supplied by the latent-free push."""
    if model.config.mode != MODE_ARIB:
        raise ValueError("model is not configured for ArIB coding")
    _check_image(model, x_sym)
    aux = AuxSource.prng(pad_seed)
    ans = AnsState(aux)
    ans.seed_state_from_aux()
    _encode_ops_arib(ans, model, x_sym)
    return EncodeResult(words=ans.serialize_words(), aux=aux,
                        model_bits=ans.push_bits - ans.pop_bits,
                        num_symbols=num_coded_symbols(model, *x_sym.shape[1:]))


def decode_image_arib(words: list[int], model: ShvcModel, height: int,
                      width: int) -> tuple[np.ndarray, AnsState]:
    ans = AnsState.from_words(words, aux=AuxSource.none())
    syms = _decode_ops_arib(ans, model, height, width)
    return syms[0], ans


# ---------------------------------------------------------------------------
# Bits-back verification and overhead reporting


def returned_aux_bits(final: AnsState, enc_aux: AuxSource) -> int:
    """Bits returned at decode, verified word-for-word against the bits
    borrowed at encode (state seed included).  Raises on mismatch."""
    drawn = enc_aux.words_drawn
    seed_state = ((drawn[0] | 0x8000_0000) << 32) | drawn[1]
    if final.state != seed_state:
        raise ValueError("decoder did not return the seeded coder state")
    returned = list(reversed(final.stack))  # pop order == draw order
    if returned != drawn[2:]:
        raise ValueError("auxiliary bits were not returned verbatim")
    return WORD_BITS * len(drawn)


def measure_overhead(x_sym: np.ndarray, model: ShvcModel, mode: str,
                     seed: int = 0) -> OverheadReport:
    """Round-trip one image and account for every auxiliary bit."""
    if mode == MODE_SHVC:
        enc = encode_image_shvc(x_sym, model, AuxSource.prng(seed))
        out, final = decode_image_shvc(enc.words, model, *x_sym.shape[1:])
    elif mode == MODE_ARIB:
        enc = encode_image_arib(x_sym, model, pad_seed=seed)
        out, final = decode_image_arib(enc.words, model, *x_sym.shape[1:])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not np.array_equal(out, x_sym):
        raise AssertionError("round trip failed during overhead measurement")
    returned = returned_aux_bits(final, enc.aux)
    return OverheadReport(total_bits=enc.total_bits,
                          model_bits=enc.model_bits,
                          aux_bits_consumed=enc.aux.bits_consumed,
                          aux_bits_returned=returned)


# ---------------------------------------------------------------------------
# Chained dataset coding


def stream_potential(ans: AnsState) -> float:
    """Information content of the stream in bits."""
    return WORD_BITS * len(ans.stack) + float(np.log2(ans.state))


def encode_dataset_chained(images, model: ShvcModel, seed: int = 0):
    """One shared stream; later images borrow bits from earlier ones.

    Decoding any image requires decoding every image after it in the
    sequence first.  Returns (words, per-image net bits).
    """
    aux = AuxSource.prng(seed)
    ans = AnsState(aux)
    ans.seed_state_from_aux()
    per_image = []
    for x in images:
        _check_image(model, x)
        before = stream_potential(ans)
        _encode_ops_shvc(ans, model, x)
        per_image.append(stream_potential(ans) - before)
    return ans.serialize_words(), per_image


def decode_dataset_chained(words, model: ShvcModel, shapes):
    """Inverse of encode_dataset_chained; `shapes` lists (H, W) per image
    in encode order."""
    ans = AnsState.from_words(words, aux=AuxSource.none())
    out = [None] * len(shapes)
    for j in range(len(shapes) - 1, -1, -1):
        syms = _decode_ops_shvc(ans, model, *shapes[j])
        out[j] = syms[0]
    return out, ans
