"""End-to-end acceptance checks.

Each test prints one machine-readable PASS/FAIL line so the whole gate
can be read off the pytest output.  All model evaluations here use the
deterministic seeded initializer; no trained weights are required.
"""

import time

import numpy as np
import pytest

from shvc import codec
from shvc.ans import AnsState, AuxSource
from shvc.codec import PRECISION
from shvc.container import pad_replicate
from shvc.dists import quantize_rows
from shvc.model import ModelConfig, PriorEvaluator, ShvcModel, normalize_image
from shvc.tensors import (f_g_permutation, pixel_unshuffle_f,
                          subpixel_shuffle_g_inv, subpixel_unshuffle_g)

N_IMAGES = 200


def _report(capsys, name, ok, detail=""):
    with capsys.disabled():
        tail = f"  ({detail})" if detail else ""
        print(f"\nacceptance: {name}: {'PASS' if ok else 'FAIL'}{tail}")
    assert ok, f"{name} failed {detail}"


@pytest.fixture(scope="module")
def models():
    out = {}
    for mode in ("shvc", "arib"):
        for L in (1, 2, 3):
            out[mode, L] = ShvcModel.seeded(
                ModelConfig(L=L, mode=mode, seed=0))
    return out


@pytest.fixture(scope="module")
def sweep(models):
    """One round trip per image over the mode x depth matrix."""
    rng = np.random.default_rng(2024)
    combos = [(m, L) for m in ("shvc", "arib") for L in (1, 2, 3)]
    results = []
    start = time.time()
    for i in range(N_IMAGES):
        mode, L = combos[i % len(combos)]
        model = models[mode, L]
        h, w = rng.integers(8, 33, size=2)
        x = rng.integers(0, 256, size=(3, h, w))
        padded = pad_replicate(x, model.config.divisor)
        # measure_overhead raises unless decode(encode(x)) is exact and
        # the auxiliary bits come back verbatim
        rep = codec.measure_overhead(padded, model, mode, seed=i)
        n_sym = codec.num_coded_symbols(model, *padded.shape[1:])
        results.append((mode, L, n_sym, rep))
    return {"results": results, "seconds": time.time() - start}


def test_losslessness_200_images(sweep, capsys):
    ok = len(sweep["results"]) == N_IMAGES and sweep["seconds"] <= 60.0
    _report(capsys, "losslessness-200-images", ok,
            f"{len(sweep['results'])} images, {sweep['seconds']:.1f}s")


def test_codelength_identity(sweep, capsys):
    worst = 0.0
    ok = True
    for mode, L, n_sym, rep in sweep["results"]:
        gap = abs(rep.net_bits - rep.model_bits)
        slack = 32 + 0.001 * n_sym
        worst = max(worst, gap / slack)
        ok = ok and gap <= slack
    _report(capsys, "codelength-identity", ok,
            f"worst gap/bound = {worst:.3f}")


def test_bits_back_recovery(models, capsys):
    rng = np.random.default_rng(7)
    ok = True
    for L in (1, 2, 3):
        model = models["shvc", L]
        d = model.config.divisor
        for trial in range(4):
            x = rng.integers(0, 256, size=(3, d, d))
            aux = AuxSource.prng(100 + trial)
            enc = codec.encode_image_shvc(x, model, aux)
            dec, final = codec.decode_image_shvc(enc.words, model, d, d)
            ok = ok and np.array_equal(dec, x)
            # raises unless every borrowed word is returned verbatim
            returned = codec.returned_aux_bits(final, aux)
            ok = ok and returned == aux.bits_consumed
    _report(capsys, "bits-back-recovery", ok)


def test_arib_overhead(models, capsys):
    arib = models["arib", 2]
    shvc = models["shvc", 2]
    rng = np.random.default_rng(11)
    held_out = [rng.integers(0, 256, size=(3, 16, 16)) for _ in range(20)]

    constraint_hits = 0
    arib_aux = []
    shvc_aux = []
    pad_ok = True
    for j, x in enumerate(held_out):
        # realized bit budget: latent-free sub-blocks pushed first must
        # cover what the posterior pop of the first latent consumes
        cfg = arib.config
        x_real = normalize_image(x)
        real_g = subpixel_unshuffle_g(x_real, cfg.k)
        sym_g = subpixel_unshuffle_g(np.asarray(x, dtype=np.int64), cfg.k)
        probe = AnsState(AuxSource.prng(j))
        probe.seed_state_from_aux()
        ctx_free = arib.latent_free_context(1, real_g.shape[1:])
        params = codec._prior_params_all(arib, 0, ctx_free, real_g)
        for i in range(cfg.num_subblocks - 1, cfg.split_s - 1, -1):
            codec._push_subblock(probe, arib, 0, params, sym_g, real_g, i)
        supplied = probe.push_bits
        codec._pop_var_q(probe, arib, 1, x_real)
        if probe.pop_bits <= supplied:
            constraint_hits += 1

        enc_a = codec.encode_image_arib(x, arib, pad_seed=j)
        padding = enc_a.aux.bits_consumed - 64   # beyond state seeding
        pad_ok = pad_ok and padding <= 64
        arib_aux.append(enc_a.aux.bits_consumed)

        aux = AuxSource.prng(j)
        enc_s = codec.encode_image_shvc(x, shvc, aux)
        first_pop = AnsState(AuxSource.prng(j))
        first_pop.seed_state_from_aux()
        codec._pop_var_q(first_pop, shvc, 1, x_real)
        assert aux.bits_consumed >= first_pop.pop_bits - 64
        shvc_aux.append(aux.bits_consumed)

    ratio = np.mean(shvc_aux) / np.mean(arib_aux)
    ok = constraint_hits >= 0.95 * len(held_out) and pad_ok
    _report(capsys, "arib-overhead", ok,
            f"constraint {constraint_hits}/{len(held_out)}, "
            f"aux ratio shvc/arib = {ratio:.1f}x")


def test_operator_suite(capsys):
    rng = np.random.default_rng(5)
    ok = True
    for _ in range(1000):
        c = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        h = k * int(rng.integers(1, 4))
        w = k * int(rng.integers(1, 4))
        t = rng.integers(0, 256, size=(c, h, w))
        g = subpixel_unshuffle_g(t, k)
        ok = ok and np.array_equal(subpixel_shuffle_g_inv(g, k, c), t)
        ok = ok and np.array_equal(g, pixel_unshuffle_f(t, k)[f_g_permutation(c, k)])
    # with k = H = W the reorder enumerates single pixels in raster order
    for k in (2, 3, 4):
        t = rng.integers(0, 256, size=(3, k, k))
        g = subpixel_unshuffle_g(t, k)
        for n in range(k * k):
            ok = ok and np.array_equal(g[3 * n:3 * n + 3, 0, 0],
                                       t[:, n // k, n % k])
    _report(capsys, "operator-suite", ok)


def test_cdf_table_suite(capsys):
    rng = np.random.default_rng(9)
    ok = True
    worst = 0.0
    remaining = 10_000
    while remaining > 0:
        batch = min(remaining, 500)
        num = int(rng.integers(2, 300))
        pmf = rng.dirichlet(np.full(num, rng.uniform(0.1, 2.0)), size=batch)
        freqs = quantize_rows(pmf, PRECISION)
        ok = ok and (freqs.sum(axis=1) == 1 << PRECISION).all()
        ok = ok and freqs.min() >= 1
        q = freqs / float(1 << PRECISION)
        kl = np.sum(pmf * np.log2(np.maximum(pmf, 1e-300) / q), axis=1)
        bound = num * 2.0 ** (1 - PRECISION)
        ok = ok and (kl <= bound).all()
        worst = max(worst, float(kl.max() / bound))
        remaining -= batch
    _report(capsys, "cdf-table-suite", ok, f"worst KL/bound = {worst:.3f}")


def test_arib_structural_independence(models, capsys):
    model = models["arib", 1]
    cfg = model.config
    s = cfg.split_s
    rng = np.random.default_rng(13)
    ok = True
    for _ in range(5):
        x = rng.integers(0, 256, size=(3, 8, 8))
        x_real = normalize_image(x)
        real_g = subpixel_unshuffle_g(x_real, cfg.k)

        # q-parameters blind to sub-blocks >= split_s
        tampered_g = real_g.copy()
        tampered_g[s * cfg.C:] = rng.normal(size=tampered_g[s * cfg.C:].shape)
        tampered = subpixel_shuffle_g_inv(tampered_g, cfg.k, cfg.C)
        a = model.posterior_params(1, x_real)
        b = model.posterior_params(1, tampered)
        ok = ok and np.array_equal(a.means, b.means)
        ok = ok and np.array_equal(a.log_scales, b.log_scales)

        # p-parameters of sub-blocks >= split_s blind to the latent:
        # scrambling every weight of the latent-context pathway must
        # leave them untouched, while perturbing decoded sub-blocks does
        # change them (so the probe can detect dependence)
        ctx = model.latent_free_context(1, real_g.shape[1:])
        p1 = codec._prior_params_all(model, 0, ctx, real_g)
        scrambled = dict(model.weights)
        for name in scrambled:
            if name.startswith("ctx1.") or name == "pr0.in_ctx.weight":
                scrambled[name] = rng.normal(size=scrambled[name].shape)
        twin = ShvcModel(cfg, scrambled)
        ctx_t = twin.latent_free_context(1, real_g.shape[1:])
        p2 = codec._prior_params_all(twin, 0, ctx_t, real_g)
        for i in range(s, cfg.num_subblocks):
            ok = ok and np.array_equal(p1[i].means, p2[i].means)
            ok = ok and np.array_equal(p1[i].alpha, p2[i].alpha)
        shifted = real_g.copy()
        shifted[:cfg.C] += 0.1
        p3 = codec._prior_params_all(model, 0, ctx, shifted)
        ok = ok and not np.array_equal(p1[s].means, p3[s].means)
        # and the coder refuses to leak latent context into that range
        z = rng.normal(size=cfg.z_shape(1, 8, 8))
        leaky = PriorEvaluator(model, 0, model.context_features(1, z),
                               spatial=real_g.shape[1:])
        for i in range(s):
            leaky.step(real_g[(i - 1) * cfg.C:i * cfg.C] if i else None)
        with pytest.raises(ValueError):
            leaky.step(real_g[(s - 1) * cfg.C:s * cfg.C])
    _report(capsys, "arib-structural-independence", ok)
