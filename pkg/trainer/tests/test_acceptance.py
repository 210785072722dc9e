"""Acceptance gate for the training component.

Each test prints one machine-readable pass/fail line:

    acceptance: <criterion>: PASS|FAIL (<detail>)
"""

import time

import numpy as np
import pytest
import torch

from shvc_trainer.export import export_model, make_golden_vectors, \
    read_golden_vectors
from shvc_trainer.model import ModelConfig, TorchShvc
from shvc_trainer.train import TrainConfig, elbo, histogram_bpd, \
    smooth_patches, train


def _report(capsys, name, ok, detail):
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"\nacceptance: {name}: {status} ({detail})")


def test_masked_3d_causality(capsys):
    """Sub-block-j prior outputs have exactly zero grad w.r.t. inputs i >= j."""
    violations = 0
    checked = 0
    for mode in ("shvc", "arib"):
        for seed in range(3):
            cfg = ModelConfig(L=1, mode=mode, seed=seed,
                              widths=(6, 5, 4, 4, 4))
            m = TorchShvc(cfg)
            g = torch.rand(1, 12, 3, 3, dtype=torch.float64,
                           requires_grad=True)
            ctx = m.context_features(
                1, torch.rand(1, 3, 3, 3, dtype=torch.float64))
            pp = m.prior_parallel(0, ctx, g)
            out = (pp.alpha + pp.means.sum(dim=2) + pp.logits.sum(dim=2)
                   + pp.log_scales.sum(dim=2))
            for j in range(4):
                g.grad = None
                out[0, j].sum().backward(retain_graph=True)
                seen = g.grad.abs().view(4, 3, 3, 3).sum(dim=(1, 2, 3))
                for i in range(4):
                    checked += 1
                    if i >= j and float(seen[i]) != 0.0:
                        violations += 1
                    if i < j and float(seen[i]) == 0.0:
                        violations += 1
    ok = violations == 0
    _report(capsys, "masked-3d-causality", ok,
            f"{checked} (slot, input) pairs, {violations} violations")
    assert ok


def test_serial_parallel_parity(capsys):
    """Both prior paths agree to <= 1e-5 relative over 100 weight draws."""
    worst = 0.0
    for seed in range(100):
        mode = "arib" if seed % 2 else "shvc"
        level = 1 if seed % 3 == 0 else 0
        cfg = ModelConfig(L=1, mode=mode, seed=seed, widths=(6, 5, 4, 4, 4))
        m = TorchShvc(cfg)
        gen = torch.Generator().manual_seed(10_000 + seed)
        if level == 0:
            g = torch.rand(1, 12, 3, 3, generator=gen,
                           dtype=torch.float64) * 2 - 1
            ctx = m.context_features(
                1, torch.rand(1, 3, 3, 3, generator=gen,
                              dtype=torch.float64))
        else:
            g = torch.rand(1, 12, 2, 2, generator=gen,
                           dtype=torch.float64) * 8 - 12
            ctx = None
        with torch.no_grad():
            pp = m.prior_parallel(level, ctx, g)
            ps = m.prior_serial(level, ctx, g)
        for name in ("alpha", "beta", "means", "log_scales", "logits"):
            a, b = getattr(pp, name), getattr(ps, name)
            scale = float(b.abs().max()) + 1e-12
            worst = max(worst, float((a - b).abs().max()) / scale)
    ok = worst <= 1e-5
    _report(capsys, "serial-parallel-parity", ok,
            f"worst relative deviation {worst:.3e} over 100 draws")
    assert ok


def test_toy_training_and_golden_export(capsys):
    """Held-out BPD beats the histogram baseline; golden tables survive a
    byte-exact round trip through the inference runtime."""
    import shvc
    from shvc.dists import logistic_pmf_rows as coder_pmf
    from shvc.dists import quantize_rows as coder_quantize
    from shvc.dists import round_to_grid as coder_round
    from shvc.model import Z_GRID, ShvcModel

    t0 = time.time()
    data = smooth_patches(320, side=8, seed=21)
    train_set, held_out = data[40:], data[:40]
    model = TorchShvc(ModelConfig(L=1, seed=7, widths=(8, 6, 4, 4, 4)))
    train(model, train_set,
          TrainConfig(steps=1000, batch_size=16, lr=2e-3, seed=7))
    with torch.no_grad():
        parts = elbo(model, torch.as_tensor(held_out),
                     generator=torch.Generator().manual_seed(0))
    model_bpd = float(parts.bpd)
    baseline = histogram_bpd(train_set, held_out)
    elapsed = time.time() - t0
    beats = model_bpd < baseline and elapsed < 1800

    # exported weights load in the runtime and reproduce the posterior
    blob = export_model(model)
    runtime = ShvcModel(*shvc.load_weights(blob))
    golden = make_golden_vectors(model, seed=3)
    _, weights, vectors = read_golden_vectors(golden)
    img = vectors["in.image"].astype(np.float64) * (2.0 / 255.0) - 1.0
    ref = runtime.posterior_params(1, img)
    post_ok = (np.allclose(ref.means, vectors["post.means"], atol=1e-5)
               and np.allclose(ref.log_scales, vectors["post.log_scales"],
                               atol=1e-5))

    # byte-exact regeneration of the quantized tables from the stored
    # float32 posterior records, using only runtime code
    flat_m = coder_round(vectors["post.means"].astype(np.float64).reshape(-1))
    flat_s = coder_round(
        vectors["post.log_scales"].astype(np.float64).reshape(-1))
    freqs = coder_quantize(coder_pmf(flat_m, flat_s, Z_GRID), 16)
    stored = vectors["tables.z1"].astype(np.uint32)
    exact = freqs.astype(np.uint32).tobytes() == stored.tobytes()

    ok = beats and post_ok and exact
    _report(capsys, "toy-training-and-golden-export", ok,
            f"bpd {model_bpd:.3f} vs baseline {baseline:.3f} in "
            f"{elapsed:.0f}s; posterior match {post_ok}; "
            f"tables byte-exact {exact}")
    assert beats, (model_bpd, baseline, elapsed)
    assert post_ok
    assert exact
