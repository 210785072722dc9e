"""Weight-file and golden-vector serialization.

The trainer emits the same SHVW container the coder consumes, written
independently here from the documented layout.  Golden vectors re-use
that container: paired ``in.*`` / ``out.*`` float32 records plus the
exact quantized frequency tables a conforming coder must reproduce.
"""

from __future__ import annotations

import io
import struct

import numpy as np
import torch

from .dists import (Z_BIN_WIDTH, Z_BINS, Z_ORIGIN, logistic_pmf_rows,
                    quantize_rows, round_to_grid)
from .model import MODE_ARIB, MODE_SHVC, ModelConfig, TorchShvc

MAGIC = b"SHVW"
VERSION = 1
_MODE_CODES = {MODE_SHVC: 0, MODE_ARIB: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def save_weights(config: ModelConfig, records: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    buf.write(struct.pack("<BBHHBB", config.L, config.k, config.C,
                          config.split_s, _MODE_CODES[config.mode], config.M))
    buf.write(struct.pack("<B", len(config.widths)))
    for w in config.widths:
        buf.write(struct.pack("<H", w))
    buf.write(struct.pack("<HQ", config.z_channels, config.seed))
    buf.write(struct.pack("<I", len(records)))
    for name, data in records.items():
        enc = name.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        arr = np.asarray(data)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def load_weights(blob: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    buf = io.BytesIO(blob)

    def read(n):
        b = buf.read(n)
        if len(b) != n:
            raise ValueError("truncated weight file")
        return b

    if read(4) != MAGIC:
        raise ValueError("bad magic")
    (version,) = struct.unpack("<B", read(1))
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    L, k, C, split_s, mode_code, M = struct.unpack("<BBHHBB", read(8))
    (n_widths,) = struct.unpack("<B", read(1))
    widths = tuple(struct.unpack("<H", read(2))[0] for _ in range(n_widths))
    z_channels, seed = struct.unpack("<HQ", read(10))
    config = ModelConfig(L=L, k=k, C=C, split_s=split_s,
                         mode=_MODE_NAMES[mode_code], M=M, widths=widths,
                         z_channels=z_channels, seed=seed)
    (count,) = struct.unpack("<I", read(4))
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", read(1))
        shape = tuple(struct.unpack("<I", read(4))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        records[name] = np.frombuffer(read(4 * n), dtype="<f4").reshape(shape)
    return config, records


def export_model(model: TorchShvc) -> bytes:
    return save_weights(model.config, model.named_records())


def make_golden_vectors(model: TorchShvc, seed: int = 0) -> bytes:
    """Reference input/output pairs a conforming coder must reproduce.

    Records: ``in.image`` (a random image on the coder's value grid),
    ``post.means`` / ``post.log_scales`` (the layer-1 posterior computed
    from exported float32 weights), and ``tables.z1`` — the quantized
    latent frequency rows, which must match byte-for-byte when the coder
    regenerates them from the same weight file.
    """
    cfg = model.config
    rng = np.random.default_rng(seed)
    side = cfg.divisor
    img = rng.integers(0, 256, size=(cfg.C, side, side))
    real = img.astype(np.float64) * (2.0 / 255.0) - 1.0

    # run the posterior on the float32 round trip of the weights, since
    # that is what a coder loading the exported file will see
    frozen = TorchShvc(cfg)
    frozen.load_records(model.named_records())
    with torch.no_grad():
        means, log_scales = frozen.posterior_params(
            1, torch.as_tensor(real).unsqueeze(0))
    # tables are derived from the float32 records as stored, so a
    # verifier reading the file can rebuild them bit-for-bit
    means = means[0].numpy().astype(np.float32)
    log_scales = log_scales[0].numpy().astype(np.float32)
    flat_m = round_to_grid(means.astype(np.float64).reshape(-1))
    flat_s = round_to_grid(log_scales.astype(np.float64).reshape(-1))
    pmf = logistic_pmf_rows(flat_m, flat_s, Z_BINS, Z_ORIGIN, Z_BIN_WIDTH)
    freqs = quantize_rows(pmf)

    records = dict(model.named_records())
    records["in.image"] = img.astype(np.float32)
    records["post.means"] = means
    records["post.log_scales"] = log_scales
    records["tables.z1"] = freqs.astype(np.float32)
    return save_weights(cfg, records)


def read_golden_vectors(blob: bytes):
    """Split a golden file into (config, weight records, vector records)."""
    config, records = load_weights(blob)
    vectors = {k: v for k, v in records.items()
               if k.split(".", 1)[0] in ("in", "post", "tables")}
    weights = {k: v for k, v in records.items() if k not in vectors}
    return config, weights, vectors
