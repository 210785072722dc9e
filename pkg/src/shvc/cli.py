"""Command-line front end: compress, decompress, stats, selftest."""

from __future__ import annotations

import argparse
import concurrent.futures
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import codec
from .ans import AuxSource, deserialize_stream, serialize_stream
from .container import (Container, ContainerError, ImageFormatError,
                        fnv1a64, pad_replicate, read_image, write_image)
from .model import ModelConfig, ShvcModel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3    # unreadable input image / container parse error
EXIT_MAGIC = 4
EXIT_VERSION = 5
EXIT_HASH = 6
EXIT_CRC = 7
EXIT_SELFTEST = 8

_IMAGE_SUFFIXES = (".ppm", ".raw")


def _load_model(path) -> tuple[ShvcModel, bytes]:
    blob = Path(path).read_bytes()
    return ShvcModel.from_bytes(blob), blob


def _pad_for(model, img):
    return pad_replicate(img, model.config.divisor)


def _stats_line(name, report, pixels):
    bpd = report.net_bits / pixels
    return (f"{name},{bpd:.4f},{report.net_bits},"
            f"{report.aux_bits_consumed},{report.aux_bits_returned}")


def _compress_single(img, model, model_blob, mode, seed):
    cfg = model.config
    padded = _pad_for(model, img)
    if mode == "shvc":
        enc = codec.encode_image_shvc(padded, model, AuxSource.prng(seed))
    else:
        enc = codec.encode_image_arib(padded, model, pad_seed=seed)
    payload = serialize_stream(enc.words)
    cont = Container(mode=mode, k=cfg.k, L=cfg.L, split_s=cfg.split_s,
                     C=cfg.C, orig_h=img.shape[1], orig_w=img.shape[2],
                     padded_h=padded.shape[1], padded_w=padded.shape[2],
                     model_hash=fnv1a64(model_blob), aux_seed=seed,
                     payload=payload)
    return cont, enc


def cmd_compress(args) -> int:
    model, blob = _load_model(args.model)
    if args.mode == "chained":
        return _compress_chained(args, model, blob)
    try:
        img = read_image(args.input)
    except (OSError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    cont, enc = _compress_single(img, model, blob, args.mode, args.seed)
    Path(args.output).write_bytes(cont.to_bytes())
    pixels = img.shape[0] * img.shape[1] * img.shape[2]
    report = codec.measure_overhead(
        _pad_for(model, img), model, args.mode, seed=args.seed)
    print(_stats_line(Path(args.input).name, report, pixels))
    return EXIT_OK


def _chained_meta(images):
    out = b"".join(
        struct.pack("<H", len(name.encode())) + name.encode()
        + struct.pack("<IIII", *dims)
        for name, dims in images)
    return struct.pack("<I", len(images)) + out


def _parse_chained_meta(payload):
    (count,) = struct.unpack_from("<I", payload, 0)
    pos = 4
    images = []
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos:pos + nl].decode()
        pos += nl
        dims = struct.unpack_from("<IIII", payload, pos)
        pos += 16
        images.append((name, dims))
    return images, payload[pos:]


def _compress_chained(args, model, blob) -> int:
    cfg = model.config
    paths = sorted(p for p in Path(args.input).iterdir()
                   if p.suffix in _IMAGE_SUFFIXES)
    imgs, meta = [], []
    for p in paths:
        img = read_image(p)
        padded = _pad_for(model, img)
        imgs.append(padded)
        meta.append((p.name, (img.shape[1], img.shape[2],
                              padded.shape[1], padded.shape[2])))
    words, per_image = codec.encode_dataset_chained(imgs, model,
                                                    seed=args.seed)
    payload = _chained_meta(meta) + serialize_stream(words)
    cont = Container(mode="chained", k=cfg.k, L=cfg.L, split_s=cfg.split_s,
                     C=cfg.C, orig_h=0, orig_w=0, padded_h=0, padded_w=0,
                     model_hash=fnv1a64(blob), aux_seed=args.seed,
                     payload=payload)
    Path(args.output).write_bytes(cont.to_bytes())
    for (name, dims), bits in zip(meta, per_image):
        print(f"{name},{bits / (cfg.C * dims[0] * dims[1]):.4f},"
              f"{bits:.1f},-,-")
    return EXIT_OK


def cmd_decompress(args) -> int:
    model, blob = _load_model(args.model)
    try:
        cont = Container.from_bytes(Path(args.input).read_bytes())
        cont.check_model(blob)
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        from .container import CrcError, HashMismatchError, MagicError, VersionError
        if isinstance(exc, MagicError):
            return EXIT_MAGIC
        if isinstance(exc, VersionError):
            return EXIT_VERSION
        if isinstance(exc, HashMismatchError):
            return EXIT_HASH
        if isinstance(exc, CrcError):
            return EXIT_CRC
        return EXIT_FORMAT
    if cont.mode == "chained":
        images, stream = _parse_chained_meta(cont.payload)
        words = deserialize_stream(stream)
        shapes = [(ph, pw) for _, (_, _, ph, pw) in images]
        decoded, _ = codec.decode_dataset_chained(words, model, shapes)
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        for (name, (oh, ow, _, _)), img in zip(images, decoded):
            write_image(outdir / name, img[:, :oh, :ow].astype(np.uint8))
        return EXIT_OK
    words = deserialize_stream(cont.payload)
    if cont.mode == "shvc":
        img, _ = codec.decode_image_shvc(words, model,
                                         cont.padded_h, cont.padded_w)
    else:
        img, _ = codec.decode_image_arib(words, model,
                                         cont.padded_h, cont.padded_w)
    img = img[:, :cont.orig_h, :cont.orig_w].astype(np.uint8)
    write_image(args.output, img)
    return EXIT_OK


def _stats_one(path_str, model_path, mode, seed):
    model, _ = _load_model(model_path)
    img = read_image(path_str)
    padded = _pad_for(model, img)
    report = codec.measure_overhead(padded, model, mode, seed=seed)
    pixels = int(np.prod(img.shape))
    return _stats_line(Path(path_str).name, report, pixels), \
        report.net_bits, pixels


def cmd_stats(args) -> int:
    paths = sorted(p for p in Path(args.input).iterdir()
                   if p.suffix in _IMAGE_SUFFIXES)
    skipped = 0
    results = {}
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
            futs = {pool.submit(_stats_one, str(p), args.model, args.mode,
                                args.seed): p for p in paths}
            for fut, p in futs.items():
                try:
                    results[p] = fut.result()
                except (OSError, ImageFormatError):
                    skipped += 1
    else:
        for p in paths:
            try:
                results[p] = _stats_one(str(p), args.model, args.mode,
                                        args.seed)
            except (OSError, ImageFormatError):
                skipped += 1
    print("file,bpd,net_bits,aux_in,aux_out")
    total_bits = 0.0
    total_pixels = 0
    for p in paths:
        if p not in results:
            continue
        line, bits, pixels = results[p]
        total_bits += bits
        total_pixels += pixels
        print(line)
    if total_pixels:
        print(f"aggregate,{total_bits / total_pixels:.4f},"
              f"{total_bits:.0f},-,-")
    if skipped:
        print(f"warning: skipped {skipped} unreadable file(s)",
              file=sys.stderr)
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Seeded invariant checks across every coding-path module."""
    t0 = time.time()
    rng = np.random.default_rng(7)
    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"selftest: {name}: ok")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures.append(name)
            print(f"selftest: {name}: FAIL ({exc})")

    from . import dists, tensors

    def reorder_ops():
        for _ in range(50):
            t = rng.integers(0, 256, size=(3, 8, 8))
            g = tensors.subpixel_unshuffle_g(t, 2)
            assert np.array_equal(tensors.subpixel_shuffle_g_inv(g, 2, 3), t)
            f = tensors.pixel_unshuffle_f(t, 2)
            perm = tensors.f_g_permutation(3, 2)
            assert np.array_equal(g, f[perm])

    def cdf_tables():
        for _ in range(200):
            pmf = rng.dirichlet(np.ones(64))
            table = dists.quantize_to_cdf(pmf, 16)
            assert int(table.freqs.sum()) == 1 << 16
            assert int(table.freqs.min()) >= 1

    def roundtrips():
        if args.model:
            model, _ = _load_model(args.model)
            models = {model.config.mode: model}
        else:
            models = {
                "shvc": ShvcModel.seeded(ModelConfig(L=1, mode="shvc")),
                "arib": ShvcModel.seeded(ModelConfig(L=1, mode="arib")),
            }
        for mode, model in models.items():
            d = model.config.divisor
            x = rng.integers(0, 256, size=(model.config.C, d, d))
            report = codec.measure_overhead(x, model, mode, seed=3)
            assert report.net_bits > 0

    check("reorder-operators", reorder_ops)
    check("cdf-tables", cdf_tables)
    check("coder-round-trips", roundtrips)
    elapsed = time.time() - t0
    print(f"selftest: {'FAIL' if failures else 'ok'} in {elapsed:.1f}s")
    return EXIT_SELFTEST if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shvc", description="Hierarchical latent lossless image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("compress", help="compress one image (or a "
                        "directory in chained mode)")
    pc.add_argument("input")
    pc.add_argument("--model", required=True)
    pc.add_argument("--mode", choices=("shvc", "arib", "chained"),
                    default="shvc")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--output", required=True)
    pc.set_defaults(func=cmd_compress)

    pd = sub.add_parser("decompress", help="decompress a container")
    pd.add_argument("input")
    pd.add_argument("--model", required=True)
    pd.add_argument("--output", required=True)
    pd.set_defaults(func=cmd_decompress)

    ps = sub.add_parser("stats", help="per-image codelength report")
    ps.add_argument("input")
    ps.add_argument("--model", required=True)
    ps.add_argument("--mode", choices=("shvc", "arib"), default="shvc")
    ps.add_argument("--jobs", type=int, default=1)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=cmd_stats)

    pt = sub.add_parser("selftest", help="run seeded invariant checks")
    pt.add_argument("--model", default=None)
    pt.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
