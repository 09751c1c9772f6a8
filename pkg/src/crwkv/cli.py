"""Command-line entry point: ``crwkv {train,denoise,bench,spectrum,selftest}``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as B
from . import data as D
from . import selftest as S
from .model import (
    LAYER_TAGS,
    CheckpointError,
    ConfigError,
    CRWKV,
    ModelConfig,
    denoise_array,
    load_checkpoint,
    model_config_from_file_values,
    read_config_file,
)
from .training import AdamW, PatchDataset, TrainConfig, TrainState, train

log = logging.getLogger("crwkv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _limit_threads(n):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _int_list(s):
    return [int(v) for v in s.split(",") if v.strip()]


def train_config_from_values(values, seed):
    kw = {}
    for key, cast in (
        ("iterations", int),
        ("batch_size", int),
        ("patch_size", int),
        ("lr", float),
        ("lr_floor", float),
        ("decay_start", int),
        ("weight_decay", float),
        ("clip_norm", float),
        ("loss", str),
        ("log_every", int),
        ("checkpoint_every", int),
    ):
        if key in values:
            kw[key] = cast(values[key])
    kw["seed"] = seed
    return TrainConfig(**kw)


def noise_from_values(values):
    return D.NoiseSpec(
        kind=values.get("noise_kind", "mixed"),
        sigma=float(values.get("noise_sigma", 10.0)),
        peak=float(values.get("noise_peak", 255.0)),
    )


def build_dataset(values, patch_size, seed):
    if "data_dir" in values:
        root = Path(values["data_dir"])
        if not root.is_dir():
            raise DataError(f"data_dir {root} does not exist")
        try:
            clean, noisy, _ = D.load_paired_dir(root)
        except (FileNotFoundError, OSError) as exc:
            raise DataError(str(exc)) from exc
        return PatchDataset(clean, noisy, patch_size, None if noisy is not None else noise_from_values(values))
    if "synthetic_images" in values:
        imgs = D.synthetic_textures(
            int(values["synthetic_images"]), int(values.get("synthetic_size", 64)), seed=seed
        )
        return PatchDataset(imgs, None, patch_size, noise_from_values(values))
    raise UsageError("config names no dataset: set data_dir (paired clean/ noisy/ directory) or synthetic_images")


def cmd_train(args):
    if not args.config or not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    values = read_config_file(args.config)
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    model_cfg = model_config_from_file_values(values)
    cfg = train_config_from_values(values, seed)
    dataset = build_dataset(values, cfg.patch_size, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = TrainState.load(args.resume, cfg, expected_model_config=model_cfg)
    else:
        model = CRWKV(model_cfg, seed=seed)
        state = TrainState(model, AdamW(weight_decay=cfg.weight_decay), cfg)
    (out / "run.json").write_text(
        json.dumps({"seed": seed, "model": model_cfg.to_dict(), "config_hash": model_cfg.config_hash(),
                    "train": vars(cfg)}, indent=2, sort_keys=True)
    )
    rows = train(state, dataset, until=args.until, log_path=out / "metrics.csv", checkpoint_dir=out)
    state.save(out / "final.crwkv")
    print(f"trained to iteration {state.t}; {len(rows)} log rows; checkpoint {out / 'final.crwkv'}")
    return EXIT_OK


def _png_inputs(path):
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.png"))
    if path.is_file():
        return [path]
    raise DataError(f"input not found: {path}")


def cmd_denoise(args):
    expected = None
    if args.config:
        expected = model_config_from_file_values(read_config_file(args.config))
    model, header, _ = load_checkpoint(args.checkpoint, expected_config=expected)
    inputs = _png_inputs(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in inputs:
        noisy = D.load_png(p)
        y = np.clip(denoise_array(model, noisy), 0, 1)
        D.save_png(y, out / p.name)
        if args.clean:
            cpath = Path(args.clean)
            cpath = cpath / p.name if cpath.is_dir() else cpath
            clean = D.load_png(cpath)
            line = f"{p.name}: psnr {D.psnr(y, clean):.3f} dB (noisy {D.psnr(noisy, clean):.3f})"
            if min(clean.shape[:2]) >= 11:
                line += f", ssim {D.ssim(y, clean):.4f} (noisy {D.ssim(noisy, clean):.4f})"
            print(line)
        else:
            print(f"{p.name}: written")
    return EXIT_OK


def cmd_bench(args):
    sizes = _int_list(args.sizes)
    if sizes != sorted(sizes):
        raise UsageError("--sizes must be ascending")
    if args.mode == "wkv":
        rows = B.bench_wkv(sizes, args.repeats, channels=args.channels, seed=args.seed, memory_budget=args.memory_budget)
        fits = B.slopes(rows)
    else:
        cfg = ModelConfig(base_channels=args.channels, stage_depths=(1, 1, 1, 1))
        if args.config:
            cfg = model_config_from_file_values(read_config_file(args.config))
        rows = B.bench_model(sizes, args.repeats, cfg, seed=args.seed, memory_budget=args.memory_budget)
        # report against pixel count
        fits = {f"{k} time": v for k, v in B.slopes(rows, size_power=2).items()}
        fits.update({f"{k} peak memory": v for k, v in B.slopes(rows, "peak_bytes", size_power=2).items()})
    B.write_rows(rows, args.out)
    for name, slope in fits.items():
        print(f"log-log slope [{name}]: {slope:.3f}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_spectrum(args):
    tags = list(LAYER_TAGS) if not args.layers else [t.strip() for t in args.layers.split(",")]
    unknown = [t for t in tags if t not in LAYER_TAGS]
    if unknown:
        raise DataError(f"unknown layer tag(s) {unknown}; available: {', '.join(LAYER_TAGS)}")
    model, _, _ = load_checkpoint(args.checkpoint)
    img = D.load_png(args.image)
    H, W = img.shape[:2]
    H8, W8 = H - H % 8, W - W % 8
    if H8 == 0 or W8 == 0:
        raise DataError(f"image {H}x{W} is smaller than 8x8")
    x = img[:H8, :W8].transpose(2, 0, 1)[None]
    taps = {}
    model(x, taps=taps)
    out = Path(args.out)
    for tag in tags:
        prof = D.power_spectrum(taps[tag], layer=tag)
        prof.write_csv(out / f"spectrum_{tag}.csv")
        print(f"{tag}: {len(prof.bins)} bins -> {out / f'spectrum_{tag}.csv'}")
    return EXIT_OK


def cmd_selftest(args):
    results = S.run_selftest(args.filter)
    print(S.format_table(results))
    if args.csv:
        S.write_csv(results, args.csv)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="crwkv", description="CRWKV image denoising toolkit")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (1 = deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a key=value config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--until", type=int, help="stop at this iteration (default: config total)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="denoise a PNG or a directory of PNGs")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--out", default="runs/denoised")
    d.add_argument("--clean", help="clean reference PNG or directory for PSNR/SSIM")
    d.add_argument("--config", help="fail unless the checkpoint matches this config")
    d.set_defaults(func=cmd_denoise)

    b = sub.add_parser("bench", help="runtime and memory scaling benchmark")
    b.add_argument("--mode", choices=("wkv", "model"), default="wkv")
    b.add_argument("--sizes", default="1024,2048,4096,8192,16384")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--channels", type=int, default=8)
    b.add_argument("--config", help="model config for --mode model")
    b.add_argument("--memory-budget", type=int, default=B.DEFAULT_BUDGET)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="runs/bench.csv")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("spectrum", help="per-layer radially averaged power spectra")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--layers", help=f"comma-separated subset of: {', '.join(LAYER_TAGS)}")
    s.add_argument("--out", default="runs/spectrum")
    s.set_defaults(func=cmd_spectrum)

    st = sub.add_parser("selftest", help="fast invariant checks")
    st.add_argument("--filter", help="only checks whose name starts with this prefix (wkv, grad, fft, cts, metrics)")
    st.add_argument("--csv", help="also write results to this CSV")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    with _limit_threads(args.threads):
        try:
            return args.func(args)
        except UsageError as exc:
            parser.print_usage(sys.stderr)
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (DataError, ConfigError, CheckpointError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
