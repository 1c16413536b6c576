"""Command-line interface: ``dkrg {degrade,sr,train,eval,gradcheck}``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import metrics
from .classical_kriging import local_krige_sr
from .deep_kriging import NetworkConfig, build_network, super_resolve
from .image_core import YCbCrImage, bicubic_resize, degrade, modcrop, rgb_to_ycbcr, to_luma, ycbcr_to_rgb
from .image_io import ImageFormatError, read_image, write_image
from .training import (
    CheckpointFormatError,
    TrainConfig,
    TrainingDivergedError,
    blas_threads,
    build_training_set,
    initial_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .uncertainty import (
    coverage_stat,
    error_variance_correlation,
    fit_image_model,
    render_heatmap,
    variance_map,
    write_stats_csv,
)

log = logging.getLogger("deepkriging")


class UsageError(Exception):
    """Bad user input; maps to exit code 2."""


# -- key = value configuration ---------------------------------------------


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _scales(v: str) -> tuple:
    return tuple(int(x) for x in v.replace(",", " ").split())


SCHEMA = {
    "data": str,
    "out": str,
    "resume": str,
    "batch_size": int,
    "learning_rate": float,
    "dropout": float,
    "clip_norm": float,
    "iterations": int,
    "seed": int,
    "scales": _scales,
    "patch": int,
    "stride": int,
    "checkpoint_every": int,
    "K": int,
    "feature_depth": int,
    "units": int,
    "strict": _bool,
    "threads": int,
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise UsageError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return out


def merge_config(path, flags: dict) -> dict:
    cfg = {}
    if path:
        try:
            with open(path) as fh:
                cfg = parse_config_text(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def _split_config(cfg: dict):
    train_keys = {f.name for f in fields(TrainConfig)}
    net_keys = {f.name for f in fields(NetworkConfig)}
    tcfg = {k: v for k, v in cfg.items() if k in train_keys}
    ncfg = {k: v for k, v in cfg.items() if k in net_keys}
    if "scales" in tcfg:
        ncfg["scales"] = tcfg["scales"]
    try:
        return TrainConfig(**tcfg), NetworkConfig(**ncfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _threads(cfg: dict | None = None):
    if cfg and cfg.get("threads") is not None:
        return cfg["threads"]
    env = os.environ.get("DKRG_THREADS")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"DKRG_THREADS must be an integer, got {env!r}") from exc


# -- helpers ----------------------------------------------------------------


def _read(path):
    try:
        return read_image(path)
    except (OSError, ImageFormatError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc
    except Exception as exc:  # Pillow raises assorted errors on bad files
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def _load_ckpt(path):
    if not path:
        raise UsageError("--checkpoint is required for method 'deep'")
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointFormatError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc


def _luma_method(method: str, scale: int, ckpt=None):
    """Callable (lr, lr_up, scale) -> sr for a method name."""
    if method == "bicubic":
        return metrics.bicubic_method
    if method == "krige":
        return lambda lr, lr_up, s: local_krige_sr(lr, s)
    if method == "deep":
        return lambda lr, lr_up, s: super_resolve(lr_up, ckpt.params).sr
    if method == "identity":
        return None
    raise UsageError(f"unknown method {method!r}")


# -- commands ---------------------------------------------------------------


def cmd_degrade(args) -> int:
    img = _read(args.input)
    s = args.scale
    hr = modcrop(img, s)
    if hr.ndim == 3:
        out = np.stack([degrade(hr[..., c], s) for c in range(3)], axis=-1)
    else:
        out = degrade(hr, s)
    write_image(args.output, out)
    hr_out = args.hr_out or _suffixed(args.output, "_hr")
    write_image(hr_out, hr)
    print(f"wrote {args.output} and {hr_out}")
    return 0


def _suffixed(path, suffix):
    stem, ext = os.path.splitext(path)
    return f"{stem}{suffix}{ext}"


def cmd_sr(args) -> int:
    img = _read(args.input)
    s = args.scale
    ckpt = _load_ckpt(args.checkpoint) if args.method == "deep" else None
    if args.fit_csv and args.method != "krige":
        raise UsageError("--fit-csv requires --method krige")
    if args.variance_out and args.method != "deep":
        raise UsageError("--variance-out requires --method deep")
    color = img.ndim == 3
    lr = rgb_to_ycbcr(img).y if color else img
    lr_up = bicubic_resize(lr, s)
    weights = None
    if args.method == "bicubic":
        sr = lr_up
    elif args.method == "krige":
        sr = local_krige_sr(lr, s, workers=max(1, _threads() or 1), fit_csv=args.fit_csv)
    else:
        res = super_resolve(lr_up, ckpt.params)
        sr, weights = res.sr, res.weights
    if color:
        ycc = rgb_to_ycbcr(img)
        out = ycbcr_to_rgb(YCbCrImage(sr, bicubic_resize(ycc.cb, s), bicubic_resize(ycc.cr, s)))
    else:
        out = sr
    write_image(args.output, out)
    print(f"wrote {args.output}")
    if args.variance_out:
        model = fit_image_model(lr_up)
        render_heatmap(variance_map(weights, model), args.variance_out)
        print(f"wrote {args.variance_out} (+ .txt sidecar); C0={model.c0:.4g} sigma={model.sigma:.4g}")
    return 0


def cmd_train(args) -> int:
    flags = {
        "data": args.data, "out": args.out, "iterations": args.iterations, "seed": args.seed,
        "strict": True if args.strict else None, "resume": args.resume,
        "checkpoint_every": args.checkpoint_every,
    }
    cfg = merge_config(args.config, flags)
    if not cfg.get("data") or not cfg.get("out"):
        raise UsageError("both data and out must be given (flags or config)")
    tcfg, ncfg = _split_config(cfg)
    strict = bool(cfg.get("strict", False))
    threads = 0 if strict else _threads(cfg)
    if not os.path.isdir(cfg["data"]):
        raise UsageError(f"data directory {cfg['data']} does not exist")
    os.makedirs(cfg["out"], exist_ok=True)

    with blas_threads(threads):
        try:
            dataset = build_training_set(cfg["data"], tcfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if cfg.get("resume"):
            start = _load_ckpt(cfg["resume"])
        else:
            start = initial_checkpoint(build_network(ncfg, seed=tcfg.seed), tcfg)
        log_path = os.path.join(cfg["out"], "train_log.csv")
        mode = "a" if cfg.get("resume") else "w"
        last = None
        with open(log_path, mode, newline="") as log_file:
            try:
                for ckpt in train(tcfg, dataset, start, log_file=log_file, strict=strict):
                    path = os.path.join(cfg["out"], f"checkpoint_{ckpt.iteration:06d}.dkrg")
                    save_checkpoint(ckpt, path)
                    last = path
            except TrainingDivergedError as exc:
                path = os.path.join(cfg["out"], "last_good.dkrg")
                save_checkpoint(exc.last_good, path)
                print(f"error: {exc}; last good checkpoint at {path}", file=sys.stderr)
                return 1
    final_loss = _last_loss(log_path)
    print(f"patches: {len(dataset)}")
    print(f"final loss: {final_loss}")
    print(f"checkpoint: {last}")
    return 0


def _last_loss(log_path):
    with open(log_path) as fh:
        rows = fh.read().strip().splitlines()
    return rows[-1].split(",")[1] if len(rows) > 1 else "n/a"


def _identity_eval(hr_dir, scale, csv_path):
    records = []
    for path in metrics.list_images(hr_dir):
        hr = modcrop(to_luma(read_image(path)), scale)
        records.append(metrics.EvalRecord(os.path.basename(path), "identity", scale,
                                          metrics.psnr(hr, hr, scale), metrics.ssim(hr, hr, scale)))
    if not records:
        raise FileNotFoundError(f"no images in {hr_dir}")
    res = metrics.EvalResult(records, float(np.mean([r.psnr for r in records])),
                             float(np.mean([r.ssim for r in records])))
    if csv_path:
        metrics.write_eval_csv(csv_path, res)
    return res


def cmd_eval(args) -> int:
    if not os.path.isdir(args.hr_dir):
        raise UsageError(f"{args.hr_dir} is not a directory")
    ckpt = _load_ckpt(args.checkpoint) if args.method == "deep" else None
    try:
        if args.method == "identity":
            res = _identity_eval(args.hr_dir, args.scale, args.out_csv)
        else:
            method = _luma_method(args.method, args.scale, ckpt)
            res = metrics.evaluate_set(args.hr_dir, method, args.scale, name=args.method, csv_path=args.out_csv)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    for r in res.records:
        print(f"{r.image:<24} {r.psnr:8.4f} dB  SSIM {r.ssim:.4f}")
    print(f"{'mean':<24} {res.mean_psnr:8.4f} dB  SSIM {res.mean_ssim:.4f}")
    if args.stats_csv:
        if args.method != "deep":
            raise UsageError("--stats-csv requires --method deep")
        write_stats_csv(args.stats_csv, uncertainty_rows(args.hr_dir, args.scale, ckpt.params))
        print(f"wrote {args.stats_csv}")
    return 0


def uncertainty_rows(hr_dir, scale, params):
    """Per-image (name, psnr, ssim, coverage, corr) for the deep method."""
    from .image_core import downsample

    rows = []
    for path in metrics.list_images(hr_dir):
        hr = modcrop(to_luma(read_image(path)), scale)
        lr_up = bicubic_resize(downsample(hr, scale), scale)
        res = super_resolve(lr_up, params)
        v = variance_map(res.weights, fit_image_model(lr_up))
        sh = slice(scale, -scale)
        sr_c, hr_c, v_c = res.sr[sh, sh], hr[sh, sh], v[sh, sh]
        rows.append((
            os.path.basename(path),
            metrics.psnr(res.sr, hr, scale),
            metrics.ssim(res.sr, hr, scale),
            coverage_stat(sr_c, hr_c, v_c),
            error_variance_correlation(sr_c, hr_c, v_c),
        ))
    return rows


def cmd_gradcheck(args) -> int:
    from .gradcheck import report

    ok, lines = report(args.seed)
    for line in lines:
        print(line)
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dkrg", description="Super-resolution by supervised kriging.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="bicubic down/up-sample an HR image")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    d.add_argument("--hr-out", help="where to write the modcropped HR reference")
    d.set_defaults(func=cmd_degrade)

    s = sub.add_parser("sr", help="super-resolve a low-resolution image")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--method", choices=("bicubic", "krige", "deep"), default="deep")
    s.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--variance-out", help="PGM heatmap of the estimator variance (deep only)")
    s.add_argument("--fit-csv", help="per-window covariance fits (krige only)")
    s.set_defaults(func=cmd_sr)

    t = sub.add_parser("train", help="train the kriging-weight network")
    t.add_argument("--data")
    t.add_argument("--config", help="key = value configuration file")
    t.add_argument("--out")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--strict", action="store_true", help="single-threaded, byte-reproducible run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM over a directory of HR images")
    e.add_argument("--hr-dir", required=True)
    e.add_argument("--method", choices=("bicubic", "krige", "deep", "identity"), required=True)
    e.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--out-csv")
    e.add_argument("--stats-csv", help="per-image uncertainty statistics (deep only)")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads()
        with blas_threads(threads):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
