"""Batch command-line driver.

Subcommands: gen-data, mask, train, recon, eval.  Every command is
deterministic given its arguments and seeds (byte-identical outputs), and
exit codes follow: 0 success, 2 configuration/contract error, 3 I/O or
format error, 4 numeric failure.

Configuration files are plain key=value text mirroring the NetworkConfig and
TrainConfig field names (blank lines and '#' comments ignored).  The env var
EN2_THREADS caps eval worker threads (default 1, which keeps evaluation
strictly sequential).
"""

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .data_io import export_pgm, read_en2t, write_en2t
from .errors import (ConfigurationError, ContractViolation,
                     DegenerateInputError, FormatError, NumericError)
from .network import (NetworkConfig, TrainConfig, load_checkpoint, reconstruct,
                      save_checkpoint, train)
from .kspace import make_mask
from .phantoms import make_dataset

_CSV_HEADER = "id,af,psnr_db,ssim,snr,dice_defect,vdp_ref_pct,vdp_rec_pct"


def _parse_size(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 96x84, got {text!r}")


def _read_kv(path):
    entries = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"{path}: malformed line {line!r}")
            entries[key.strip()] = value.strip()
    return entries


def _network_config(kv):
    def grab(name, conv, default=None):
        if name in kv:
            return conv(kv[name])
        if default is None:
            raise ConfigurationError(f"config is missing required key {name!r}")
        return default

    kc = kv.get("kspace_channels", "auto")
    return NetworkConfig(
        height=grab("height", int),
        width=grab("width", int),
        e_blocks=grab("e_blocks", int, 1),
        en2_layers=grab("en2_layers", int, 5),
        f_blocks=grab("f_blocks", int, 15),
        fmus_per_block=grab("fmus_per_block", int, 5),
        growth_channels=grab("growth_channels", int, 8),
        en2_mode=kv.get("en2_mode", "freq"),
        kspace_kernel=kv.get("kspace_kernel", "en2"),
        kspace_channels=None if kc in ("auto", "") else int(kc),
        l1_weight=grab("l1_weight", float, 1.0),
        precision=grab("precision", int, 64),
    ).validate()


def _train_config(kv, epochs=None, seed=None):
    return TrainConfig(
        epochs=epochs if epochs is not None else int(kv.get("epochs", "1")),
        batch_size=int(kv.get("batch_size", "10")),
        lr_start=float(kv.get("lr_start", "0.001")),
        lr_end=float(kv.get("lr_end", "0.00001")),
        seed=seed if seed is not None else int(kv.get("seed", "0")),
        noise_sigma=float(kv.get("noise_sigma", "0")),
    ).validate()


def _threads():
    raw = os.environ.get("EN2_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"EN2_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigurationError(f"EN2_THREADS must be >= 1, got {n}")
    return n


# ----------------------------------------------------------------- commands

def cmd_gen_data(args):
    h, w = args.size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = make_dataset(args.n, args.seed, h, w, args.af,
                           center_fraction=args.center_frac,
                           noise_sigma=args.noise_sigma)
    lines = [
        f"n={args.n}", f"height={h}", f"width={w}", f"af={repr(float(args.af))}",
        f"center_fraction={repr(float(args.center_frac))}",
        f"noise_sigma={repr(float(args.noise_sigma))}", f"master_seed={args.seed}",
    ]
    for i, s in enumerate(samples):
        tag = f"{i:04d}"
        write_en2t(s.phantom.image, out / f"x_{tag}.en2t")
        write_en2t(s.y_u, out / f"yu_{tag}.en2t")
        write_en2t(s.mask.u8_grid(), out / f"mask_{tag}.en2t")
        write_en2t(s.phantom.lung_mask.astype(np.uint8), out / f"lung_{tag}.en2t")
        write_en2t(s.phantom.thoracic_mask.astype(np.uint8), out / f"thorax_{tag}.en2t")
        write_en2t(s.phantom.defect_mask.astype(np.uint8), out / f"defect_{tag}.en2t")
        lines.append(f"sample_{tag}_phantom_seed={s.phantom.seed}")
        lines.append(f"sample_{tag}_mask_seed={s.mask.seed}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_mask(args):
    h, w = args.size
    mask = make_mask(h, w, args.af, args.center_frac, args.seed)
    write_en2t(mask.u8_grid(), args.out)
    print(f"wrote mask {h}x{w} af={args.af} sampled_columns={mask.num_sampled()} to {args.out}")
    return 0


def _load_dataset_dir(path):
    root = Path(path)
    manifest = _read_kv(root / "manifest.txt")
    n = int(manifest["n"])
    samples = []
    for i in range(n):
        tag = f"{i:04d}"
        x = read_en2t(root / f"x_{tag}.en2t")
        y_u = read_en2t(root / f"yu_{tag}.en2t")
        mask = read_en2t(root / f"mask_{tag}.en2t")
        samples.append((x, y_u, mask))
    return samples, manifest


def cmd_train(args):
    kv = _read_kv(args.config)
    cfg = _network_config(kv)
    tcfg = _train_config(kv, epochs=args.epochs, seed=args.seed)
    samples, _ = _load_dataset_dir(args.data)
    val = None
    if args.val_data:
        val, _ = _load_dataset_dir(args.val_data)
    try:
        params, history = train(samples, cfg, tcfg, val_dataset=val)
    except NumericError as err:
        last_good = getattr(err, "last_good", None)
        if last_good is not None:
            from .network import build_network
            params = build_network(cfg, tcfg.seed)
            params.set_values(last_good)
            save_checkpoint(args.out, params, getattr(err, "history", None))
            print(f"numeric failure: {err}; last-good checkpoint saved to {args.out}",
                  file=sys.stderr)
        raise
    save_checkpoint(args.out, params, history,
                    step_count=tcfg.epochs * math.ceil(len(samples) / tcfg.batch_size))
    _write_loss_csv(str(args.out) + ".loss.csv", history)
    final_train = history.train_loss[-1] if history.train_loss else math.nan
    final_val = history.val_loss[-1] if history.val_loss else math.nan
    print(f"parameters={params.num_parameters()} final_train_loss={final_train!r} "
          f"final_val_loss={final_val!r}")
    return 0


def _write_loss_csv(path, history):
    rows = ["epoch,lr,train_loss,val_loss"]
    for i, tl in enumerate(history.train_loss):
        vl = history.val_loss[i] if i < len(history.val_loss) else math.nan
        rows.append(f"{i},{history.lr[i]!r},{tl!r},{vl!r}")
    Path(path).write_text("\n".join(rows) + "\n")


def cmd_recon(args):
    params, _ = load_checkpoint(args.ckpt)
    y_u = read_en2t(args.input)
    if y_u.ndim == 2:
        y_u = y_u[None]
    mask = read_en2t(args.mask)
    img = reconstruct(params, y_u, mask)
    write_en2t(img, args.out)
    if args.pgm:
        export_pgm(np.abs(img), None, args.pgm)
    print(f"wrote reconstruction to {args.out}")
    return 0


def _eval_one(i, ref_dir, rec_dir, masks_dir, af_default, kmeans_k):
    tag = f"{i:04d}"
    x = read_en2t(ref_dir / f"x_{tag}.en2t")
    rec = read_en2t(rec_dir / f"rec_{tag}.en2t")
    lung = read_en2t(masks_dir / f"lung_{tag}.en2t").astype(bool)
    thorax = read_en2t(masks_dir / f"thorax_{tag}.en2t").astype(bool)
    mask_path = masks_dir / f"mask_{tag}.en2t"
    if af_default is not None:
        af = af_default
    elif mask_path.exists():
        grid = read_en2t(mask_path)
        af = grid.shape[-1] / max(int(grid[0].sum()), 1)
    else:
        af = math.nan
    ref_mag = np.abs(x[0] if x.ndim == 3 else x)
    rec_mag = np.abs(rec[0] if rec.ndim == 3 else rec)
    try:
        snr = metrics.snr_rician(rec_mag, lung, ~thorax)
    except DegenerateInputError:
        snr = math.inf
    defect_ref = metrics.kmeans_defect(ref_mag, thorax, kmeans_k)
    defect_rec = metrics.kmeans_defect(rec_mag, thorax, kmeans_k)
    return {
        "id": tag,
        "af": af,
        "psnr_db": metrics.psnr(ref_mag, rec_mag, lung),
        "ssim": metrics.ssim(ref_mag, rec_mag, lung),
        "snr": snr,
        "dice_defect": metrics.dice(defect_ref, defect_rec),
        "vdp_ref_pct": metrics.vdp(defect_ref, thorax),
        "vdp_rec_pct": metrics.vdp(defect_rec, thorax),
    }


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def cmd_eval(args):
    ref_dir = Path(args.ref)
    rec_dir = Path(args.rec)
    masks_dir = Path(args.masks) if args.masks else ref_dir
    manifest_path = ref_dir / "manifest.txt"
    af_default = None
    if manifest_path.exists():
        manifest = _read_kv(manifest_path)
        n = int(manifest["n"])
        af_default = float(manifest.get("af", "nan"))
    else:
        n = len(sorted(ref_dir.glob("x_*.en2t")))
    if n == 0:
        raise ConfigurationError(f"no samples found under {ref_dir}")

    workers = _threads()
    indices = list(range(n))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda i: _eval_one(i, ref_dir, rec_dir, masks_dir, af_default, args.kmeans_k),
                indices))
    else:
        rows = [_eval_one(i, ref_dir, rec_dir, masks_dir, af_default, args.kmeans_k)
                for i in indices]

    keys = ("psnr_db", "ssim", "snr", "dice_defect", "vdp_ref_pct", "vdp_rec_pct")
    means = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    r_vdp = metrics.pearson_r([r["vdp_ref_pct"] for r in rows],
                              [r["vdp_rec_pct"] for r in rows])

    lines = [_CSV_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) for k in ("id", "af") + keys))
    # Summary row: metric columns hold means; the vdp_ref_pct field holds the
    # Pearson r over the per-sample VDP pairs and vdp_rec_pct stays empty.
    lines.append(",".join([
        "summary", _fmt(rows[0]["af"]),
        _fmt(means["psnr_db"]), _fmt(means["ssim"]), _fmt(means["snr"]),
        _fmt(means["dice_defect"]), _fmt(r_vdp), "",
    ]))
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"evaluated {n} samples; pearson_r_vdp={_fmt(r_vdp)}")
    return 0


# --------------------------------------------------------------- entrypoint

def build_parser():
    parser = argparse.ArgumentParser(
        prog="en2mri",
        description="Dual-domain complex CNN pipeline for undersampled MRI at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=_parse_size, required=True, metavar="HxW")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--af", type=float, default=4.0)
    p.add_argument("--center-frac", type=float, default=0.08)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("mask", help="write a variable-density Cartesian mask")
    p.add_argument("--size", type=_parse_size, required=True, metavar="HxW")
    p.add_argument("--af", type=float, required=True)
    p.add_argument("--center-frac", type=float, default=0.08)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train a network on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--val-data", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct one undersampled sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", default=None)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="score reconstructions against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--rec", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--kmeans-k", type=int, default=4)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation, DegenerateInputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
