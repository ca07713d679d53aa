"""Command-line surface: dataset generation, training, sweeps, reports.

Exit codes: 0 on success, 2 on configuration errors, 3 on data/format
errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .channel import generate_dataset, load_dataset, save_dataset, split_dataset
from .errors import ConfigurationError, DataFormatError
from .evaluation import (
    CLASSICAL_SCHEMES,
    LEARNED_SCHEMES,
    emit_plots,
    format_region_stats,
    make_region_masks,
    pdp_region_stats,
    sweep,
    write_metrics_csv,
)
from .presets import get_preset
from .training import (
    checkpoint_param_counts,
    config_from_file,
    default_config,
    grad_check,
    load_checkpoint,
    train,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siplab", description=__doc__)
    parser.add_argument("--config", help="flat key=value training config file")
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--out", default="runs/siplab", help="output directory")
    parser.add_argument("--preset", choices=("desk", "paper", "tiny"), default="desk")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a channel dataset file")
    p.add_argument("--samples", type=int, help="override the preset sample count")
    p.add_argument("--velocity", type=float, help="override mobility in km/h")
    p.add_argument("--path", help="output file (default <out>/channels.h5)")

    p = sub.add_parser("train", help="train the end-to-end receiver")
    p.add_argument("--dataset", help="dataset file (default <out>/channels.h5)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-ce", type=float, dest="lambda_ce")
    p.add_argument("--no-data-net", action="store_true", help="train the channel-estimation-only variant")

    p = sub.add_parser("eval-sweep", help="run metric sweeps over Es/sigma^2")
    p.add_argument("--dataset", help="dataset file (default <out>/channels.h5)")
    p.add_argument("--ckpt", help="checkpoint for the learned schemes")
    p.add_argument("--schemes", default="TP,SIP-uniform,SIP-ICEDD,perfect-CSI")
    p.add_argument("--snrs", default="10,12,14", help="comma-separated dB values")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--plots", action="store_true", help="also render curve plots")

    p = sub.add_parser("pdp-report", help="region statistics of the learned power split")
    p.add_argument("--ckpt", required=True)

    sub.add_parser("grad-check", help="finite-difference gradient check on the tiny preset")

    p = sub.add_parser("inspect-ckpt", help="print checkpoint metadata and parameter counts")
    p.add_argument("--ckpt", required=True)
    return parser


def _dataset_path(args) -> str:
    explicit = getattr(args, "dataset", None) or getattr(args, "path", None)
    return explicit or os.path.join(args.out, "channels.h5")


def cmd_gen_data(args) -> int:
    from dataclasses import replace

    sim = get_preset(args.preset).sim
    if args.samples:
        sim = replace(sim, n_samples=args.samples)
    if args.velocity is not None:
        sim = replace(sim, velocity_kmh=args.velocity)
    ds = generate_dataset(sim, args.seed)
    path = _dataset_path(args)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_dataset(path, ds)
    print(
        f"wrote {len(ds)} samples (M={ds.H.shape[1]}, K={ds.H.shape[2]}, "
        f"E={ds.H.shape[3]}, {ds.n_distance_classes} distance classes) to {path}"
    )
    return 0


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "out_dir": args.out, "dataset": _dataset_path(args)}
    if args.epochs:
        overrides["epochs"] = args.epochs
    if args.lr:
        overrides["lr"] = args.lr
    if args.lambda_ce is not None:
        overrides["lambda_ce"] = args.lambda_ce
    if args.no_data_net:
        overrides["use_data_net"] = False
    if args.config:
        cfg = config_from_file(args.config, **overrides)
    else:
        cfg = default_config(args.preset, **overrides)
    ds = load_dataset(cfg.dataset)
    result = train(cfg, ds, quiet=False)
    print(f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f})")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def cmd_eval_sweep(args) -> int:
    ds = load_dataset(_dataset_path(args))
    _, _, test_idx = split_dataset(len(ds), args.seed)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    snrs = [float(s) for s in args.snrs.split(",")]
    checkpoints = {}
    if args.ckpt:
        bundle = load_checkpoint(args.ckpt)
        for s in schemes:
            if s in LEARNED_SCHEMES:
                checkpoints[s] = bundle
    records = sweep(schemes, snrs, ds, test_idx, args.trials, seed=args.seed, checkpoints=checkpoints)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    write_metrics_csv(csv_path, records)
    for r in records:
        print(
            f"{r.scheme:>16}  {r.esn0_db:5.1f} dB  NMSE {r.nmse_db:8.2f} dB  "
            f"MSE {r.symbol_mse:.4e}  SER {r.ser:.4f}  BER {r.ber:.4f}"
        )
    print(f"wrote {csv_path}")
    if args.plots:
        for p in emit_plots([csv_path], args.out):
            print(f"wrote {p}")
    return 0


def cmd_pdp_report(args) -> int:
    bundle = load_checkpoint(args.ckpt)
    rho = 1.0 / (1.0 + np.exp(-bundle.power_weights.detach().numpy()))
    masks = make_region_masks(bundle.spec)
    stats = pdp_region_stats(rho, masks, bundle.spec)
    print(format_region_stats(stats))
    emitted = emit_plots([], args.out, rho=rho, spec=bundle.spec)
    for p in emitted:
        print(f"wrote {p}")
    return 0


def cmd_grad_check(args) -> int:
    report = grad_check(seed=args.seed)
    ok = True
    for group, err in report.items():
        status = "ok" if err <= 1e-3 else "FAIL"
        ok &= err <= 1e-3
        print(f"{group}: max relative error {err:.3e} [{status}]")
    return 0 if ok else 1


def cmd_inspect_ckpt(args) -> int:
    bundle = load_checkpoint(args.ckpt)
    counts = checkpoint_param_counts(bundle)
    print(f"format:      {args.ckpt} (sipckpt-v1)")
    print(f"epoch:       {bundle.epoch}")
    print(f"config hash: {bundle.config_hash}")
    print(f"grid:        S={bundle.spec.S} T={bundle.spec.T}")
    for name in ("f_p", "f_c", "f_d", "total"):
        print(f"params {name:>5}: {counts[name]:,}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-sweep": cmd_eval_sweep,
    "pdp-report": cmd_pdp_report,
    "grad-check": cmd_grad_check,
    "inspect-ckpt": cmd_inspect_ckpt,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
