"""Command-line entry points.

Exit codes: 0 success, 2 bad arguments/config, 3 data/format error,
4 numerical failure, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import boundary as bd
from . import config as cf
from . import data as dt
from . import figures as fg
from . import gradcheck as gc
from . import metrics as mt
from . import netpbm
from . import network as nw
from . import tensor as tg
from . import trainer as tr

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rrnet",
                                description="Region refinement saliency toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("boundary-mask", help="write a boundary band for a mask")
    b.add_argument("--gt", required=True)
    b.add_argument("--width", type=int, default=5)
    b.add_argument("--strategy", choices=["expand", "grad"], default="expand")
    b.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--no-brl", action="store_true",
                   help="disable boundary supervision")
    t.add_argument("--no-mask", action="store_true",
                   help="disable the attention gate between layers")

    i = sub.add_parser("infer", help="run a checkpoint on one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--ber", action="store_true")
    e.add_argument("--boundary-width", type=int, default=None)

    c = sub.add_parser("gradcheck", help="finite-difference check of all kernels")
    c.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("multirun", help="train several seeds and aggregate")
    m.add_argument("--runs", type=int, required=True)
    m.add_argument("--config", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="sweep one hyperparameter")
    a.add_argument("--param", choices=["sigma", "n", "m", "width"], required=True)
    a.add_argument("--values", required=True, help="comma-separated values")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    return p


def _load_dataset(data_dir) -> dt.Manifest:
    return dt.Manifest.load(os.path.join(data_dir, "manifest.json"))


def _report_csv(path, report: mt.MetricReport) -> None:
    d = report.to_dict()
    d.pop("f_curve")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(d))
        w.writeheader()
        w.writerow(d)


def _train_once(run_cfg: cf.RunConfig, data_dir, out_dir):
    manifest = _load_dataset(data_dir)
    return tr.train(run_cfg.train, manifest, data_dir, run_cfg.net,
                    run_cfg.loss, run_cfg.boundary, run_cfg.aug, out_dir)


def cmd_gen_data(args) -> int:
    dt.gen_synthetic(args.count, args.size, args.seed, args.out)
    print(f"wrote {args.count} samples to {args.out}")
    return EXIT_OK


def cmd_boundary_mask(args) -> int:
    gt = netpbm.load_pgm(args.gt)
    if args.strategy == "expand":
        if not np.isin(gt, (0.0, 1.0)).all():
            raise ValueError(f"{args.gt}: ground truth is not binary")
        band = bd.boundary_mask(gt.astype(np.uint8),
                                bd.BoundaryConfig(width=args.width))
        netpbm.save_pgm(args.out, band.astype(np.float64))
    else:
        edges = bd.sobel_magnitude(tg.Tensor(gt[None, None])).data[0, 0]
        netpbm.save_pgm(args.out, edges)
    return EXIT_OK


def cmd_train(args) -> int:
    run_cfg = cf.load(args.config)
    if args.seed is not None:
        run_cfg.train.seed = args.seed
    if args.no_brl:
        run_cfg.train.use_brl = False
    if args.no_mask:
        run_cfg.net.rrm.use_mask = False
    _, reports = _train_once(run_cfg, args.data, args.out)
    fg.plot_loss_curve(os.path.join(args.out, "train_log.jsonl"),
                       os.path.join(args.out, "loss_curve.png"))
    for split, rep in reports.items():
        _report_csv(os.path.join(args.out, f"metrics_{split}.csv"), rep)
        print(f"{split}: max_f={rep.max_f_beta:.4f} mae={rep.mae:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    params, _, echo = tr.load_checkpoint(args.ckpt)
    net_cfg = _net_cfg_from_echo(echo)
    image = netpbm.load_ppm(args.image)
    pred = tr.predict_quantized(image.astype(np.float32), params, net_cfg)
    netpbm.save_pgm(args.out, pred)
    return EXIT_OK


def _net_cfg_from_echo(echo: dict) -> nw.NetConfig:
    net = dict(echo.get("net", {}))
    if not net:
        return nw.NetConfig()
    rrm_doc = net.pop("rrm", {})
    net["input_size"] = tuple(net.get("input_size", (64, 64)))
    from .rrm import RRMConfig
    return nw.NetConfig(rrm=RRMConfig(**rrm_doc), **net)


def cmd_eval(args) -> int:
    names = sorted(f for f in os.listdir(args.pred) if f.endswith(".pgm"))
    if not names:
        raise ValueError(f"no .pgm predictions in {args.pred}")
    preds, gts = [], []
    for name in names:
        p = netpbm.load_pgm(os.path.join(args.pred, name))
        gt_path = os.path.join(args.gt, name)
        if not os.path.exists(gt_path):
            raise ValueError(f"no ground truth for {name} in {args.gt}")
        g = netpbm.load_pgm(gt_path)
        if p.shape != g.shape:
            raise ValueError(f"{name}: prediction {p.shape} does not match "
                             f"ground truth {g.shape}")
        preds.append(p)
        gts.append(g)
    report = mt.evaluate(preds, gts, dataset=os.path.basename(args.pred.rstrip("/")),
                         with_ber=args.ber, boundary_width=args.boundary_width)
    report.save(args.report)
    stem = os.path.splitext(args.report)[0]
    _report_csv(stem + ".csv", report)
    fg.plot_f_curve(report, stem + "_fcurve.png")
    print(f"max_f={report.max_f_beta:.4f} mae={report.mae:.4f}"
          + (f" ber={report.ber:.2f}" if report.ber is not None else ""))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gc.run_suite(seed=args.seed)
    failed = False
    for name, err, tol in results:
        ok = err < tol
        failed |= not ok
        print(f"{name:24s} max_rel_err={err:.3e} tol={tol:.0e} "
              f"{'PASS' if ok else 'FAIL'}")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_multirun(args) -> int:
    run_cfg = cf.load(args.config)
    seeds = [run_cfg.train.seed + i for i in range(args.runs)]
    manifest = _load_dataset(args.data)
    reports, summary = tr.multirun(seeds, run_cfg.train, manifest, args.data,
                                   run_cfg.net, run_cfg.loss, run_cfg.boundary,
                                   run_cfg.aug, args.out)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "aggregate.json"), "w") as f:
        json.dump(summary, f, indent=2)
    with open(os.path.join(args.out, "aggregate.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "std"] + [f"seed{s}" for s in seeds])
        for key in ("max_f_beta", "mae"):
            w.writerow([key, summary[key]["mean"], summary[key]["std"]]
                       + summary[key]["values"])
    fg.plot_multirun(summary, os.path.join(args.out, "multirun.png"))
    for key in ("max_f_beta", "mae"):
        print(f"{key}: mean={summary[key]['mean']:.4f} std={summary[key]['std']:.3e}")
    return EXIT_OK


def _apply_ablation(run_cfg: cf.RunConfig, param: str, value: float) -> cf.RunConfig:
    cfg = dataclasses.replace(run_cfg)
    if param == "sigma":
        # sigma = lambda / N, so sweep lambda at fixed N
        cfg.loss = dataclasses.replace(cfg.loss,
                                       lambda_=value * cfg.net.rrm.n_layers)
    elif param == "n":
        rrm_cfg = dataclasses.replace(cfg.net.rrm, n_layers=int(value))
        cfg.net = dataclasses.replace(cfg.net, rrm=rrm_cfg)
        cfg.loss = dataclasses.replace(cfg.loss, n_layers=int(value))
    elif param == "m":
        rrm_cfg = dataclasses.replace(cfg.net.rrm, convs_per_layer=int(value))
        cfg.net = dataclasses.replace(cfg.net, rrm=rrm_cfg)
    elif param == "width":
        cfg.boundary = dataclasses.replace(cfg.boundary, width=int(value))
    return cfg


def cmd_ablate(args) -> int:
    run_cfg = cf.load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v != ""]
    except ValueError as e:
        raise cf.ConfigError(f"bad --values list: {e}") from e
    if not values:
        raise cf.ConfigError("empty --values list")
    os.makedirs(args.out, exist_ok=True)
    reports = []
    for v in values:
        tag = f"{args.param}_{v:g}"
        cfg_v = _apply_ablation(run_cfg, args.param, v)
        _, reps = _train_once(cfg_v, args.data, os.path.join(args.out, tag))
        rep = reps.get("test") or reps["train"]
        rep.dataset = tag
        rep.save(os.path.join(args.out, f"report_{tag}.json"))
        reports.append(rep)
        print(f"{tag}: max_f={rep.max_f_beta:.4f} mae={rep.mae:.4f}")
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([args.param, "max_f_beta", "mae", "boundary_mae"])
        for v, r in zip(values, reports):
            w.writerow([v, r.max_f_beta, r.mae, r.boundary_mae])
    fg.plot_sweep(args.param, values, reports, os.path.join(args.out, "sweep.png"))
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "boundary-mask": cmd_boundary_mask,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "multirun": cmd_multirun,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except cf.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except tg.NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (netpbm.FormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
