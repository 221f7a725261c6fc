"""SGD-with-momentum training loop, poly LR decay, binary checkpoints and
the multi-seed statistics runner.

A run is single-threaded and fully pinned by (seed, config, data): batch
order, augmentation and initialization all derive from the seed, so two
runs produce bit-identical checkpoints and logs.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tg
from . import data as dt
from . import metrics as mt
from . import network as nw
from .boundary import BoundaryConfig, boundary_mask
from .losses import LossConfig, total_loss
from .tensor import NumericsError

CKPT_MAGIC = b"RRNCKPT1"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch: int = 8
    use_brl: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.base_lr, self.power, self.momentum, self.weight_decay) < 0:
            raise ValueError("rates must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


@dataclass
class OptState:
    velocity: dict  # name -> ndarray, shapes mirror the parameters
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptState":
        return cls(velocity={k: np.zeros_like(v.data) for k, v in params.items()})


def poly_lr(base: float, iteration: int, max_iter: int, power: float) -> float:
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


def sgd_step(params: dict, grads: dict, state: OptState, lr: float,
             momentum: float, weight_decay: float) -> None:
    """v <- m*v + g + wd*p;  p <- p - lr*v. Decay applies to all tensors."""
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise tg.ShapeError(f"gradient shape {g.shape} != param shape "
                                f"{p.data.shape} for {name}")
        v = state.velocity[name]
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= (lr * v).astype(p.data.dtype, copy=False)
    state.step += 1


# ---------------------------------------------------------------------------
# checkpoints

def _write_table(f, tensors: dict) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name]
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode("utf-8")
        f.write(struct.pack("<I", len(nb)) + nb)
        f.write(struct.pack("<BB", code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return buf


def _read_table(f) -> dict:
    (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
        name = _read_exact(f, nlen, "name").decode("utf-8")
        if name in out:
            raise ValueError(f"duplicate tensor name {name!r} in checkpoint")
        code, rank = struct.unpack("<BB", _read_exact(f, 2, "dtype/rank"))
        if code not in _CODE_DTYPES:
            raise ValueError(f"unknown dtype code {code} for {name!r}")
        dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims)) * dtype.itemsize
        raw = _read_exact(f, nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(
            dtype).reshape(dims)
    return out


def save_checkpoint(path, params: dict, opt_state: OptState = None,
                    config_echo: dict = None) -> None:
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        cfg = json.dumps(config_echo or {}, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(cfg)) + cfg)
        _write_table(f, {k: v.data for k, v in params.items()})
        if opt_state is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<Q", opt_state.step))
            _write_table(f, opt_state.velocity)


def load_checkpoint(path):
    """Returns (params dict of Tensors, OptState or None, config echo dict)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = json.loads(_read_exact(f, clen, "config").decode("utf-8"))
        arrays = _read_table(f)
        (has_opt,) = struct.unpack("<B", _read_exact(f, 1, "optimizer flag"))
        opt = None
        if has_opt:
            (step,) = struct.unpack("<Q", _read_exact(f, 8, "step"))
            opt = OptState(velocity=_read_table(f), step=step)
    params = {k: tg.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return params, opt, config


# ---------------------------------------------------------------------------
# training

def predict_quantized(image: np.ndarray, params: dict, net_cfg: nw.NetConfig) -> np.ndarray:
    """Final saliency map, quantized to 8 bits like the on-disk format."""
    x = tg.Tensor(image[None].astype(np.float32))
    out = nw.rrn_forward(x, params, net_cfg).final.data[0, 0]
    return np.rint(np.clip(out, 0, 1) * 255.0) / 255.0


def evaluate_split(entries, base_dir, params, net_cfg, dataset: str,
                   with_ber: bool = False, boundary_width: int = None) -> mt.MetricReport:
    preds, gts = [], []
    for e in sorted(entries, key=lambda e: e["id"]):
        s = dt.load_sample(e, base_dir)
        preds.append(predict_quantized(s.image, params, net_cfg))
        gts.append(s.gt.astype(np.float64))
    return mt.evaluate(preds, gts, dataset, with_ber=with_ber,
                       boundary_width=boundary_width)


def train(cfg: TrainConfig, manifest: dt.Manifest, base_dir, net_cfg: nw.NetConfig,
          loss_cfg: LossConfig, bnd_cfg: BoundaryConfig, aug_cfg: dt.AugmentConfig,
          out_dir, log_name: str = "train_log.jsonl"):
    """Run the full loop; returns (params, per-split MetricReports dict).

    Writes train_log.jsonl, final.ckpt, best.ckpt (lowest val MAE) and
    metrics.json under out_dir.
    """
    train_entries = manifest.split("train")
    if not train_entries:
        raise ValueError("manifest has no train split")
    val_entries = manifest.split("val")
    samples = [dt.load_sample(e, base_dir) for e in
               sorted(train_entries, key=lambda e: e["id"])]

    params = nw.init_params(net_cfg, seed=cfg.seed)
    state = OptState.zeros_like(params)
    n = len(samples)
    iters_per_epoch = math.ceil(n / cfg.batch)
    max_iter = cfg.epochs * iters_per_epoch
    config_echo = {
        "train": vars(cfg).copy(),
        "net": _net_cfg_dict(net_cfg),
        "loss": vars(loss_cfg).copy(),
        "boundary": vars(bnd_cfg).copy(),
        "aug": vars(aug_cfg).copy(),
    }

    os.makedirs(out_dir, exist_ok=True)
    best_val = None
    iteration = 0
    with open(os.path.join(out_dir, log_name), "w") as log:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, epoch, 0xB47C4])).permutation(n)
            for b in range(iters_per_epoch):
                idx = order[b * cfg.batch:(b + 1) * cfg.batch]
                imgs, gts, bands = [], [], []
                for k in idx:
                    rng = dt.augment_rng(cfg.seed, epoch, int(k))
                    s = dt.augment(samples[k], aug_cfg, rng)
                    imgs.append(s.image)
                    gts.append(s.gt.astype(np.float32))
                    # band follows the augmented ground truth so the
                    # supervision stays aligned after geometric transforms
                    if bnd_cfg.strategy == "expand":
                        bands.append(boundary_mask(s.gt, bnd_cfg).astype(np.float32))
                    else:
                        bands.append(np.zeros_like(s.gt, dtype=np.float32))
                image = tg.Tensor(np.stack(imgs))
                gt = np.stack(gts)[:, None]
                band = np.stack(bands)[:, None]

                lr = poly_lr(cfg.base_lr, iteration, max_iter, cfg.power)
                tape = tg.Tape()
                try:
                    outs = nw.rrn_forward(image, params, net_cfg, tape=tape)
                    total, breakdown = total_loss(
                        outs.final, outs.side, gt, band, loss_cfg,
                        use_brl=cfg.use_brl, strategy=bnd_cfg.strategy, tape=tape)
                    node_grads = tg.backward(tape, total)
                except NumericsError as e:
                    raise NumericsError(f"{e} (iteration {iteration})") from e
                grads = {name: node_grads.get(tape.node_id(p))
                         for name, p in params.items()}
                sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)

                log.write(json.dumps({
                    "epoch": epoch, "iter": iteration, "lr": lr,
                    "l_f": breakdown.l_f, "l_side_sum": float(sum(breakdown.l_i)),
                    "l_bf": breakdown.l_bf,
                    "l_bside_sum": float(sum(breakdown.l_bi)),
                    "total": breakdown.total,
                }) + "\n")
                iteration += 1

            if val_entries:
                rep = evaluate_split(val_entries, base_dir, params, net_cfg, "val")
                if best_val is None or rep.mae < best_val:
                    best_val = rep.mae
                    save_checkpoint(os.path.join(out_dir, "best.ckpt"),
                                    params, state, config_echo)

    save_checkpoint(os.path.join(out_dir, "final.ckpt"), params, state, config_echo)

    reports = {}
    for split in ("train", "val", "test"):
        entries = manifest.split(split)
        if entries:
            reports[split] = evaluate_split(
                entries, base_dir, params, net_cfg, split,
                boundary_width=max(1, bnd_cfg.width))
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump({k: r.to_dict() for k, r in reports.items()}, f, indent=2)
    return params, reports


def _net_cfg_dict(net_cfg: nw.NetConfig) -> dict:
    d = vars(net_cfg).copy()
    d["rrm"] = vars(net_cfg.rrm).copy()
    d["input_size"] = list(net_cfg.input_size)
    return d


# ---------------------------------------------------------------------------
# multi-run statistics

def aggregate(values) -> tuple:
    """Mean and population (divide-by-n) standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def multirun(seeds, cfg: TrainConfig, manifest: dt.Manifest, base_dir,
             net_cfg: nw.NetConfig, loss_cfg: LossConfig, bnd_cfg: BoundaryConfig,
             aug_cfg: dt.AugmentConfig, out_dir):
    """Train one model per seed; aggregate test metrics (mean, pop. std)."""
    if len(seeds) < 2:
        raise ValueError("multirun needs at least 2 seeds")
    reports = []
    for seed in seeds:
        run_cfg = TrainConfig(**{**vars(cfg), "seed": int(seed)})
        run_dir = os.path.join(out_dir, f"seed{seed}")
        _, reps = train(run_cfg, manifest, base_dir, net_cfg, loss_cfg,
                        bnd_cfg, aug_cfg, run_dir)
        reports.append(reps["test"] if "test" in reps else reps["train"])
    summary = {"seeds": [int(s) for s in seeds]}
    for key in ("mae", "max_f_beta"):
        mean, std = aggregate([getattr(r, key) for r in reports])
        summary[key] = {"mean": mean, "std": std,
                        "values": [getattr(r, key) for r in reports]}
    return reports, summary
