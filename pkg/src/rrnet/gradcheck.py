"""Central finite-difference verification of every differentiable kernel.

The numeric side never touches the backward rules: it re-runs the forward
pass with perturbed inputs, so it is an independent oracle for the tape.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tg


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function f w.r.t. every entry of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(forward, leaves, h: float = 1e-5) -> float:
    """Max relative error over all leaves.

    ``forward(tape) -> scalar Tensor`` rebuilds the graph from the leaves'
    current data; ``leaves`` are float64 Tensors with requires_grad set.
    """
    tape = tg.Tape()
    loss = forward(tape)
    grads = tg.backward(tape, loss)
    worst = 0.0
    for leaf in leaves:
        ga = grads.get(tape.node_id(leaf))
        if ga is None:
            ga = np.zeros_like(leaf.data)
        gn = numeric_grad(lambda: forward(None).item(), leaf.data, h=h)
        worst = max(worst, max_rel_err(ga, gn))
    return worst


def _rand(rng, *shape, lo=-1.0, hi=1.0):
    t = tg.Tensor(rng.uniform(lo, hi, size=shape).astype(np.float64), requires_grad=True)
    return t


def run_suite(seed: int = 0, trials: int = 20, include_network: bool = True):
    """Gradient-check every kernel on random small tensors.

    Returns a list of (name, max_rel_err, tolerance) triples; a check passes
    when err < tolerance.
    """
    from . import losses as ls
    from . import boundary as bd

    rng = np.random.default_rng(seed)
    results = []

    def dims():
        return (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                int(rng.integers(2, 7)), int(rng.integers(2, 7)))

    def run(name, trial_fn, tol=1e-4, n=trials):
        worst = 0.0
        for _ in range(n):
            worst = max(worst, trial_fn())
        results.append((name, worst, tol))

    def conv_trial(k, stride):
        B, C, H, W = dims()
        if stride == 2:
            H, W = max(H, 4) & ~1, max(W, 4) & ~1  # even dims for the toy stride
        outC = int(rng.integers(1, 4))
        x = _rand(rng, B, C, H, W)
        w = _rand(rng, outC, C, k, k)
        b = _rand(rng, 1, outC, 1, 1)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.conv2d(x, w, b, stride=stride, tape=t), y, tape=t), tape=t), [x, w, b])

    run("conv2d_k1", lambda: conv_trial(1, 1))
    run("conv2d_k3", lambda: conv_trial(3, 1))
    run("conv2d_k3_s2", lambda: conv_trial(3, 2))

    def relu_trial():
        x = _rand(rng, *dims())
        # keep entries away from the kink at 0
        x.data[np.abs(x.data) < 1e-2] += 0.05
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.relu(x, tape=t), y, tape=t), tape=t), [x])

    run("relu", relu_trial)

    def sigmoid_trial():
        x = _rand(rng, *dims(), lo=-3, hi=3)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.sigmoid(x, tape=t), y, tape=t), tape=t), [x])

    run("sigmoid", sigmoid_trial)

    def add_trial(bcast):
        B, C, H, W = dims()
        a = _rand(rng, B, C, H, W)
        b = _rand(rng, B, 1 if bcast else C, H, W)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.add(a, b, tape=t), y, tape=t), tape=t), [a, b])

    run("add", lambda: add_trial(False))
    run("add_broadcast", lambda: add_trial(True))

    def mul_trial(bcast):
        B, C, H, W = dims()
        a = _rand(rng, B, C, H, W)
        b = _rand(rng, B, 1 if bcast else C, H, W)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.mul(a, b, tape=t), y, tape=t), tape=t), [a, b])

    run("mul", lambda: mul_trial(False))
    run("mul_broadcast", lambda: mul_trial(True))

    def resize_trial():
        B, C, H, W = dims()
        oh = int(rng.integers(1, 9))
        ow = int(rng.integers(1, 9))
        x = _rand(rng, B, C, H, W)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.bilinear_resize(x, (oh, ow), tape=t), y, tape=t), tape=t), [x])

    run("bilinear_resize", resize_trial)

    def upsample_trial():
        x = _rand(rng, *dims())
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.bilinear_upsample_x2(x, tape=t), y, tape=t), tape=t), [x])

    run("bilinear_upsample_x2", upsample_trial)

    def pool_trial():
        B, C, H, W = dims()
        bh = int(rng.integers(1, H + 1))
        bw = int(rng.integers(1, W + 1))
        x = _rand(rng, B, C, H, W)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.adaptive_avg_pool(x, (bh, bw), tape=t), y, tape=t), tape=t), [x])

    run("adaptive_avg_pool", pool_trial)

    def concat_trial():
        B, C, H, W = dims()
        a = _rand(rng, B, C, H, W)
        b = _rand(rng, B, int(rng.integers(1, 4)), H, W)
        return check_grads(lambda t: tg.sum_all(tg.mul(
            y := tg.concat_channels([a, b], tape=t), y, tape=t), tape=t), [a, b])

    run("concat_channels", concat_trial)

    def bce_trial():
        B, C, H, W = dims()
        p = _rand(rng, B, C, H, W, lo=0.05, hi=0.95)
        gt = rng.integers(0, 2, size=(B, C, H, W)).astype(np.float64)
        return check_grads(lambda t: ls.bce(p, gt, tape=t), [p])

    run("bce", bce_trial)

    def iou_trial(masked):
        B, C, H, W = 1, 1, int(rng.integers(3, 7)), int(rng.integers(3, 7))
        p = _rand(rng, B, C, H, W, lo=0.05, hi=0.95)
        gt = rng.integers(0, 2, size=(B, C, H, W)).astype(np.float64)
        gt.flat[int(rng.integers(gt.size))] = 1.0  # non-degenerate union
        mask = None
        if masked:
            mask = rng.integers(0, 2, size=(H, W)).astype(np.float64)
            mask.flat[int(np.argmax(gt.reshape(H, W) >= 0))] = 1.0
        return check_grads(lambda t: ls.soft_iou_loss(p, gt, mask=mask, tape=t), [p])

    run("soft_iou", lambda: iou_trial(False))
    run("soft_iou_masked", lambda: iou_trial(True))

    def sobel_trial():
        B, H, W = 1, int(rng.integers(3, 7)), int(rng.integers(3, 7))
        # small amplitude keeps the magnitude strictly inside (0, 1)
        p = _rand(rng, B, 1, H, W, lo=0.25, hi=0.40)
        return check_grads(lambda t: tg.sum_all(bd.sobel_magnitude(p, tape=t), tape=t), [p])

    run("sobel_magnitude", sobel_trial)

    if include_network:
        from . import network as nw
        from . import rrm

        cfg = nw.NetConfig(stage_channels=[2, 2, 3, 3], fuse_channels=2,
                           ppm_bins=[1, 2], input_size=(16, 16),
                           rrm=rrm.RRMConfig(n_layers=1, convs_per_layer=1, channels=2))
        params = nw.init_params(cfg, seed=seed, dtype=np.float64)
        for name, p in params.items():
            p.data = p.data.astype(np.float64)
            if name.endswith("_b"):
                # keep pre-activations off the relu kink at exactly zero
                p.data += rng.uniform(0.05, 0.2, size=p.data.shape)
        img = _rand(rng, 1, 3, 16, 16, lo=0.0, hi=1.0)
        names = sorted(params)
        leaves = [params[k] for k in names]
        for p in leaves:
            p.requires_grad = True

        def net_loss(t):
            outs = nw.rrn_forward(img, params, cfg, tape=t)
            total = tg.sum_all(outs.final, tape=t)
            for s in outs.side:
                total = tg.add(total, tg.sum_all(s, tape=t), tape=t)
            return total

        worst = check_grads(net_loss, leaves + [img])
        results.append(("network_end_to_end", worst, 1e-3))

    return results
