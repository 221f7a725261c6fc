"""Dense NCHW tensors, differentiable kernels and reverse-mode backprop.

Every kernel is a pure function: it takes Tensors, returns a new Tensor and
(optionally) records a backward rule on a Tape. Gradients are computed by
walking the tape in reverse. All reductions use a single fixed loop nest so
repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericsError(FloatingPointError):
    """Raised when an op produces NaN or Inf, or a loss is not scalar."""


class Tensor:
    """A dense (batch, channels, height, width) array of real values.

    ``requires_grad`` marks leaves whose gradient is wanted; ``node_id`` is
    assigned when the tensor joins a Tape.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (N,C,H,W), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def scalar(value: float, dtype=np.float64) -> Tensor:
    """A (1,1,1,1) tensor holding one value."""
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


class Tape:
    """Ordered record of ops for reverse-mode differentiation.

    Single-writer: one forward pass builds one tape on one thread. Ops are
    appended in execution order, so inputs always precede their consumers.
    """

    def __init__(self):
        self._records = []  # (input_ids, output_id, backward_fn)
        self._ids = {}      # id(tensor) -> node_id, valid for this tape only
        self._keepalive = []  # pins watched tensors so python ids stay unique
        self._next_id = 0

    def watch(self, tensor: Tensor) -> int:
        """Assign the tensor a node id on this tape (idempotent)."""
        nid = self._ids.get(id(tensor))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[id(tensor)] = nid
            self._keepalive.append(tensor)
        tensor.node_id = nid
        return nid

    def node_id(self, tensor: Tensor):
        """This tape's node id for a tensor, or None if it never joined."""
        return self._ids.get(id(tensor))

    def record(self, inputs, output: Tensor, backward_fn) -> None:
        """Record one op.

        ``backward_fn(grad_out) -> list`` returns one gradient array per
        input (``None`` for non-differentiable inputs), aligned with
        ``inputs``.
        """
        input_ids = [self._ids.get(id(t)) for t in inputs]
        self._records.append((input_ids, self.watch(output), backward_fn))

    def __len__(self):
        return len(self._records)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{op} produced non-finite values")


def _should_record(tape, inputs) -> bool:
    if tape is None:
        return False
    for t in inputs:
        if t.requires_grad and tape.node_id(t) is None:
            tape.watch(t)
    return any(tape.node_id(t) is not None for t in inputs)


def apply_op(name, inputs, out_data, backward_fn, tape=None) -> Tensor:
    """Wrap an op result and record its backward rule if a tape is active.

    Exposed so other modules (losses, edge maps) can define differentiable
    kernels without touching Tape internals.
    """
    _check_finite(out_data, name)
    out = Tensor(out_data)
    if _should_record(tape, inputs):
        tape.record(inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradient of a scalar loss w.r.t. every tensor on the tape.

    Returns {node_id: gradient array}. Accumulation follows the fixed tape
    order, so two calls give bit-identical results.
    """
    if loss.data.size != 1:
        raise NumericsError(f"backward() needs a scalar loss, got shape {loss.shape}")
    loss_id = tape.node_id(loss)
    if loss_id is None:
        raise NumericsError("loss is not attached to the tape (detached graph)")
    grads = {loss_id: np.ones_like(loss.data)}
    for input_ids, output_id, backward_fn in reversed(tape._records):
        go = grads.get(output_id)
        if go is None:
            continue
        gins = backward_fn(go)
        for node_id, g in zip(input_ids, gins):
            if node_id is None or g is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + g
            else:
                grads[node_id] = g
    return grads


# ---------------------------------------------------------------------------
# convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, tape: Tape = None) -> Tensor:
    """2-D convolution, kernel 1x1 or 3x3, zero padding keeping spatial size.

    Stride 2 is allowed for 3x3 kernels only (backbone downsampling).
    """
    B, C, H, W = x.shape
    outC, inC, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
    k = kh
    if stride not in (1, 2) or (stride == 2 and k != 3):
        raise ShapeError(f"stride {stride} unsupported for kernel {k}x{k}")
    if C != inC:
        raise ShapeError(f"input has {C} channels but weight expects {inC} "
                         f"(input {x.shape}, weight {weight.shape})")
    if bias.shape != (1, outC, 1, 1):
        raise ShapeError(f"bias must have shape (1,{outC},1,1), got {bias.shape}")

    pad = 1 if k == 3 else 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    w = weight.data.astype(x.dtype, copy=False)
    wmat = w.reshape(outC, inC * k * k)

    # im2col: one BLAS matmul instead of k*k small contractions
    cols = np.empty((B, Ho, Wo, inC, k, k), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, :, :, dy, dx] = xp[:, :, dy:dy + stride * (Ho - 1) + 1:stride,
                                          dx:dx + stride * (Wo - 1) + 1:stride
                                          ].transpose(0, 2, 3, 1)
    colmat = cols.reshape(B * Ho * Wo, inC * k * k)
    out = (colmat @ wmat.T).reshape(B, Ho, Wo, outC).transpose(0, 3, 1, 2)
    out = out + bias.data.astype(x.dtype, copy=False)

    def back(go):
        gb = go.sum(axis=(0, 2, 3)).reshape(1, outC, 1, 1)
        gom = go.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, outC)
        gw = (gom.T @ colmat).reshape(outC, inC, k, k).astype(weight.dtype, copy=False)
        gcols = (gom @ wmat).reshape(B, Ho, Wo, inC, k, k)
        gxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                gxp[:, :, dy:dy + stride * (Ho - 1) + 1:stride,
                    dx:dx + stride * (Wo - 1) + 1:stride
                    ] += gcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return [gx, gw, gb]

    return apply_op("conv2d", [x, weight, bias], out, back, tape)


# ---------------------------------------------------------------------------
# elementwise

def relu(x: Tensor, tape: Tape = None) -> Tensor:
    out = np.maximum(x.data, 0)

    def back(go):
        return [go * (x.data > 0)]

    return apply_op("relu", [x], out, back, tape)


def sigmoid(x: Tensor, tape: Tape = None) -> Tensor:
    s = expit(x.data)

    def back(go):
        return [go * s * (1 - s)]

    return apply_op("sigmoid", [x], s, back, tape)


def _binary_shapes(a: Tensor, b: Tensor):
    """Same shape, or b has 1 channel broadcast across a's channels."""
    if a.shape == b.shape:
        return False
    ba, ca, ha, wa = a.shape
    bb, cb, hb, wb = b.shape
    if cb == 1 and (ba, ha, wa) == (bb, hb, wb):
        return True
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor, tape: Tape = None) -> Tensor:
    bcast = _binary_shapes(a, b)
    out = a.data + b.data

    def back(go):
        gb = go.sum(axis=1, keepdims=True) if bcast else go
        return [go, gb]

    return apply_op("add", [a, b], out, back, tape)


def shift(a: Tensor, c: float, tape: Tape = None) -> Tensor:
    """Add a scalar constant elementwise."""
    out = a.data + a.data.dtype.type(c)

    def back(go):
        return [go]

    return apply_op("shift", [a], out, back, tape)


def mul(a: Tensor, b: Tensor, tape: Tape = None) -> Tensor:
    bcast = _binary_shapes(a, b)
    out = a.data * b.data

    def back(go):
        ga = go * b.data
        gb = go * a.data
        if bcast:
            gb = gb.sum(axis=1, keepdims=True)
        return [ga, gb]

    return apply_op("mul", [a, b], out, back, tape)


def scale(x: Tensor, c: float, tape: Tape = None) -> Tensor:
    """Multiply by a python constant (loss balancing coefficients)."""
    out = x.data * c

    def back(go):
        return [go * c]

    return apply_op("scale", [x], out, back, tape)


def sum_all(x: Tensor, tape: Tape = None) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)

    def back(go):
        return [np.full_like(x.data, go.reshape(()))]

    return apply_op("sum_all", [x], out, back, tape)


# ---------------------------------------------------------------------------
# resampling / pooling / concat

def _linear_coords(n_in: int, n_out: int):
    """Half-pixel-center source coordinates, clamped to the valid range."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    return i0, i1, w


def bilinear_resize(x: Tensor, out_hw, tape: Tape = None) -> Tensor:
    """Bilinear resize to (out_h, out_w), half-pixel centers, edge clamped."""
    B, C, H, W = x.shape
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise ShapeError(f"bad target size {out_hw}")
    y0, y1, wy = _linear_coords(H, oh)
    x0, x1, wx = _linear_coords(W, ow)
    wy = wy.astype(x.dtype)[None, None, :, None]
    wx = wx.astype(x.dtype)[None, None, None, :]

    top = x.data[:, :, y0, :] * (1 - wy) + x.data[:, :, y1, :] * wy
    out = top[:, :, :, x0] * (1 - wx) + top[:, :, :, x1] * wx

    def back(go):
        gtop = np.zeros((B, C, oh, W), dtype=go.dtype)
        np.add.at(gtop, (slice(None), slice(None), slice(None), x0), go * (1 - wx))
        np.add.at(gtop, (slice(None), slice(None), slice(None), x1), go * wx)
        gx = np.zeros((B, C, H, W), dtype=go.dtype)
        np.add.at(gx, (slice(None), slice(None), y0), gtop * (1 - wy))
        np.add.at(gx, (slice(None), slice(None), y1), gtop * wy)
        return [gx]

    return apply_op("bilinear_resize", [x], out, back, tape)


def bilinear_upsample_x2(x: Tensor, tape: Tape = None) -> Tensor:
    B, C, H, W = x.shape
    return bilinear_resize(x, (2 * H, 2 * W), tape=tape)


def adaptive_avg_pool(x: Tensor, bins, tape: Tape = None) -> Tensor:
    """Mean over the standard adaptive partition into (bh, bw) bins."""
    B, C, H, W = x.shape
    bh, bw = bins
    if bh < 1 or bw < 1 or bh > H or bw > W:
        raise ShapeError(f"bins {bins} invalid for input {H}x{W}")
    # standard adaptive partition: cell (i,j) covers rows
    # [floor(i*H/bh), ceil((i+1)*H/bh)) and likewise for columns
    hs = [int(np.floor(i * H / bh)) for i in range(bh)]
    he = [int(np.ceil((i + 1) * H / bh)) for i in range(bh)]
    ws_ = [int(np.floor(j * W / bw)) for j in range(bw)]
    we = [int(np.ceil((j + 1) * W / bw)) for j in range(bw)]

    out = np.zeros((B, C, bh, bw), dtype=x.dtype)
    for i in range(bh):
        for j in range(bw):
            out[:, :, i, j] = x.data[:, :, hs[i]:he[i], ws_[j]:we[j]].mean(axis=(2, 3))

    def back(go):
        gx = np.zeros_like(x.data)
        for i in range(bh):
            for j in range(bw):
                area = (he[i] - hs[i]) * (we[j] - ws_[j])
                gx[:, :, hs[i]:he[i], ws_[j]:we[j]] += go[:, :, i:i + 1, j:j + 1] / area
        return [gx]

    return apply_op("adaptive_avg_pool", [x], out, back, tape)


def concat_channels(parts, tape: Tape = None) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero parts")
    ref = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0],) + p.shape[2:] != (ref[0],) + ref[2:]:
            raise ShapeError(f"spatial/batch mismatch in concat: {ref} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=1)
    splits = np.cumsum([p.shape[1] for p in parts])[:-1]

    def back(go):
        return list(np.split(go, splits, axis=1))

    return apply_op("concat_channels", list(parts), out, back, tape)
