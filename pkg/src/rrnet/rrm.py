"""The gated refinement head: a cascade of N layers of M conv blocks.

Each layer ends in a sigmoid side map; that map gates the features the next
layer receives (pixel-wise multiply, broadcast over channels). The final
head upsamples by two and combines the last features with the raw input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tg


@dataclass
class RRMConfig:
    n_layers: int = 4        # N
    convs_per_layer: int = 3  # M
    channels: int = 16        # C
    use_mask: bool = True

    def __post_init__(self):
        if self.n_layers < 1 or self.convs_per_layer < 1 or self.channels < 1:
            raise ValueError(f"N, M, C must all be >= 1, got "
                             f"({self.n_layers}, {self.convs_per_layer}, {self.channels})")


@dataclass
class RRMOutputs:
    side: list       # Y_1 .. Y_N, each (B,1,H,W), values in (0,1)
    final: tg.Tensor  # Y_f, (B,1,2H,2W) at module scale


def param_shapes(cfg: RRMConfig, prefix: str = "") -> dict:
    """Canonical name -> shape map for every learnable tensor.

    A 1x1 block is allocated for every (layer, slot) pair to keep the layout
    a pure function of (N, M, C); only the gated paths (layer >= 2) apply it.
    """
    C = cfg.channels
    shapes = {}
    for i in range(1, cfg.n_layers + 1):
        for j in range(1, cfg.convs_per_layer + 1):
            shapes[f"{prefix}rrl{i}_g{j}_w"] = (C, C, 3, 3)
            shapes[f"{prefix}rrl{i}_g{j}_b"] = (1, C, 1, 1)
            shapes[f"{prefix}rrl{i}_f{j}_w"] = (C, C, 1, 1)
            shapes[f"{prefix}rrl{i}_f{j}_b"] = (1, C, 1, 1)
        shapes[f"{prefix}rrl{i}_out_w"] = (1, C, 1, 1)
        shapes[f"{prefix}rrl{i}_out_b"] = (1, 1, 1, 1)
    shapes[f"{prefix}head_f_w"] = (C, C, 1, 1)
    shapes[f"{prefix}head_f_b"] = (1, C, 1, 1)
    shapes[f"{prefix}head_g_w"] = (C, C, 3, 3)
    shapes[f"{prefix}head_g_b"] = (1, C, 1, 1)
    shapes[f"{prefix}head_out_w"] = (1, C, 1, 1)
    shapes[f"{prefix}head_out_b"] = (1, 1, 1, 1)
    return shapes


def param_count(cfg: RRMConfig) -> int:
    """Exact number of learnable scalars for a given (N, M, C)."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _block(params, name, x, tape, act):
    h = tg.conv2d(x, params[f"{name}_w"], params[f"{name}_b"], tape=tape)
    return act(h, tape=tape)


def rrm_forward(x: tg.Tensor, params: dict, cfg: RRMConfig,
                tape: tg.Tape = None, prefix: str = "") -> RRMOutputs:
    """Run the cascade.

    Layer 1 sees the raw input; layer i > 1 sees layer i-1's features gated
    by its side map (unless use_mask is off), re-anchored on the input at
    slot 1 and on the previous slot elsewhere.
    """
    if x.shape[1] != cfg.channels:
        raise tg.ShapeError(f"input has {x.shape[1]} channels, config says {cfg.channels}")

    def g(i, j, v):
        return _block(params, f"{prefix}rrl{i}_g{j}", v, tape, tg.relu)

    def f(i, j, v):
        return _block(params, f"{prefix}rrl{i}_f{j}", v, tape, tg.relu)

    side = []
    prev_row, prev_gate = None, None
    for i in range(1, cfg.n_layers + 1):
        row = []
        for j in range(1, cfg.convs_per_layer + 1):
            if i == 1:
                h = g(1, j, x if j == 1 else row[-1])
            else:
                carried = prev_row[j - 1]
                if cfg.use_mask:
                    carried = tg.mul(carried, prev_gate, tape=tape)
                anchor = x if j == 1 else row[-1]
                h = g(i, j, tg.add(f(i, j, carried), anchor, tape=tape))
            row.append(h)
        y = _block(params, f"{prefix}rrl{i}_out", row[-1], tape, tg.sigmoid)
        side.append(y)
        prev_row, prev_gate = row, y

    up_feat = tg.bilinear_upsample_x2(prev_row[-1], tape=tape)
    up_x = tg.bilinear_upsample_x2(x, tape=tape)
    rrl_f = tg.add(_block(params, f"{prefix}head_f", up_feat, tape, tg.relu),
                   _block(params, f"{prefix}head_g", up_x, tape, tg.relu), tape=tape)
    final = _block(params, f"{prefix}head_out", rrl_f, tape, tg.sigmoid)
    return RRMOutputs(side=side, final=final)
