"""Toy end-to-end network: small backbone, multi-level fusion, pooled
context, then the gated refinement head.

The backbone is four stride-2 stages; their features are reduced with 1x1
convolutions, resized to quarter resolution, concatenated, enriched by
multi-bin average pooling, and squeezed to the refinement head's width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tg
from . import rrm as rrm_mod
from .rrm import RRMConfig, RRMOutputs


@dataclass
class NetConfig:
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 64])
    fuse_channels: int = 16
    ppm_bins: list = field(default_factory=lambda: [1, 2, 3, 6])
    rrm: RRMConfig = field(default_factory=RRMConfig)
    input_size: tuple = (64, 64)

    def __post_init__(self):
        if len(self.stage_channels) != 4:
            raise ValueError(f"exactly 4 backbone stages required, got {len(self.stage_channels)}")
        if self.input_size[0] % 16 or self.input_size[1] % 16:
            raise ValueError(f"input size must be divisible by 16, got {self.input_size}")


def param_shapes(cfg: NetConfig) -> dict:
    shapes = {}
    in_ch = 3
    for s, out_ch in enumerate(cfg.stage_channels):
        shapes[f"bb{s}_c1_w"] = (out_ch, in_ch, 3, 3)
        shapes[f"bb{s}_c1_b"] = (1, out_ch, 1, 1)
        shapes[f"bb{s}_c2_w"] = (out_ch, out_ch, 3, 3)
        shapes[f"bb{s}_c2_b"] = (1, out_ch, 1, 1)
        in_ch = out_ch
    for s, ch in enumerate(cfg.stage_channels):
        shapes[f"fpn{s}_w"] = (cfg.fuse_channels, ch, 1, 1)
        shapes[f"fpn{s}_b"] = (1, cfg.fuse_channels, 1, 1)
    cat_ch = 4 * cfg.fuse_channels
    for b in cfg.ppm_bins:
        shapes[f"ppm{b}_w"] = (cfg.fuse_channels, cat_ch, 1, 1)
        shapes[f"ppm{b}_b"] = (1, cfg.fuse_channels, 1, 1)
    merged_ch = cat_ch + len(cfg.ppm_bins) * cfg.fuse_channels
    shapes["merge_w"] = (cfg.rrm.channels, merged_ch, 1, 1)
    shapes["merge_b"] = (1, cfg.rrm.channels, 1, 1)
    shapes.update(rrm_mod.param_shapes(cfg.rrm, prefix="rrm_"))
    return shapes


def init_params(cfg: NetConfig, seed: int, dtype=np.float32) -> dict:
    """Kaiming-uniform fan-in weights, zero biases, drawn in sorted-name
    order so a seed pins every parameter."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = {}
    shapes = param_shapes(cfg)
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith("_b"):
            data = np.zeros(shape, dtype=dtype)
            if name == "rrm_head_out_b":
                # start the final sigmoid near a typical foreground rate
                # (expit(-1.75) ~ 0.15) instead of 0.5, so early steps are
                # not spent relearning the class prior
                data -= np.asarray(1.75, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            # uniform(-b, b) with b = sqrt(6/fan_in) has variance 2/fan_in,
            # the relu-preserving scale; anything smaller kills the signal
            # over the ~18-conv depth of this net
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = tg.Tensor(data, requires_grad=True)
    return params


def backbone_forward(image: tg.Tensor, params: dict, cfg: NetConfig,
                     tape: tg.Tape = None) -> list:
    """Four feature maps at strides 2, 4, 8 and 16."""
    B, C, H, W = image.shape
    if H % 16 or W % 16:
        raise tg.ShapeError(f"image dims must be divisible by 16, got {H}x{W}")
    feats = []
    # images arrive in [0,1]; center them so first-layer activations are
    # zero-mean under the symmetric weight init
    h = tg.shift(image, -0.5, tape=tape)
    for s in range(4):
        h = tg.relu(tg.conv2d(h, params[f"bb{s}_c1_w"], params[f"bb{s}_c1_b"],
                              stride=2, tape=tape), tape=tape)
        h = tg.relu(tg.conv2d(h, params[f"bb{s}_c2_w"], params[f"bb{s}_c2_b"],
                              tape=tape), tape=tape)
        feats.append(h)
    return feats


def fpn_fuse(features: list, params: dict, cfg: NetConfig,
             tape: tg.Tape = None) -> tg.Tensor:
    """Reduce, resize and concatenate the levels, add pooled context, and
    map to the refinement head's channel width."""
    if len(features) != 4:
        raise tg.ShapeError(f"expected 4 feature levels, got {len(features)}")
    target = features[1].shape[2:]  # quarter resolution
    reduced = []
    for s, feat in enumerate(features):
        r = tg.relu(tg.conv2d(feat, params[f"fpn{s}_w"], params[f"fpn{s}_b"],
                              tape=tape), tape=tape)
        if r.shape[2:] != target:
            r = tg.bilinear_resize(r, target, tape=tape)
        reduced.append(r)
    cat = tg.concat_channels(reduced, tape=tape)

    pooled = [cat]
    for b in cfg.ppm_bins:
        p = tg.adaptive_avg_pool(cat, (b, b), tape=tape)
        p = tg.relu(tg.conv2d(p, params[f"ppm{b}_w"], params[f"ppm{b}_b"],
                              tape=tape), tape=tape)
        pooled.append(tg.bilinear_resize(p, target, tape=tape))
    enriched = tg.concat_channels(pooled, tape=tape)
    return tg.relu(tg.conv2d(enriched, params["merge_w"], params["merge_b"],
                             tape=tape), tape=tape)


def rrn_forward(image: tg.Tensor, params: dict, cfg: NetConfig,
                tape: tg.Tape = None) -> RRMOutputs:
    """Full pipeline; every output map is resized to the input resolution."""
    H, W = image.shape[2:]
    feats = backbone_forward(image, params, cfg, tape=tape)
    merged = fpn_fuse(feats, params, cfg, tape=tape)
    outs = rrm_mod.rrm_forward(merged, params, cfg.rrm, tape=tape, prefix="rrm_")
    side = [tg.bilinear_resize(y, (H, W), tape=tape) for y in outs.side]
    final = tg.bilinear_resize(outs.final, (H, W), tape=tape)
    return RRMOutputs(side=side, final=final)
