"""Synthetic scenes, the dataset manifest, and training-time augmentation.

Each sample is a smooth color gradient plus noise with 1-3 non-overlapping
solid shapes; the ground truth is the union of the shapes. All randomness
comes from per-sample seed streams, so generation order never matters.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from . import netpbm


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0,1]
    gt: np.ndarray     # (H, W) in {0,1}
    id: str


@dataclass
class AugmentConfig:
    mirror: bool = True
    scale_range: list = field(default_factory=lambda: [0.75, 1.25])
    rotation_deg: list = field(default_factory=lambda: [-10.0, 10.0])
    crop: int = 64

    def __post_init__(self):
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be positive")
        if self.crop < 8:
            raise ValueError("crop must be >= 8")


@dataclass
class Manifest:
    version: int
    generator_seed: int
    entries: list  # {id, image_path, mask_path, split}

    def split(self, name: str) -> list:
        return [e for e in self.entries if e["split"] == name]

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"version": self.version, "generator_seed": self.generator_seed,
                       "entries": self.entries}, f, indent=2)

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as f:
            doc = json.load(f)
        m = cls(version=doc["version"], generator_seed=doc["generator_seed"],
                entries=doc["entries"])
        ids = [e["id"] for e in m.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in manifest")
        return m


def load_sample(entry: dict, base_dir) -> Sample:
    image = netpbm.load_ppm(os.path.join(base_dir, entry["image_path"]))
    mask = netpbm.load_pgm(os.path.join(base_dir, entry["mask_path"]))
    return Sample(image=image.astype(np.float32),
                  gt=(mask > 0.5).astype(np.uint8), id=entry["id"])


def _shape_mask(rng, size: int) -> np.ndarray:
    """One random ellipse, rotated rectangle or convex polygon."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy = rng.uniform(0.2, 0.8) * size
    cx = rng.uniform(0.2, 0.8) * size
    # lower bound keeps every shape clearly visible after a 0.75x rescale
    radius = rng.uniform(0.16, 0.28) * size
    theta = rng.uniform(0, math.pi)
    dy, dx = yy - cy, xx - cx
    ry = dy * math.cos(theta) - dx * math.sin(theta)
    rx = dy * math.sin(theta) + dx * math.cos(theta)
    kind = rng.integers(0, 3)
    if kind == 0:  # ellipse
        a = radius
        b = rng.uniform(0.6, 1.0) * radius
        return (ry / a) ** 2 + (rx / b) ** 2 <= 1.0
    if kind == 1:  # rectangle
        a = radius
        b = rng.uniform(0.6, 1.0) * radius
        return (np.abs(ry) <= a) & (np.abs(rx) <= b)
    # convex polygon: hull of random points on a jittered circle
    k = int(rng.integers(4, 8))
    ang = np.sort(rng.uniform(0, 2 * math.pi, size=k))
    rad = rng.uniform(0.75, 1.0, size=k) * radius
    pts = np.stack([cy + rad * np.sin(ang), cx + rad * np.cos(ang)], axis=1)
    hull = ConvexHull(pts)
    inside = np.ones((size, size), dtype=bool)
    for eq in hull.equations:  # a*y + b*x + c <= 0 for interior points
        inside &= eq[0] * yy + eq[1] * xx + eq[2] <= 1e-9
    return inside


def _make_sample(rng, size: int):
    # smooth background: bilinear blend of four random near-gray corner
    # colors (low saturation keeps the backdrop from imitating a shape)
    gray = rng.uniform(0.15, 0.85, size=(2, 2, 1))
    corners = np.clip(gray + rng.uniform(-0.1, 0.1, size=(2, 2, 3)), 0, 1)
    ty = np.linspace(0, 1, size)[:, None, None]
    tx = np.linspace(0, 1, size)[None, :, None]
    bg = ((1 - ty) * ((1 - tx) * corners[0, 0] + tx * corners[0, 1])
          + ty * ((1 - tx) * corners[1, 0] + tx * corners[1, 1]))
    bg_mean = bg.mean(axis=(0, 1))

    for _ in range(200):
        n_shapes = int(rng.integers(1, 4))
        masks, colors = [], []
        ok = True
        for _ in range(n_shapes):
            m = _shape_mask(rng, size)
            if m.mean() < 0.015:  # mostly clipped by the frame; too small
                ok = False
                break
            if any((m & prev).any() for prev in masks):  # shapes must not occlude
                ok = False
                break
            for _ in range(50):
                c = rng.uniform(0, 1, 3)
                far = np.linalg.norm(c - bg_mean) >= 0.5
                far &= c.max() - c.min() >= 0.5  # saturated against the gray bg
                far &= all(np.linalg.norm(c - pc) >= 0.3 for pc in colors)
                if far:
                    break
            else:
                ok = False
                break
            masks.append(m)
            colors.append(c)
        if not ok:
            continue
        gt = np.zeros((size, size), dtype=np.uint8)
        for m in masks:
            gt |= m
        frac = gt.mean()
        if 0.05 < frac < 0.5:
            break
    else:
        raise RuntimeError("failed to place shapes within the retry budget")

    image = bg.copy()
    for m, c in zip(masks, colors):
        image[m] = c
    image += rng.normal(0, 0.05, size=image.shape)
    image = np.clip(image, 0, 1).transpose(2, 0, 1)
    return image, gt


def gen_synthetic(count: int, size: int, seed: int, out_dir) -> Manifest:
    """Write `count` image/mask pairs plus a manifest; 80/10/10 split."""
    if size % 16:
        raise ValueError(f"size must be divisible by 16, got {size}")
    os.makedirs(out_dir, exist_ok=True)
    n_train = int(count * 0.8)
    n_val = int(count * 0.1)
    entries = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        image, gt = _make_sample(rng, size)
        sid = f"{i:04d}"
        image_path, mask_path = f"{sid}.ppm", f"{sid}.pgm"
        netpbm.save_ppm(os.path.join(out_dir, image_path), image)
        netpbm.save_pgm(os.path.join(out_dir, mask_path), gt.astype(np.float64))
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        entries.append({"id": sid, "image_path": image_path,
                        "mask_path": mask_path, "split": split})
    manifest = Manifest(version=1, generator_seed=seed, entries=entries)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def augment_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Independent per-(seed, epoch, sample) stream."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, sample_index]))


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Mirror -> scale -> rotate -> random crop; masks stay binary."""
    image = sample.image.astype(np.float64)
    gt = sample.gt.astype(np.uint8)

    if cfg.mirror and rng.random() < 0.5:
        image = image[:, :, ::-1].copy()
        gt = gt[:, ::-1].copy()

    s = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    if s != 1.0:
        image = ndimage.zoom(image, (1, s, s), order=1, mode="constant", cval=0.0)
        gt = ndimage.zoom(gt, (s, s), order=0, mode="constant", cval=0)

    angle = rng.uniform(cfg.rotation_deg[0], cfg.rotation_deg[1])
    if angle != 0.0:
        image = ndimage.rotate(image, angle, axes=(1, 2), reshape=False,
                               order=1, mode="constant", cval=0.0)
        gt = ndimage.rotate(gt, angle, axes=(0, 1), reshape=False,
                            order=0, mode="constant", cval=0)

    c = cfg.crop
    H, W = gt.shape
    if H < c or W < c:
        py, px = max(0, c - H), max(0, c - W)
        image = np.pad(image, ((0, 0), (py // 2, py - py // 2), (px // 2, px - px // 2)))
        gt = np.pad(gt, ((py // 2, py - py // 2), (px // 2, px - px // 2)))
        H, W = gt.shape
    top = int(rng.integers(0, H - c + 1))
    left = int(rng.integers(0, W - c + 1))
    image = image[:, top:top + c, left:left + c]
    gt = gt[top:top + c, left:left + c]
    return Sample(image=np.clip(image, 0, 1).astype(np.float32),
                  gt=gt.astype(np.uint8), id=sample.id)
