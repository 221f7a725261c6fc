"""Run configuration files: one JSON document with net / train / loss /
boundary / aug sections. Unknown keys anywhere are rejected up front."""

from __future__ import annotations

import dataclasses
import json

from .boundary import BoundaryConfig
from .data import AugmentConfig
from .losses import LossConfig
from .network import NetConfig
from .rrm import RRMConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclasses.dataclass
class RunConfig:
    net: NetConfig
    train: TrainConfig
    loss: LossConfig
    boundary: BoundaryConfig
    aug: AugmentConfig


def _build(cls, doc: dict, section: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {section} section: {e}") from e


def default_config() -> RunConfig:
    return RunConfig(net=NetConfig(), train=TrainConfig(), loss=LossConfig(),
                     boundary=BoundaryConfig(), aug=AugmentConfig())


def from_dict(doc: dict) -> RunConfig:
    known = {"net", "train", "loss", "boundary", "aug"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")

    net_doc = dict(doc.get("net", {}))
    rrm_doc = net_doc.pop("rrm", {})
    rrm = _build(RRMConfig, rrm_doc, "net.rrm")
    if "input_size" in net_doc:
        net_doc["input_size"] = tuple(net_doc["input_size"])
    net = _build(NetConfig, {**net_doc, "rrm": rrm}, "net")

    cfg = RunConfig(
        net=net,
        train=_build(TrainConfig, doc.get("train", {}), "train"),
        loss=_build(LossConfig, doc.get("loss", {}), "loss"),
        boundary=_build(BoundaryConfig, doc.get("boundary", {}), "boundary"),
        aug=_build(AugmentConfig, doc.get("aug", {}), "aug"),
    )
    # side-output loss weighting is sigma = lambda / N; keep N in sync
    cfg.loss.n_layers = cfg.net.rrm.n_layers
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return from_dict(doc)
