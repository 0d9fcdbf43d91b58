"""Regression-network tracker: each prediction seeds the next search region."""

from __future__ import annotations

from ..geometry import BBox
from ..trackers import Tracker
from .checkpoint import Checkpoint
from .crops import crop_pair, crop_to_box
from .network import RegNetConfig, RegNetParams, forward


class RegNetTracker(Tracker):
    name = "regnet"

    def __init__(self, params: RegNetParams, cfg: RegNetConfig):
        params.check_shapes(cfg)
        self.params = params
        self.cfg = cfg

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "RegNetTracker":
        return cls(ckpt.params, ckpt.config)

    def predict(self, state, frame):
        target, search, _, region = crop_pair(state.prev_frame, state.prev_box, frame, None, None, self.cfg)
        out = forward(self.params, self.cfg, target, search)
        xa, ya, xb, yb = crop_to_box(out, region, self.cfg.output_scale)
        return BBox(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))


def regnet_tracker(params: RegNetParams, cfg: RegNetConfig) -> RegNetTracker:
    return RegNetTracker(params, cfg)
