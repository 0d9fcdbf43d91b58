"""Offline training on consecutive annotated frame pairs with Laplace-perturbed search crops."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ValidationError
from .checkpoint import Checkpoint
from .crops import CropSampler, crop_pair
from .network import RegNetConfig, RegNetParams, backward, init_params, sgd_step

log = logging.getLogger(__name__)

PRESETS = {
    "paper": {"iterations": 200_000, "checkpoint_every": 2_000},
    "desk": {"iterations": 5_000, "checkpoint_every": 500, "lr_step": 2_500, "lr_gamma": 0.2},
}
DESK_LEARNING_RATE = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200_000
    checkpoint_every: int = 2_000
    learning_rate: float = DESK_LEARNING_RATE
    momentum: float = 0.9
    batch_size: int = 1
    seed: int = 0
    b_shift: float = 0.2
    b_scale: float = 1.0 / 15.0
    lr_step: int = 0
    lr_gamma: float = 0.1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not 1 <= self.checkpoint_every <= self.iterations:
            raise ValidationError("checkpoint_every must lie in [1, iterations]")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.lr_step < 0 or not 0 < self.lr_gamma <= 1:
            raise ValidationError("lr_step must be >= 0 and lr_gamma in (0, 1]")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})

    def learning_rate_at(self, iteration: int) -> float:
        """Step schedule: multiply by ``lr_gamma`` every ``lr_step`` iterations (0 = constant)."""
        if not self.lr_step:
            return self.learning_rate
        return self.learning_rate * self.lr_gamma ** ((iteration - 1) // self.lr_step)

    def checkpoint_iterations(self) -> list[int]:
        its = list(range(self.checkpoint_every, self.iterations + 1, self.checkpoint_every))
        if not its or its[-1] != self.iterations:
            its.append(self.iterations)
        return its


def _seeds(seed: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence(seed)
    a, b, c = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    return a, b, c


def train(corpus, cfg: RegNetConfig, tcfg: TrainConfig, init: Optional[RegNetParams] = None,
          on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
          on_step: Optional[Callable[[int, float], None]] = None) -> list[Checkpoint]:
    """Run ``tcfg.iterations`` SGD steps; return the checkpoints in order.

    Each step draws a sequence, then one of its consecutive annotated pairs,
    then a perturbed search crop. Mini-batches average gradients.
    """
    usable = [s for s in corpus if len(s.training_pairs()) >= 1]
    if not usable:
        raise ValidationError("corpus has no sequence with two annotated frames")
    init_seed, pick_seed, crop_seed = _seeds(tcfg.seed)
    params = init.copy() if init is not None else init_params(cfg, init_seed)
    params.check_shapes(cfg)
    velocity = params.zeros_like()
    rng = np.random.default_rng(pick_seed)
    sampler = CropSampler(b_shift=tcfg.b_shift, b_scale=tcfg.b_scale, seed=crop_seed)
    pairs = [s.training_pairs() for s in usable]
    marks = set(tcfg.checkpoint_iterations())
    out = []
    for it in range(1, tcfg.iterations + 1):
        grad = None
        total = 0.0
        for _ in range(tcfg.batch_size):
            k = int(rng.integers(len(usable)))
            seq = usable[k]
            i, j = pairs[k][int(rng.integers(len(pairs[k])))]
            target, search, y, _ = crop_pair(seq.frames[i], seq.gt_box(i), seq.frames[j],
                                             seq.gt_box(j), sampler, cfg)
            value, g = backward(params, cfg, target, search, y)
            total += value
            grad = g if grad is None else RegNetParams([a + b for a, b in zip(grad.tensors, g.tensors)])
        if tcfg.batch_size > 1:
            grad = RegNetParams([t / tcfg.batch_size for t in grad.tensors])
        params, velocity = sgd_step(params, grad, velocity, tcfg.learning_rate_at(it), tcfg.momentum)
        if on_step is not None:
            on_step(it, total / tcfg.batch_size)
        if it in marks:
            ckpt = Checkpoint(it, cfg, params.copy())
            out.append(ckpt)
            log.info("checkpoint at iteration %d", it)
            if on_checkpoint is not None:
                on_checkpoint(ckpt)
    return out
