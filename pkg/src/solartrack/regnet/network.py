"""Two-branch convolutional regression network, forward and reverse mode.

Each branch is a stack of ``conv -> ReLU`` layers (zero padding ``k // 2``).
Branch outputs are flattened and concatenated, then pass through fully
connected ``ReLU`` layers and a linear 4-output head. All arithmetic is
float64 numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DivergedError, ValidationError


@dataclass(frozen=True)
class RegNetConfig:
    crop_size: int = 64
    conv_spec: tuple = ((8, 3, 2), (16, 3, 2), (32, 3, 2))
    fc_widths: tuple = (256, 256)
    output_scale: float = 10.0
    context_factor: float = 2.0
    share_branch_weights: bool = True
    # subtracted from every crop pixel; frames are scaled to [0, 1]
    input_offset: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "conv_spec", tuple(tuple(int(v) for v in c) for c in self.conv_spec))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if self.crop_size < 16:
            raise ValidationError("crop_size must be >= 16")
        stride_product = math.prod(s for _, _, s in self.conv_spec) if self.conv_spec else 1
        if self.crop_size % stride_product:
            raise ValidationError(
                f"crop_size {self.crop_size} not divisible by stride product {stride_product}"
            )
        if any(c < 1 or k < 1 or s < 1 for c, k, s in self.conv_spec):
            raise ValidationError("conv layers need positive channels, kernel and stride")
        if any(w < 1 for w in self.fc_widths):
            raise ValidationError("fully connected widths must be positive")
        if not math.isfinite(self.input_offset):
            raise ValidationError("input_offset must be finite")
        if self.output_scale <= 0 or self.context_factor <= 0:
            raise ValidationError("output_scale and context_factor must be positive")

    @classmethod
    def paper_scale(cls) -> "RegNetConfig":
        """Five convolution layers and three 4096-wide layers. Not exercised by tests."""
        return cls(
            crop_size=224,
            conv_spec=((96, 11, 4), (256, 5, 2), (384, 3, 2), (384, 3, 1), (256, 3, 2)),
            fc_widths=(4096, 4096, 4096),
        )

    @property
    def n_branches(self) -> int:
        return 1 if self.share_branch_weights else 2

    def feature_shape(self) -> tuple[int, int, int]:
        """Shape ``(C, H, W)`` of one branch's final feature map."""
        c, size = 1, self.crop_size
        for out_c, k, s in self.conv_spec:
            size = (size + 2 * (k // 2) - k) // s + 1
            c = out_c
        return c, size, size

    def param_shapes(self) -> list[tuple[int, ...]]:
        """Canonical parameter order: branch convs (W, b)..., then fc (W, b)..., head last."""
        shapes = []
        for _ in range(self.n_branches):
            in_c = 1
            for out_c, k, _s in self.conv_spec:
                shapes += [(out_c, in_c, k, k), (out_c,)]
                in_c = out_c
        width = 2 * math.prod(self.feature_shape())
        for w in (*self.fc_widths, 4):
            shapes += [(w, width), (w,)]
            width = w
        return shapes

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RegNetConfig":
        d = json.loads(text)
        return cls(**d)


@dataclass
class RegNetParams:
    tensors: list = field(default_factory=list)

    def copy(self) -> "RegNetParams":
        return RegNetParams([t.copy() for t in self.tensors])

    def zeros_like(self) -> "RegNetParams":
        return RegNetParams([np.zeros_like(t) for t in self.tensors])

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors])

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors)

    def check_shapes(self, cfg: RegNetConfig):
        expected = cfg.param_shapes()
        got = [t.shape for t in self.tensors]
        if got != expected:
            raise ValidationError(f"parameter shapes {got} do not match config {expected}")


def identity_target(cfg: RegNetConfig) -> np.ndarray:
    """Scaled crop coordinates of an unmoved box: the central ``1/k`` of the crop."""
    lo = 0.5 - 0.5 / cfg.context_factor
    hi = 0.5 + 0.5 / cfg.context_factor
    return cfg.output_scale * np.array([lo, lo, hi, hi])


def init_params(cfg: RegNetConfig, seed: int) -> RegNetParams:
    """He-normal weights and zero biases; the head bias starts at the unmoved box."""
    rng = np.random.default_rng(seed)
    tensors = []
    shapes = cfg.param_shapes()
    for i, shape in enumerate(shapes):
        if len(shape) == 1:
            tensors.append(np.zeros(shape))
            continue
        fan_in = math.prod(shape[1:])
        std = math.sqrt(2.0 / fan_in)
        if i == len(shapes) - 2:
            std = math.sqrt(1.0 / fan_in)
        tensors.append(rng.normal(0.0, std, size=shape))
    tensors[-1] = identity_target(cfg)
    return RegNetParams(tensors)


def zero_params(cfg: RegNetConfig) -> RegNetParams:
    return RegNetParams([np.zeros(s) for s in cfg.param_shapes()])


def _im2col(x: np.ndarray, k: int, s: int) -> tuple[np.ndarray, int, int]:
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    c, ho, wo = win.shape[:3]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    c, h, w = x_shape
    p = k // 2
    dxp = np.zeros((c, h + 2 * p, w + 2 * p))
    d = dcols.reshape(ho, wo, c, k, k).transpose(2, 0, 1, 3, 4)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += d[:, :, :, i, j]
    return dxp[:, p:p + h, p:p + w]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    """Single convolution layer on a ``(C, H, W)`` input (no activation)."""
    out_c, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, stride)
    y = cols @ weight.reshape(out_c, -1).T + bias
    return y.T.reshape(out_c, ho, wo)


def _branch_forward(x, tensors, cfg):
    cache = []
    for li, (_out_c, k, s) in enumerate(cfg.conv_spec):
        w, b = tensors[2 * li], tensors[2 * li + 1]
        cols, ho, wo = _im2col(x, k, s)
        z = (cols @ w.reshape(w.shape[0], -1).T + b).T.reshape(w.shape[0], ho, wo)
        a = np.maximum(z, 0.0)
        cache.append((x.shape, cols, ho, wo, z))
        x = a
    return x, cache


def _branch_backward(da, tensors, cfg, cache):
    grads = [None] * (2 * len(cfg.conv_spec))
    for li in range(len(cfg.conv_spec) - 1, -1, -1):
        _out_c, k, s = cfg.conv_spec[li]
        w = tensors[2 * li]
        x_shape, cols, ho, wo, z = cache[li]
        dz = da * (z > 0.0)
        dz_flat = dz.reshape(w.shape[0], -1)  # (out, ho*wo)
        grads[2 * li] = (dz_flat @ cols).reshape(w.shape)
        grads[2 * li + 1] = dz_flat.sum(axis=1)
        if li > 0:
            dcols = dz_flat.T @ w.reshape(w.shape[0], -1)
            da = _col2im(dcols, x_shape, k, s, ho, wo)
    return grads


def _split(params: RegNetParams, cfg: RegNetConfig):
    nconv = 2 * len(cfg.conv_spec)
    t = params.tensors
    if cfg.share_branch_weights:
        return t[:nconv], t[:nconv], t[nconv:]
    return t[:nconv], t[nconv:2 * nconv], t[2 * nconv:]


def _check_crops(cfg, target, search):
    shape = (cfg.crop_size, cfg.crop_size)
    if np.shape(target) != shape or np.shape(search) != shape:
        raise ValidationError(
            f"crops must be {shape}, got {np.shape(target)} and {np.shape(search)}"
        )


def forward_cached(params: RegNetParams, cfg: RegNetConfig, target: np.ndarray, search: np.ndarray):
    _check_crops(cfg, target, search)
    conv_t, conv_s, fc = _split(params, cfg)
    off = cfg.input_offset
    ft, cache_t = _branch_forward(np.asarray(target, dtype=np.float64)[None] - off, conv_t, cfg)
    fs, cache_s = _branch_forward(np.asarray(search, dtype=np.float64)[None] - off, conv_s, cfg)
    h = np.concatenate([ft.ravel(), fs.ravel()])
    fc_cache = []
    n_fc = len(fc) // 2
    for i in range(n_fc):
        w, b = fc[2 * i], fc[2 * i + 1]
        z = w @ h + b
        fc_cache.append((h, z))
        h = np.maximum(z, 0.0) if i < n_fc - 1 else z
    cache = (cache_t, cache_s, fc_cache, ft.shape)
    return h, cache


def forward(params: RegNetParams, cfg: RegNetConfig, target: np.ndarray, search: np.ndarray) -> np.ndarray:
    """Predicted box ``(x1, y1, x2, y2)`` in scaled search-crop coordinates."""
    return forward_cached(params, cfg, target, search)[0]


def loss(pred, target) -> float:
    """L1 distance between predicted and target box vectors."""
    return float(np.sum(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))))


def backward(params: RegNetParams, cfg: RegNetConfig, target_crop: np.ndarray,
             search_crop: np.ndarray, y: np.ndarray) -> tuple[float, RegNetParams]:
    """Loss and its exact gradient with respect to every parameter.

    The L1 subgradient at zero residual and the ReLU subgradient at zero are both 0.
    """
    out, (cache_t, cache_s, fc_cache, fshape) = forward_cached(params, cfg, target_crop, search_crop)
    y = np.asarray(y, dtype=np.float64)
    value = loss(out, y)
    dh = np.sign(out - y)
    conv_t, conv_s, fc = _split(params, cfg)
    n_fc = len(fc) // 2
    fc_grads = [None] * len(fc)
    for i in range(n_fc - 1, -1, -1):
        w = fc[2 * i]
        h_in, z = fc_cache[i]
        dz = dh if i == n_fc - 1 else dh * (z > 0.0)
        fc_grads[2 * i] = np.outer(dz, h_in)
        fc_grads[2 * i + 1] = dz
        dh = w.T @ dz
    half = dh.size // 2
    g_t = _branch_backward(dh[:half].reshape(fshape), conv_t, cfg, cache_t)
    g_s = _branch_backward(dh[half:].reshape(fshape), conv_s, cfg, cache_s)
    if cfg.share_branch_weights:
        conv_grads = [a + b for a, b in zip(g_t, g_s)]
    else:
        conv_grads = g_t + g_s
    return value, RegNetParams(conv_grads + fc_grads)


def sgd_step(params: RegNetParams, grad: RegNetParams, velocity: RegNetParams,
             lr: float, momentum: float) -> tuple[RegNetParams, RegNetParams]:
    """Momentum SGD: ``v <- momentum * v - lr * grad``; ``params <- params + v``."""
    if not grad.all_finite():
        raise DivergedError("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        new_v = [momentum * v - lr * g for v, g in zip(velocity.tensors, grad.tensors)]
        new_p = [p + v for p, v in zip(params.tensors, new_v)]
    out = RegNetParams(new_p)
    if not out.all_finite():
        raise DivergedError("non-finite parameters after update")
    return out, RegNetParams(new_v)
