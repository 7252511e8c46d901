"""The patch classifier, described by a list of :class:`LayerSpec` entries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigError, CorruptionError, ShapeError
from .dct import dct2d
from .layers import (ChannelAttention, ConvBN, ResidualSeparableBlock, RowLinear, SeparableConv, SpatialAttention,
                     activation)

FORMAT_VERSION = "ctforensics-detector/1"

KINDS = ("conv", "depthwise_separable_conv", "batch_norm", "pool", "spatial_attention",
         "channel_attention", "residual_block", "dense", "activation")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    channels_out: int = 0
    stride: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")


def default_layers() -> list[LayerSpec]:
    """Stem convs, spatial attention, four residual separable blocks, channel
    attention and a two-layer head with Selu."""
    return [
        LayerSpec("conv", 3, 32, 1, "relu"),
        LayerSpec("conv", 3, 32, 1, "relu"),
        LayerSpec("spatial_attention", 7),
        LayerSpec("residual_block", 3, 64, 2),
        LayerSpec("residual_block", 3, 64, 1),
        LayerSpec("residual_block", 3, 128, 2),
        LayerSpec("residual_block", 3, 128, 1),
        LayerSpec("channel_attention"),
        LayerSpec("pool", 0),  # kernel 0 = global average
        LayerSpec("dense", 0, 256, 1, "selu"),
        LayerSpec("dense", 0, 2, 1, "softmax"),
    ]


def architecture_violations(layers) -> list[str]:
    """Structural rules for a layer list.

    * a downsampling residual block doubles the channel count, any other
      residual block keeps it;
    * exactly one spatial attention, placed before the first downsampling block;
    * exactly one channel attention, directly after the last of the widest blocks.
    """
    problems = []
    channels = 1
    widths = []  # (index, channels) of convolutional stages
    for i, spec in enumerate(layers):
        if spec.kind == "residual_block":
            expected = channels * 2 if spec.stride == 2 else channels
            if spec.channels_out != expected:
                problems.append(f"layer {i}: residual block with stride {spec.stride} maps {channels} -> "
                                f"{spec.channels_out} channels, expected {expected}")
        if spec.kind in ("conv", "depthwise_separable_conv", "residual_block"):
            channels = spec.channels_out
            widths.append((i, channels))

    spatial = [i for i, s in enumerate(layers) if s.kind == "spatial_attention"]
    channel = [i for i, s in enumerate(layers) if s.kind == "channel_attention"]
    pools = [i for i, s in enumerate(layers) if s.kind == "residual_block" and s.stride == 2]
    if len(spatial) != 1:
        problems.append(f"expected one spatial attention, found {len(spatial)}")
    elif pools and spatial[0] > pools[0]:
        problems.append("spatial attention must precede the first downsampling block")
    if len(channel) != 1:
        problems.append(f"expected one channel attention, found {len(channel)}")
    elif widths:
        widest = max(c for _, c in widths)
        last_widest = max(i for i, c in widths if c == widest)
        between = [s.kind for s in layers[last_widest + 1:channel[0]]]
        if channel[0] < last_widest or any(k not in ("activation", "batch_norm") for k in between):
            problems.append("channel attention must directly follow the widest block")
    return problems


def check_architecture(layers):
    problems = architecture_violations(layers)
    if problems:
        raise ConfigError("; ".join(problems))


def _lecun_init(module):
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        fan_in = module.weight[0].numel()
        nn.init.trunc_normal_(module.weight, std=1.0 / math.sqrt(fan_in), a=-2.0 / math.sqrt(fan_in),
                              b=2.0 / math.sqrt(fan_in))
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def _build_layers(layers, patch_size: int) -> nn.Sequential:
    modules = []
    channels, size, flat = 1, patch_size, None
    for spec in layers:
        if spec.kind == "conv":
            modules.append(ConvBN(channels, spec.channels_out, spec.kernel, spec.stride, spec.activation))
            channels = spec.channels_out
            size //= spec.stride
        elif spec.kind == "depthwise_separable_conv":
            modules.append(SeparableConv(channels, spec.channels_out, spec.kernel, spec.activation))
            channels = spec.channels_out
        elif spec.kind == "residual_block":
            modules.append(ResidualSeparableBlock(channels, spec.channels_out, spec.stride == 2, spec.kernel or 3))
            channels = spec.channels_out
            size //= spec.stride
        elif spec.kind == "spatial_attention":
            modules.append(SpatialAttention(spec.kernel or 7))
        elif spec.kind == "channel_attention":
            modules.append(ChannelAttention(channels))
        elif spec.kind == "batch_norm":
            modules.append(nn.BatchNorm2d(channels))
        elif spec.kind == "pool":
            if spec.kernel:
                modules.append(nn.MaxPool2d(spec.kernel))
                size //= spec.kernel
            else:
                modules.append(nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten()))
                flat = channels
        elif spec.kind == "dense":
            if flat is None:
                modules.append(nn.Flatten())
                flat = channels * size * size
            modules.append(RowLinear(flat, spec.channels_out))
            flat = spec.channels_out
            # softmax is folded into the loss / predict_proba
            if spec.activation not in ("softmax", "none"):
                modules.append(activation(spec.activation))
        elif spec.kind == "activation":
            modules.append(activation(spec.activation))
    if flat != 2:
        raise ConfigError("the layer list must end in a 2-unit dense layer")
    return nn.Sequential(*modules)


class PatchDetector(nn.Module):
    """Maps (N, 1, S, S) patches to (N, 2) logits; class 1 is "fake"."""

    def __init__(self, layers=None, patch_size: int = 32, feature_mode: str = "raw", seed: Optional[int] = 0):
        super().__init__()
        layers = list(layers) if layers is not None else default_layers()
        if feature_mode not in ("raw", "dct"):
            raise ConfigError(f"unknown feature mode {feature_mode!r}")
        self.layers = layers
        self.patch_size = patch_size
        self.feature_mode = feature_mode
        self.seed = seed
        self.version = FORMAT_VERSION

        # default layer constructors draw from the global generator too
        gen_state = torch.random.get_rng_state()
        try:
            if seed is not None:
                torch.manual_seed(seed)
            self.net = _build_layers(layers, patch_size)
            self.net.apply(_lecun_init)
        finally:
            if seed is not None:
                torch.random.set_rng_state(gen_state)
        # NHWC runs the depthwise convolutions about twice as fast on CPU
        self.to(memory_format=torch.channels_last)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != self.patch_size or x.shape[3] != self.patch_size:
            raise ShapeError(f"expected (N, 1, {self.patch_size}, {self.patch_size}) input, got {tuple(x.shape)}")
        return self.net(x.contiguous(memory_format=torch.channels_last))

    def weight_modules(self):
        """Conv and dense layers whose weights carry the L2 penalty."""
        return [m for m in self.modules() if isinstance(m, (nn.Conv2d, nn.Linear))]

    def describe(self) -> dict:
        return dict(version=self.version, patch_size=self.patch_size, feature_mode=self.feature_mode,
                    seed=self.seed, layers=[asdict(s) for s in self.layers])


def as_input(batch, patch_size: int = 32, feature_mode: str = "raw") -> torch.Tensor:
    """Accepts (N, S, S), (N, S, S, 1) or (N, 1, S, S) arrays; returns float32 NCHW."""
    arr = np.asarray(batch, dtype=np.float64 if feature_mode == "dct" else np.float32)
    if arr.ndim == 4 and arr.shape[-1] == 1 and arr.shape[1] != 1:
        arr = arr[..., 0]
    elif arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3 or arr.shape[1:] != (patch_size, patch_size):
        raise ShapeError(f"expected patches of {patch_size}x{patch_size}, got array of shape {np.shape(batch)}")
    if feature_mode == "dct":
        arr = dct2d(arr)
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)[:, None])


def check_finite(model: PatchDetector):
    for name, t in model.state_dict().items():
        if t.is_floating_point() and not torch.isfinite(t).all():
            raise CorruptionError(f"non-finite values in parameter {name}")


def predict_proba(model: PatchDetector, batch, batch_size: int = 256) -> np.ndarray:
    """P(fake) per patch, in inference mode (running batch-norm statistics)."""
    check_finite(model)
    x = as_input(batch, model.patch_size, model.feature_mode)
    was_training = model.training
    model.eval()
    out = []
    with torch.inference_mode():
        for start in range(0, len(x), batch_size):
            logits = model(x[start:start + batch_size]).double()
            out.append(torch.softmax(logits, dim=1)[:, 1].numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def forward(batch, params: PatchDetector) -> np.ndarray:
    """(N, 1) column of P(fake)."""
    return predict_proba(params, batch)[:, None]
