"""Building blocks of the patch detector."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import ConfigError, ShapeError

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

# batch-norm running statistics keep 95% of the old value per step
BN_MOMENTUM = 0.05


class _SeluFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        neg = SELU_LAMBDA * SELU_ALPHA * torch.expm1(torch.clamp(x, max=0.0))
        return torch.where(x > 0, SELU_LAMBDA * x, neg)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        slope = torch.where(x > 0, torch.full_like(x, SELU_LAMBDA),
                            SELU_LAMBDA * SELU_ALPHA * torch.exp(torch.clamp(x, max=0.0)))
        return grad * slope


def selu(x):
    """lambda * x for x > 0, lambda * alpha * (exp(x) - 1) otherwise.

    Accepts python floats as well as tensors.
    """
    if isinstance(x, torch.Tensor):
        return _SeluFn.apply(x)
    x = float(x)
    return SELU_LAMBDA * x if x > 0 else SELU_LAMBDA * SELU_ALPHA * math.expm1(x)


class Selu(nn.Module):
    def forward(self, x):
        return _SeluFn.apply(x)


_ACTIVATIONS = {
    "relu": nn.ReLU,
    "selu": Selu,
    "sigmoid": nn.Sigmoid,
    "none": nn.Identity,
}


def activation(name: str) -> nn.Module:
    try:
        return _ACTIVATIONS[name]()
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


def _check_nchw(x, channels=None):
    if x.dim() != 4:
        raise ShapeError(f"expected an (N, C, H, W) feature map, got shape {tuple(x.shape)}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {x.shape[1]}")


class RowLinear(nn.Linear):
    """Linear layer evaluated as one vector-matrix product per row.

    A plain GEMM may block rows differently depending on their position in the
    batch, so identical inputs can differ in the last bit; this keeps every
    row on the same kernel.
    """

    def forward(self, x):
        if x.dim() != 2:
            raise ShapeError(f"expected an (N, features) input, got shape {tuple(x.shape)}")
        w = self.weight.T.expand(x.shape[0], *self.weight.T.shape)
        y = torch.bmm(x.unsqueeze(1), w).squeeze(1)
        return y + self.bias if self.bias is not None else y


class SpatialAttention(nn.Module):
    """Channel-wise max and mean maps -> one same-padded conv -> sigmoid mask."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError("spatial attention kernel must be odd for same padding")
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def mask(self, x):
        _check_nchw(x)
        pooled = torch.cat([x.amax(dim=1, keepdim=True), x.mean(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x):
        return x * self.mask(x)


class ChannelAttention(nn.Module):
    """Global max and mean vectors through one shared C -> C/4 -> C stack, summed, sigmoid."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"channel attention needs channels divisible by {reduction}, got {channels}")
        self.channels = channels
        self.fc = nn.Sequential(
            RowLinear(channels, channels // reduction),
            nn.ReLU(),
            RowLinear(channels // reduction, channels),
        )

    def logits(self, x):
        _check_nchw(x, self.channels)
        return self.fc(x.amax(dim=(2, 3))) + self.fc(x.mean(dim=(2, 3)))

    def scale(self, x):
        return torch.sigmoid(self.logits(x))

    def forward(self, x):
        return x * self.scale(x)[:, :, None, None]


class ConvBN(nn.Module):
    def __init__(self, cin, cout, kernel=3, stride=1, act="relu", bn=True):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=not bn)
        self.bn = nn.BatchNorm2d(cout, momentum=BN_MOMENTUM) if bn else nn.Identity()
        self.act = activation(act)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class SeparableConv(nn.Module):
    """Depthwise kxk conv, pointwise 1x1 conv, batch norm, activation."""

    def __init__(self, cin, cout, kernel=3, act="relu", bn=True):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, kernel, padding=kernel // 2, groups=cin, bias=False)
        self.pointwise = nn.Conv2d(cin, cout, 1, bias=not bn)
        self.bn = nn.BatchNorm2d(cout, momentum=BN_MOMENTUM) if bn else nn.Identity()
        self.act = activation(act)

    def forward(self, x):
        return self.act(self.bn(self.pointwise(self.depthwise(x))))


class ResidualSeparableBlock(nn.Module):
    """Two separable convs plus a shortcut.

    Same-size blocks keep the channel count and use the identity shortcut; a
    downsampling block max-pools by 2, doubles the channels and projects the
    shortcut with a strided 1x1 conv. There is no activation after the sum, so a
    block with zeroed convolutions is the identity.
    """

    def __init__(self, cin, cout, downsample=False, kernel=3):
        super().__init__()
        self.downsample = downsample
        self.body = nn.Sequential(
            SeparableConv(cin, cout, kernel, act="relu"),
            SeparableConv(cout, cout, kernel, act="none"),
        )
        self.pool = nn.MaxPool2d(2) if downsample else nn.Identity()
        if downsample or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=2 if downsample else 1, bias=False),
                nn.BatchNorm2d(cout, momentum=BN_MOMENTUM),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        return self.pool(self.body(x)) + self.shortcut(x)
