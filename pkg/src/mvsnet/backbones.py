"""Convolutional bodies used as per-view feature extractors.

Each body maps ``(N, 3, H, W)`` to a feature map with ``d_view`` channels;
global average pooling is applied by the model. The standard bodies follow
the layer layout of the Keras application models without their top, which
is what the reference parameter counts were taken from: ResNet50 keeps a
bias on every convolution, Inception-v3 uses batch norm without a scale
term, and BiT-R50x1 uses weight-standardised convolutions with group norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F

KERAS_BN_EPS = 1.001e-5


def _bn(c, eps=KERAS_BN_EPS):
    return nn.BatchNorm2d(c, eps=eps)


class BiasOnlyBatchNorm(nn.BatchNorm2d):
    """Batch norm with a learned shift but no learned scale."""

    def __init__(self, num_features, eps=1e-3):
        super().__init__(num_features, eps=eps, affine=False)
        self.beta = nn.Parameter(torch.zeros(num_features))

    def forward(self, x):
        return super().forward(x) + self.beta.view(1, -1, 1, 1)


class SeparableConv2d(nn.Module):
    def __init__(self, cin, cout, kernel_size=3):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, kernel_size, padding=kernel_size // 2, groups=cin, bias=False)
        self.pointwise = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class StdConv2d(nn.Conv2d):
    """Convolution with per-filter weight standardisation."""

    def __init__(self, *args, eps=1e-8, **kwargs):
        kwargs.setdefault("bias", False)
        super().__init__(*args, **kwargs)
        self.eps = eps

    def forward(self, x):
        w = self.weight
        w = (w - w.mean(dim=(1, 2, 3), keepdim=True)) / torch.sqrt(
            w.var(dim=(1, 2, 3), keepdim=True, unbiased=False) + self.eps
        )
        return F.conv2d(x, w, self.bias, self.stride, self.padding, self.dilation, self.groups)


# -- tinyconv -----------------------------------------------------------------


def tinyconv(d_view: int = 48) -> nn.Module:
    """Three conv-BN-ReLU-maxpool blocks; 224x224 input gives a 7x7 map."""
    return nn.Sequential(
        nn.Conv2d(3, 8, 5, stride=4, padding=2, bias=False),
        nn.BatchNorm2d(8),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
        nn.Conv2d(8, 16, 3, padding=1, bias=False),
        nn.BatchNorm2d(16),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
        nn.Conv2d(16, d_view, 3, padding=1, bias=False),
        nn.BatchNorm2d(d_view),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


def tinyconv_parameter_count(d_view: int = 48) -> tuple[int, int]:
    """(trainable, non_trainable) for :func:`tinyconv`, counted by hand."""
    convs = 3 * 8 * 5 * 5 + 8 * 16 * 3 * 3 + 16 * d_view * 3 * 3
    bn_channels = 8 + 16 + d_view
    return convs + 2 * bn_channels, 2 * bn_channels


# -- VGG19 -----------------------------------------------------------------


def vgg19() -> nn.Module:
    layers: list[nn.Module] = []
    cin = 3
    for cout, reps in ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4)):
        for _ in range(reps):
            layers += [nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True)]
            cin = cout
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


# -- ResNet50 -----------------------------------------------------------------


class _Bottleneck(nn.Module):
    def __init__(self, cin, filters, stride=1, conv_shortcut=False):
        super().__init__()
        cout = 4 * filters
        self.shortcut = (
            nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride), _bn(cout)) if conv_shortcut else None
        )
        self.body = nn.Sequential(
            nn.Conv2d(cin, filters, 1, stride=stride), _bn(filters), nn.ReLU(inplace=True),
            nn.Conv2d(filters, filters, 3, padding=1), _bn(filters), nn.ReLU(inplace=True),
            nn.Conv2d(filters, cout, 1), _bn(cout),
        )

    def forward(self, x):
        s = x if self.shortcut is None else self.shortcut(x)
        return F.relu(self.body(x) + s)


def resnet50() -> nn.Module:
    layers: list[nn.Module] = [
        nn.Conv2d(3, 64, 7, stride=2, padding=3), _bn(64), nn.ReLU(inplace=True),
        nn.MaxPool2d(3, stride=2, padding=1),
    ]
    cin = 64
    for filters, blocks, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        layers.append(_Bottleneck(cin, filters, stride, conv_shortcut=True))
        cin = 4 * filters
        layers += [_Bottleneck(cin, filters) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


# -- DenseNet-121 -----------------------------------------------------------------


class _DenseLayer(nn.Module):
    def __init__(self, cin, growth=32):
        super().__init__()
        self.body = nn.Sequential(
            _bn(cin), nn.ReLU(inplace=True), nn.Conv2d(cin, 4 * growth, 1, bias=False),
            _bn(4 * growth), nn.ReLU(inplace=True), nn.Conv2d(4 * growth, growth, 3, padding=1, bias=False),
        )

    def forward(self, x):
        return torch.cat([x, self.body(x)], dim=1)


def densenet121() -> nn.Module:
    layers: list[nn.Module] = [
        nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False), _bn(64), nn.ReLU(inplace=True),
        nn.MaxPool2d(3, stride=2, padding=1),
    ]
    c = 64
    blocks = (6, 12, 24, 16)
    for i, n in enumerate(blocks):
        for _ in range(n):
            layers.append(_DenseLayer(c))
            c += 32
        if i < len(blocks) - 1:
            layers += [_bn(c), nn.ReLU(inplace=True), nn.Conv2d(c, c // 2, 1, bias=False), nn.AvgPool2d(2)]
            c //= 2
    layers += [_bn(c), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


# -- Inception-v3 -----------------------------------------------------------------


def _cbn(cin, cout, kernel, stride=1, padding=0):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=padding, bias=False),
        BiasOnlyBatchNorm(cout),
        nn.ReLU(inplace=True),
    )


def _same(kernel):
    if isinstance(kernel, int):
        return kernel // 2
    return (kernel[0] // 2, kernel[1] // 2)


class _Branches(nn.Module):
    """Runs parallel branches and concatenates them along channels."""

    def __init__(self, *branches):
        super().__init__()
        self.branches = nn.ModuleList(branches)

    def forward(self, x):
        outs = []
        for b in self.branches:
            y = b(x)
            outs.extend(y if isinstance(y, list) else [y])
        return torch.cat(outs, dim=1)


class _Fork(nn.Module):
    """A stem followed by two sibling convolutions, both returned."""

    def __init__(self, stem, a, b):
        super().__init__()
        self.stem, self.a, self.b = stem, a, b

    def forward(self, x):
        x = self.stem(x)
        return [self.a(x), self.b(x)]


def _seq(cin, spec):
    mods = []
    for cout, kernel in spec:
        mods.append(_cbn(cin, cout, kernel, padding=_same(kernel)))
        cin = cout
    return nn.Sequential(*mods)


def _pool_branch(cin, cout):
    return nn.Sequential(nn.AvgPool2d(3, stride=1, padding=1, count_include_pad=False), _cbn(cin, cout, 1))


def inception_v3() -> nn.Module:
    layers: list[nn.Module] = [
        _cbn(3, 32, 3, stride=2), _cbn(32, 32, 3), _cbn(32, 64, 3, padding=1), nn.MaxPool2d(3, 2),
        _cbn(64, 80, 1), _cbn(80, 192, 3), nn.MaxPool2d(3, 2),
    ]
    c = 192
    for pool_c in (32, 64, 64):
        layers.append(_Branches(
            _cbn(c, 64, 1),
            _seq(c, [(48, 1), (64, 5)]),
            _seq(c, [(64, 1), (96, 3), (96, 3)]),
            _pool_branch(c, pool_c),
        ))
        c = 64 + 64 + 96 + pool_c
    layers.append(_Branches(
        _cbn(c, 384, 3, stride=2),
        nn.Sequential(_seq(c, [(64, 1), (96, 3)]), _cbn(96, 96, 3, stride=2)),
        nn.MaxPool2d(3, 2),
    ))
    c = 384 + 96 + c
    for mid in (128, 160, 160, 192):
        layers.append(_Branches(
            _cbn(c, 192, 1),
            _seq(c, [(mid, 1), (mid, (1, 7)), (192, (7, 1))]),
            _seq(c, [(mid, 1), (mid, (7, 1)), (mid, (1, 7)), (mid, (7, 1)), (192, (1, 7))]),
            _pool_branch(c, 192),
        ))
        c = 768
    layers.append(_Branches(
        nn.Sequential(_cbn(c, 192, 1), _cbn(192, 320, 3, stride=2)),
        nn.Sequential(_seq(c, [(192, 1), (192, (1, 7)), (192, (7, 1))]), _cbn(192, 192, 3, stride=2)),
        nn.MaxPool2d(3, 2),
    ))
    c = 320 + 192 + c
    for _ in range(2):
        layers.append(_Branches(
            _cbn(c, 320, 1),
            _Fork(_cbn(c, 384, 1), _cbn(384, 384, (1, 3), padding=(0, 1)), _cbn(384, 384, (3, 1), padding=(1, 0))),
            _Fork(_seq(c, [(448, 1), (384, 3)]), _cbn(384, 384, (1, 3), padding=(0, 1)),
                  _cbn(384, 384, (3, 1), padding=(1, 0))),
            _pool_branch(c, 192),
        ))
        c = 320 + 768 + 768 + 192
    return nn.Sequential(*layers)


# -- Xception -----------------------------------------------------------------


class _XBlock(nn.Module):
    def __init__(self, cin, widths, residual="conv", pre_relu=True):
        super().__init__()
        mods: list[nn.Module] = []
        c = cin
        for i, w in enumerate(widths):
            if i > 0 or pre_relu:
                mods.append(nn.ReLU())
            mods += [SeparableConv2d(c, w), _bn(w, eps=1e-3)]
            c = w
        if residual == "conv":
            mods.append(nn.MaxPool2d(3, stride=2, padding=1))
            self.shortcut = nn.Sequential(nn.Conv2d(cin, c, 1, stride=2, bias=False), _bn(c, eps=1e-3))
        else:
            self.shortcut = nn.Identity()
        self.body = nn.Sequential(*mods)

    def forward(self, x):
        return self.body(x) + self.shortcut(x)


def xception() -> nn.Module:
    layers: list[nn.Module] = [
        nn.Conv2d(3, 32, 3, stride=2, bias=False), _bn(32, eps=1e-3), nn.ReLU(inplace=True),
        nn.Conv2d(32, 64, 3, bias=False), _bn(64, eps=1e-3), nn.ReLU(inplace=True),
        _XBlock(64, (128, 128), pre_relu=False),
        _XBlock(128, (256, 256)),
        _XBlock(256, (728, 728)),
    ]
    layers += [_XBlock(728, (728, 728, 728), residual="identity") for _ in range(8)]
    layers += [
        _XBlock(728, (728, 1024)),
        SeparableConv2d(1024, 1536), _bn(1536, eps=1e-3), nn.ReLU(inplace=True),
        SeparableConv2d(1536, 2048), _bn(2048, eps=1e-3), nn.ReLU(inplace=True),
    ]
    return nn.Sequential(*layers)


# -- BiT-M R50x1 -----------------------------------------------------------------


class _PreActBottleneck(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        mid = cout // 4
        self.norm1 = nn.GroupNorm(32, cin)
        self.downsample = StdConv2d(cin, cout, 1, stride=stride) if (cin != cout or stride != 1) else None
        self.conv1 = StdConv2d(cin, mid, 1)
        self.norm2 = nn.GroupNorm(32, mid)
        self.conv2 = StdConv2d(mid, mid, 3, stride=stride, padding=1)
        self.norm3 = nn.GroupNorm(32, mid)
        self.conv3 = StdConv2d(mid, cout, 1)

    def forward(self, x):
        pre = F.relu(self.norm1(x))
        shortcut = x if self.downsample is None else self.downsample(pre)
        x = self.conv1(pre)
        x = self.conv2(F.relu(self.norm2(x)))
        x = self.conv3(F.relu(self.norm3(x)))
        return x + shortcut


def bit_r50x1() -> nn.Module:
    layers: list[nn.Module] = [StdConv2d(3, 64, 7, stride=2, padding=3), nn.MaxPool2d(3, stride=2, padding=1)]
    cin = 64
    for cout, blocks, stride in ((256, 3, 1), (512, 4, 2), (1024, 6, 2), (2048, 3, 2)):
        for i in range(blocks):
            layers.append(_PreActBottleneck(cin, cout, stride if i == 0 else 1))
            cin = cout
    layers += [nn.GroupNorm(32, cin), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


# -- registry -----------------------------------------------------------------

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CAFFE_MEAN = (123.68 / 255, 116.779 / 255, 103.939 / 255)
CAFFE_STD = (1 / 255, 1 / 255, 1 / 255)
SIGNED_UNIT = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))


@dataclass(frozen=True)
class BackboneEntry:
    factory: Callable[..., nn.Module]
    d_view: int
    trainable: bool = True
    mean: tuple = (0.0, 0.0, 0.0)
    std: tuple = (1.0, 1.0, 1.0)
    configurable_width: bool = False
    standard: bool = True


REGISTRY: dict[str, BackboneEntry] = {
    "tinyconv": BackboneEntry(tinyconv, 48, configurable_width=True, standard=False),
    "vgg19": BackboneEntry(vgg19, 512, mean=CAFFE_MEAN, std=CAFFE_STD),
    "resnet50": BackboneEntry(resnet50, 2048, mean=CAFFE_MEAN, std=CAFFE_STD),
    "densenet121": BackboneEntry(densenet121, 1024, mean=IMAGENET_MEAN, std=IMAGENET_STD),
    "inception_v3": BackboneEntry(inception_v3, 2048, mean=SIGNED_UNIT[0], std=SIGNED_UNIT[1]),
    "xception": BackboneEntry(xception, 2048, mean=SIGNED_UNIT[0], std=SIGNED_UNIT[1]),
    "bit_r50x1": BackboneEntry(bit_r50x1, 2048, trainable=False, mean=SIGNED_UNIT[0], std=SIGNED_UNIT[1]),
}
