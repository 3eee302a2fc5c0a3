"""The multi-view network: per-view backbone branches, feature concatenation,
and a dense head whose hidden width is one sixth of the fused feature length.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbones import REGISTRY
from .dataset import IMAGE_SIZE
from .errors import PretrainedWeightsUnavailable, ShapeMismatch, UnknownBackbone

WEIGHT_INIT = ("random", "pretrained-imagenet")


@dataclass
class BackboneSpec:
    name: str = "tinyconv"
    d_view: int | None = None
    trainable: bool | None = None
    weight_init: str = "random"
    weights_path: str | None = None

    def resolved(self) -> "BackboneSpec":
        """Fill registry defaults and check the combination is buildable."""
        if self.name not in REGISTRY:
            raise UnknownBackbone(f"unknown backbone {self.name!r}; known: {sorted(REGISTRY)}")
        entry = REGISTRY[self.name]
        d_view = entry.d_view if self.d_view is None else int(self.d_view)
        if d_view < 1:
            raise ValueError("d_view must be positive")
        if d_view != entry.d_view and not entry.configurable_width:
            raise ValueError(f"{self.name} has a fixed feature width of {entry.d_view}")
        if self.weight_init.lower() not in WEIGHT_INIT:
            raise ValueError(f"weight_init must be one of {WEIGHT_INIT}")
        trainable = entry.trainable if self.trainable is None else bool(self.trainable)
        return BackboneSpec(self.name, d_view, trainable, self.weight_init.lower(), self.weights_path)


@dataclass
class HeadConfig:
    num_views: int = 4
    num_classes: int = 2
    dropout_rate: float = 0.4

    def __post_init__(self):
        if self.num_classes not in (2, 3):
            raise ValueError("num_classes must be 2 or 3")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_views < 1:
            raise ValueError("num_views must be positive")

    def hidden_width(self, d_view: int) -> int:
        return hidden_width(d_view, self.num_views)


@dataclass(frozen=True)
class ParameterCount:
    trainable: int
    non_trainable: int

    @property
    def total(self) -> int:
        return self.trainable + self.non_trainable


def hidden_width(d_view: int, num_views: int) -> int:
    return (num_views * d_view) // 6


def head_parameter_count(d_view: int, num_views: int, num_classes: int) -> int:
    """Weights and biases of the hidden and output dense layers."""
    if min(d_view, num_views, num_classes) < 1:
        raise ValueError("all arguments must be >= 1")
    fused = num_views * d_view
    n = fused // 6
    return n * (fused + 1 + num_classes) + num_classes


class MVSNet(nn.Module):
    """Backbone branches, global average pooling, concatenation, dense head.

    ``forward`` takes ``(batch, views, 3, H, W)`` and returns logits;
    :meth:`predict_proba` applies the softmax.
    """

    def __init__(self, backbone: BackboneSpec, head: HeadConfig, shared: bool = True):
        super().__init__()
        self.backbone_spec = backbone.resolved()
        self.head_config = head
        self.shared = shared
        entry = REGISTRY[self.backbone_spec.name]
        d_view = self.backbone_spec.d_view

        def make_body():
            return entry.factory(d_view) if entry.configurable_width else entry.factory()

        n_bodies = 1 if shared else head.num_views
        self.bodies = nn.ModuleList(make_body() for _ in range(n_bodies))
        self.register_buffer("input_mean", torch.tensor(entry.mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(entry.std, dtype=torch.float32).view(1, 3, 1, 1))

        fused = head.num_views * d_view
        n = hidden_width(d_view, head.num_views)
        if n < 1:
            raise ValueError(f"views * d_view = {fused} is too small for a hidden layer of width floor(vd/6)")
        self.hidden = nn.Linear(fused, n)
        self.dropout = nn.Dropout(head.dropout_rate)
        self.output = nn.Linear(n, head.num_classes)

        if not self.backbone_spec.trainable:
            for p in self.bodies.parameters():
                p.requires_grad_(False)

    @property
    def num_views(self) -> int:
        return self.head_config.num_views

    @property
    def num_classes(self) -> int:
        return self.head_config.num_classes

    @property
    def d_view(self) -> int:
        return self.backbone_spec.d_view

    def head_parameters(self) -> list[nn.Parameter]:
        return [*self.hidden.parameters(), *self.output.parameters()]

    def train(self, mode: bool = True):
        super().train(mode)
        if mode and not self.backbone_spec.trainable:
            # frozen bodies keep their normalisation statistics fixed
            self.bodies.eval()
        return self

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Concatenated pooled features, shape ``(batch, views * d_view)``."""
        if x.ndim != 5 or x.shape[1] != self.num_views or x.shape[2] != 3:
            raise ShapeMismatch(f"expected (batch, {self.num_views}, 3, H, W), got {tuple(x.shape)}")
        b, v = x.shape[:2]
        x = (x - self.input_mean.unsqueeze(1)) / self.input_std.unsqueeze(1)
        if self.shared:
            maps = self.bodies[0](x.flatten(0, 1).contiguous(memory_format=torch.channels_last))
            f = F.adaptive_avg_pool2d(maps, 1).flatten(1)
            return f.view(b, v * self.d_view)
        parts = []
        for i, body in enumerate(self.bodies):
            maps = body(x[:, i].contiguous(memory_format=torch.channels_last))
            parts.append(F.adaptive_avg_pool2d(maps, 1).flatten(1))
        return torch.cat(parts, dim=1)

    def head_logits(self, features: torch.Tensor) -> torch.Tensor:
        return self.output(self.dropout(F.relu(self.hidden(features))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head_logits(self.features(x))

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self(x), dim=1)


def _load_pretrained(model: MVSNet, spec: BackboneSpec) -> None:
    if spec.weight_init != "pretrained-imagenet":
        return
    entry = REGISTRY[spec.name]
    if not entry.standard:
        raise PretrainedWeightsUnavailable(f"{spec.name} has no ImageNet weights")
    if not spec.weights_path or not Path(spec.weights_path).is_file():
        raise PretrainedWeightsUnavailable(
            f"ImageNet weights for {spec.name} must be supplied as a local state_dict file (weights_path)"
        )
    state = torch.load(spec.weights_path, map_location="cpu", weights_only=True)
    for body in model.bodies:
        body.load_state_dict(state)


def build(backbone: BackboneSpec, head: HeadConfig, shared: bool = True) -> MVSNet:
    """Multi-view network with one branch per canonical view (V must be 4)."""
    if head.num_views != 4:
        raise ValueError("the multi-view network takes exactly four views")
    model = MVSNet(backbone, head, shared=shared)
    _load_pretrained(model, model.backbone_spec)
    return model.to(memory_format=torch.channels_last)


def build_single_view(backbone: BackboneSpec, num_classes: int, dropout_rate: float = 0.4) -> MVSNet:
    model = MVSNet(backbone, HeadConfig(num_views=1, num_classes=num_classes, dropout_rate=dropout_rate))
    _load_pretrained(model, model.backbone_spec)
    return model.to(memory_format=torch.channels_last)


def batch_tensor(units: Sequence, num_views: int | None = None) -> torch.Tensor:
    """Stack units (anything with ``arrays()``) into ``(batch, views, 3, H, W)`` float32."""
    arrays = [u.arrays() for u in units]
    if not arrays:
        raise ShapeMismatch("empty batch")
    v = len(arrays[0])
    if num_views is not None and v != num_views:
        raise ShapeMismatch(f"model expects {num_views} views per unit, got {v}")
    for views in arrays:
        if len(views) != v:
            raise ShapeMismatch("units in a batch must have the same number of views")
        for img in views:
            if img.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
                raise ShapeMismatch(f"images must be {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {img.shape}")
    data = np.stack([np.stack(views) for views in arrays]).astype(np.float32, copy=False)
    return torch.from_numpy(data).permute(0, 1, 4, 2, 3)


def forward(model: MVSNet, batch: Sequence, mode: str = "eval") -> np.ndarray:
    """Class probabilities ``(batch, C)`` for a list of image sets or single images."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = batch_tensor(batch, model.num_views)
    was_training = model.training
    model.train(mode == "train")
    try:
        with torch.no_grad():
            probs = model.predict_proba(x)
    finally:
        model.train(was_training)
    return probs.double().numpy()


def count_parameters(model: MVSNet) -> ParameterCount:
    """Every weight and bias once, plus normalisation running statistics.

    Running means and variances are counted as non-trainable, as are all
    parameters with ``requires_grad`` switched off.
    """
    trainable = non_trainable = 0
    for p in model.parameters():  # shared tensors are yielded once
        if p.requires_grad:
            trainable += p.numel()
        else:
            non_trainable += p.numel()
    for name, buf in model.named_buffers():
        if name.endswith(("running_mean", "running_var")):
            non_trainable += buf.numel()
    return ParameterCount(trainable, non_trainable)


def body_parameter_count(name: str, d_view: int | None = None) -> ParameterCount:
    """Parameter count of one backbone body (no head), trainable per registry default."""
    spec = BackboneSpec(name, d_view).resolved()
    entry = REGISTRY[name]
    body = entry.factory(spec.d_view) if entry.configurable_width else entry.factory()
    params = sum(p.numel() for p in body.parameters())
    stats = sum(b.numel() for n, b in body.named_buffers() if n.endswith(("running_mean", "running_var")))
    if spec.trainable:
        return ParameterCount(params, stats)
    return ParameterCount(0, params + stats)


# -- checkpoints -----------------------------------------------------------------


def architecture_metadata(model: MVSNet, seed: int | None = None) -> dict:
    counts = count_parameters(model)
    return {
        "backbone": asdict(model.backbone_spec),
        "d_view": model.d_view,
        "num_views": model.num_views,
        "num_classes": model.num_classes,
        "hidden_width": model.hidden.out_features,
        "dropout_rate": model.head_config.dropout_rate,
        "shared_backbone": model.shared,
        "seed": seed,
        "parameters": {"trainable": counts.trainable, "non_trainable": counts.non_trainable, "total": counts.total},
    }


def save_checkpoint(model: MVSNet, path, seed: int | None = None) -> Path:
    """Write ``<path>`` (state dict) and ``<path>.json`` (architecture sidecar)."""
    path = Path(path)
    torch.save(model.state_dict(), path)
    path.with_suffix(".json").write_text(json.dumps(architecture_metadata(model, seed), indent=2) + "\n")
    return path


def rebuild(meta: dict) -> MVSNet:
    spec = BackboneSpec(**{**meta["backbone"], "weight_init": "random"})
    head = HeadConfig(meta["num_views"], meta["num_classes"], meta["dropout_rate"])
    model = MVSNet(spec, head, shared=meta.get("shared_backbone", True))
    return model.to(memory_format=torch.channels_last)


def load_checkpoint(path) -> MVSNet:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    model = rebuild(meta)
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    return model.eval()
