"""Random affine augmentation and class balancing of training units.

Augmented copies are lazy: they keep a reference to their source unit and
the sampled transforms, and warp the pixels each time ``arrays()`` is
called. This keeps memory flat when a training fold is expanded to
thousands of samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import cv2
import numpy as np

from .errors import EmptyClass


@dataclass
class AugmentationPolicy:
    shift_frac: float = 0.10
    shear_deg: float = 10.0
    rotation_deg_range: tuple = (0.0, 180.0)
    zoom_frac: float = 0.10
    allow_flip: bool = True
    per_view_independent: bool = True

    def __post_init__(self):
        lo, hi = (float(v) for v in self.rotation_deg_range)
        if not 0.0 <= lo <= hi <= 180.0:
            raise ValueError("rotation_deg_range must satisfy 0 <= lo <= hi <= 180")
        self.rotation_deg_range = (lo, hi)
        for name in ("shift_frac", "zoom_frac"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.shear_deg < 0 or self.shear_deg >= 90:
            raise ValueError("shear_deg must be in [0, 90)")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(0.0, 0.0, (0.0, 0.0), 0.0, False)


@dataclass(frozen=True)
class AffineTransform:
    """Shift (fraction of size), shear and rotation (degrees), per-axis zoom, optional left-right flip.

    Applied about the image centre in the order flip, zoom, shear, rotation,
    shift; pixels pulled from outside the frame are reflected back in.
    """

    shift_x: float = 0.0
    shift_y: float = 0.0
    shear_deg: float = 0.0
    rotation_deg: float = 0.0
    zoom_x: float = 1.0
    zoom_y: float = 1.0
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return (self.shift_x == 0 and self.shift_y == 0 and self.shear_deg == 0 and self.rotation_deg == 0
                and self.zoom_x == 1 and self.zoom_y == 1 and not self.flip)

    def params(self) -> tuple:
        return (self.shift_x, self.shift_y, self.shear_deg, self.rotation_deg, self.zoom_x, self.zoom_y, self.flip)

    def matrix(self, height: int, width: int) -> np.ndarray:
        """2x3 forward map from input to output pixel coordinates."""
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        flip = np.diag([-1.0 if self.flip else 1.0, 1.0])
        zoom = np.diag([self.zoom_x, self.zoom_y])
        shear = np.array([[1.0, math.tan(math.radians(self.shear_deg))], [0.0, 1.0]])
        t = math.radians(self.rotation_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        a = rot @ shear @ zoom @ flip
        centre = np.array([cx, cy])
        offset = centre + np.array([self.shift_x * width, self.shift_y * height]) - a @ centre
        return np.hstack([a, offset[:, None]])

    def __call__(self, image: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return image.copy()
        h, w = image.shape[:2]
        out = cv2.warpAffine(image, self.matrix(h, w), (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REFLECT_101)
        return out.reshape(image.shape)


def sample_transform(policy: AugmentationPolicy, rng: np.random.Generator) -> AffineTransform:
    # every draw is consumed even for zero ranges so streams stay aligned across policies
    u = rng.uniform(-1.0, 1.0, size=5)
    lo, hi = policy.rotation_deg_range
    angle = rng.uniform(lo, hi)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    flip = bool(rng.random() < 0.5) and policy.allow_flip
    return AffineTransform(
        shift_x=float(u[0] * policy.shift_frac),
        shift_y=float(u[1] * policy.shift_frac),
        shear_deg=float(u[2] * policy.shear_deg),
        rotation_deg=float(sign * angle),
        zoom_x=float(1.0 + u[3] * policy.zoom_frac),
        zoom_y=float(1.0 + u[4] * policy.zoom_frac),
        flip=flip,
    )


@dataclass
class AugmentedUnit:
    source: object
    transforms: tuple
    index: int

    augmented = True

    @property
    def subject_id(self) -> str:
        return self.source.subject_id

    @property
    def label(self):
        return self.source.label

    @property
    def unit_id(self) -> str:
        return f"{self.source.unit_id}#aug{self.index}"

    @property
    def view_keys(self):
        return self.source.view_keys

    def arrays(self) -> list[np.ndarray]:
        return [t(img) for t, img in zip(self.transforms, self.source.arrays())]


def augment_to_target(units: Sequence, policy: AugmentationPolicy, target_per_class: int | None,
                      seed: int, key: Callable = lambda u: int(u.label),
                      classes: Sequence | None = None) -> list:
    """Expand every class to exactly ``target_per_class`` units.

    Originals are kept; the shortfall is filled with augmented copies of
    originals drawn with replacement. ``key`` maps a unit to its class (use
    the binary projection for the two-class task). ``target_per_class=None``
    balances every class to the largest one.
    """
    groups: dict = {}
    for u in units:
        groups.setdefault(key(u), []).append(u)
    expected = sorted(groups) if classes is None else list(classes)
    for c in expected:
        if not groups.get(c):
            raise EmptyClass(f"class {c} has no training units")
    target = max(len(groups[c]) for c in expected) if target_per_class is None else int(target_per_class)

    rng = np.random.default_rng(seed)
    out = []
    for c in expected:
        originals = groups[c]
        if len(originals) > target:
            raise ValueError(f"class {c} already has {len(originals)} units, above the target {target}")
        out.extend(originals)
        for i in range(target - len(originals)):
            src = originals[int(rng.integers(len(originals)))]
            n_views = len(src.view_keys)
            if policy.per_view_independent:
                transforms = tuple(sample_transform(policy, rng) for _ in range(n_views))
            else:
                transforms = (sample_transform(policy, rng),) * n_views
            out.append(AugmentedUnit(src, transforms, i))
    return out
