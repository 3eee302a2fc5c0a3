"""Seeded synthetic four-view cohorts with the class signal split across eyes.

Every view carries one latent bit, drawn as four squares spaced evenly on a
ring inside a fundus-like disc (random start angle): dark for 0, bright for
1. The class depends only on XORs of bits from opposite eyes:

* positive (stroke or TIA) iff ``b(R,v1) != b(L,v1)``
* among positives, TIA iff ``b(R,v2) != b(L,v2)``

Within every class each individual bit is uniform, so a single image says
nothing about its label while the pair of v1 views decides it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    VIEW_ORDER,
    VIEW_TYPES,
    ClassLabel,
    DatasetManifest,
    SubjectRecord,
    ViewKey,
    write_image,
    write_manifest,
)

MARKER_FRACTION = 0.12
DISC_FRACTION = 0.42
MARKER_RADIUS = 0.75  # marker centres sit this many disc radii from the centre
MARKER_COUNT = 4
_FUNDUS_RGB = np.array([0.78, 0.36, 0.14], dtype=np.float64)


@dataclass
class SynthSpec:
    subjects_per_class: dict = field(
        default_factory=lambda: {ClassLabel.CONTROL: 100, ClassLabel.STROKE: 100, ClassLabel.TIA: 100}
    )
    image_side: int = 224
    missing_view_rate: float = 0.0
    marker_contrast: float = 1.0
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.subjects_per_class = {
            (ClassLabel.parse(k) if isinstance(k, str) else ClassLabel(k)): int(v)
            for k, v in self.subjects_per_class.items()
        }
        if not 0.0 <= self.missing_view_rate < 1.0:
            raise ValueError("missing_view_rate must be in [0, 1)")
        if not 0.0 < self.marker_contrast <= 1.0:
            raise ValueError("marker_contrast must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.image_side < 16:
            raise ValueError("image_side must be at least 16")
        if any(n < 0 for n in self.subjects_per_class.values()):
            raise ValueError("subject counts must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subjects_per_class"] = {str(k): v for k, v in self.subjects_per_class.items()}
        return d


def oracle_label(bits: dict) -> ClassLabel:
    """Class implied by the four latent bits (keys: ViewKey or their string values)."""
    b = {ViewKey(k): int(v) for k, v in bits.items()}
    if set(b) != set(VIEW_ORDER):
        raise ValueError("all four view bits are required")
    if b[ViewKey.R_V1] == b[ViewKey.L_V1]:
        return ClassLabel.CONTROL
    return ClassLabel.TIA if b[ViewKey.R_V2] != b[ViewKey.L_V2] else ClassLabel.STROKE


def draw_bits(label: ClassLabel, rng: np.random.Generator) -> dict[ViewKey, int]:
    """Uniformly sample a bit pattern among those whose oracle label is ``label``."""
    r1, r2 = (int(x) for x in rng.integers(0, 2, size=2))
    if label is ClassLabel.CONTROL:
        l1 = r1
        l2 = int(rng.integers(0, 2))
    else:
        l1 = 1 - r1
        l2 = r2 if label is ClassLabel.STROKE else 1 - r2
    return {ViewKey.R_V1: r1, ViewKey.R_V2: r2, ViewKey.L_V1: l1, ViewKey.L_V2: l2}


def subject_stream(seed: int, index: int) -> np.random.Generator:
    # counter-based and keyed per subject: generation order never matters
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def render_view(bit: int, view: str, rng: np.random.Generator, side: int = 224,
                marker_contrast: float = 1.0, noise_sigma: float = 0.02) -> np.ndarray:
    """One synthetic fundus-like view with its marker squares; float RGB in [0, 1]."""
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    c = side / 2.0
    radius = DISC_FRACTION * side
    r = np.hypot(xx - c, yy - c) / radius
    inside = r <= 1.0

    phase = rng.uniform(0, 2 * np.pi, size=4)
    texture = 1.0 + 0.12 * np.sin(xx / (0.03 * side) + phase[0]) * np.sin(yy / (0.04 * side) + phase[1])
    texture += 0.06 * np.sin((xx + yy) / (0.02 * side) + phase[2])
    shade = inside * (1.0 - 0.55 * r**2) * texture

    # optic disc for v1, darker macula for v2; both centred so they carry no position cue
    spot = np.exp(-(r / 0.16) ** 2)
    if view == "v1":
        shade = shade + 0.45 * spot * inside
    else:
        shade = shade * (1.0 - 0.4 * spot)
    img = shade[..., None] * _FUNDUS_RGB

    m = max(2, int(round(MARKER_FRACTION * side)))
    level = 0.96 if bit else 0.04
    start = rng.uniform(0, 2 * np.pi)
    for i in range(MARKER_COUNT):
        angle = start + 2 * np.pi * i / MARKER_COUNT
        ax = int(round(c + MARKER_RADIUS * radius * np.cos(angle) - m / 2.0))
        ay = int(round(c + MARKER_RADIUS * radius * np.sin(angle) - m / 2.0))
        patch = img[ay:ay + m, ax:ax + m]
        img[ay:ay + m, ax:ax + m] = (1.0 - marker_contrast) * patch + marker_contrast * level

    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _drop_views(rate: float, rng: np.random.Generator) -> set[ViewKey]:
    # at most one eye per view type goes missing, so nobody is excluded
    dropped = set()
    for v in VIEW_TYPES:
        if rng.random() < rate:
            eye = "R" if rng.random() < 0.5 else "L"
            dropped.add(ViewKey(f"{eye}_{v}"))
    return dropped


def generate_cohort(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write images, ``manifest.json`` and ``truth.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    subjects = []
    truth = {}
    index = 0
    for label in ClassLabel:
        for _ in range(spec.subjects_per_class.get(label, 0)):
            rng = subject_stream(spec.seed, index)
            sid = f"S{index:04d}"
            bits = draw_bits(label, rng)
            dropped = _drop_views(spec.missing_view_rate, rng)
            views = {}
            for key in VIEW_ORDER:
                image = render_view(bits[key], key.view, rng, spec.image_side,
                                    spec.marker_contrast, spec.noise_sigma)
                if key in dropped:
                    continue
                path = image_dir / f"{sid}_{key.value}.png"
                write_image(path, image)
                views[key] = path
            subjects.append(SubjectRecord(sid, label, views, source="synthetic"))
            truth[sid] = {key.value: bits[key] for key in VIEW_ORDER}
            index += 1

    manifest = DatasetManifest(subjects=subjects, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    (out_dir / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return manifest
