import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsnet.augment import AffineTransform, AugmentationPolicy, AugmentedUnit, augment_to_target, sample_transform
from mvsnet.dataset import ClassLabel, mirror_horizontal
from mvsnet.errors import EmptyClass


@dataclass
class Unit:
    subject_id: str
    label: ClassLabel
    image: np.ndarray

    augmented = False

    @property
    def unit_id(self):
        return self.subject_id

    @property
    def view_keys(self):
        return ("a", "b")

    def arrays(self):
        return [self.image, self.image[::-1].copy()]


def units(sizes, side=8, seed=0):
    rng = np.random.default_rng(seed)
    return [Unit(f"{c}-{i}", ClassLabel(c), rng.random((side, side, 3)).astype(np.float32))
            for c, n in enumerate(sizes) for i in range(n)]


def test_identity_is_a_copy():
    img = np.random.default_rng(1).random((9, 7, 3)).astype(np.float32)
    out = AffineTransform()(img)
    assert out is not img and np.array_equal(out, img)


def test_flip_equals_mirror():
    img = np.random.default_rng(2).random((10, 13, 3)).astype(np.float32)
    np.testing.assert_allclose(AffineTransform(flip=True)(img), mirror_horizontal(img), atol=1e-6)


def test_quarter_turn_on_square_image():
    img = np.random.default_rng(3).random((11, 11, 3)).astype(np.float32)
    out = AffineTransform(rotation_deg=90)(img)
    # +90 degrees in image coordinates (y down) is a clockwise quarter turn
    np.testing.assert_allclose(out, np.rot90(img, k=-1), atol=1e-5)


def test_shift_moves_pixels():
    img = np.zeros((20, 20, 1), np.float32)
    img[5, 5] = 1.0
    out = AffineTransform(shift_x=0.1, shift_y=0.2)(img)
    assert out[9, 7] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(-20, 20), st.floats(-180, 180),
       st.floats(0.8, 1.2), st.floats(0.8, 1.2), st.booleans())
def test_matrix_composition(sx, sy, shear, rot, zx, zy, flip):
    t = AffineTransform(sx, sy, shear, rot, zx, zy, flip)
    h, w = 30, 40
    m = t.matrix(h, w)
    # map a point by hand: centre, flip, zoom, shear, rotate, un-centre, shift
    px, py = 3.0, 17.0
    cx, cy = (w - 1) / 2, (h - 1) / 2
    x, y = px - cx, py - cy
    if flip:
        x = -x
    x, y = x * zx, y * zy
    x = x + math.tan(math.radians(shear)) * y
    a = math.radians(rot)
    x, y = math.cos(a) * x - math.sin(a) * y, math.sin(a) * x + math.cos(a) * y
    expected = (x + cx + sx * w, y + cy + sy * h)
    got = m @ np.array([px, py, 1.0])
    np.testing.assert_allclose(got, expected, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 180), st.floats(0, 180))
def test_sampled_parameters_respect_policy(seed, a, b):
    lo, hi = sorted((a, b))
    policy = AugmentationPolicy(rotation_deg_range=(lo, hi))
    t = sample_transform(policy, np.random.default_rng(seed))
    assert abs(t.shift_x) <= 0.1 and abs(t.shift_y) <= 0.1
    assert abs(t.shear_deg) <= 10
    assert lo - 1e-9 <= abs(t.rotation_deg) <= hi + 1e-9
    assert 0.9 <= t.zoom_x <= 1.1 and 0.9 <= t.zoom_y <= 1.1
    assert not sample_transform(AugmentationPolicy.identity(), np.random.default_rng(seed)).flip


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=3, max_size=3), st.integers(0, 20), st.integers(0, 2**31))
def test_augmentation_hits_target_exactly(sizes, extra, seed):
    target = max(sizes) + extra
    out = augment_to_target(units(sizes), AugmentationPolicy(), target, seed)
    counts = Counter(int(u.label) for u in out)
    assert counts == {0: target, 1: target, 2: target}
    originals = [u for u in out if not u.augmented]
    assert len(originals) == sum(sizes)
    for u in out:
        if u.augmented:
            assert u.source.label is u.label
            assert u.unit_id.startswith(u.source.unit_id + "#aug")


def test_binary_key_and_balance_to_largest():
    us = units([3, 4, 2])
    out = augment_to_target(us, AugmentationPolicy(), None, 0, key=lambda u: u.label.binary, classes=[0, 1])
    assert Counter(u.label.binary for u in out) == {0: 6, 1: 6}


def test_augmentation_errors():
    with pytest.raises(EmptyClass):
        augment_to_target(units([3, 0, 2]), AugmentationPolicy(), 5, 0, classes=[0, 1, 2])
    with pytest.raises(ValueError):
        augment_to_target(units([6, 2, 2]), AugmentationPolicy(), 5, 0)
    with pytest.raises(ValueError):
        AugmentationPolicy(rotation_deg_range=(30, 10))


def test_augmented_units_are_lazy_and_reproducible():
    us = units([2, 2, 2], side=16)
    a = augment_to_target(us, AugmentationPolicy(), 5, seed=4)
    b = augment_to_target(us, AugmentationPolicy(), 5, seed=4)
    for x, y in zip(a, b):
        for p, q in zip(x.arrays(), y.arrays()):
            assert np.array_equal(p, q)
    aug = next(u for u in a if isinstance(u, AugmentedUnit))
    assert len(aug.transforms) == 2 and aug.transforms[0] != aug.transforms[1]
    tied = augment_to_target(us, AugmentationPolicy(per_view_independent=False), 5, seed=4)
    aug = next(u for u in tied if isinstance(u, AugmentedUnit))
    assert aug.transforms[0] == aug.transforms[1]
