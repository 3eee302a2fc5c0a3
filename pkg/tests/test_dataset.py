import json

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import CLINICAL_COUNTS, clinical_shaped_manifest, write_json
from mvsnet.dataset import (
    VIEW_ORDER,
    ClassLabel,
    ExcludedSubject,
    FoldPlan,
    ImageSet,
    Provenance,
    SubjectRecord,
    ViewKey,
    complete_images,
    complete_or_exclude,
    load_manifest,
    load_original_views,
    make_folds,
    manifest_to_dict,
    mirror_horizontal,
    parse_manifest,
    standardize,
    summarize,
)
from mvsnet.errors import DuplicateSubject, MissingFile, SchemaViolation, TooFewSubjectsInClass, UnreadableImage


def test_view_key_structure():
    assert [k.value for k in VIEW_ORDER] == ["R_v1", "R_v2", "L_v1", "L_v2"]
    for k in VIEW_ORDER:
        assert k.contralateral.contralateral is k
        assert k.contralateral.view == k.view
        assert k.contralateral.eye != k.eye


def test_label_projection():
    assert [c.binary for c in ClassLabel] == [0, 1, 1]
    assert ClassLabel.parse("TIA") is ClassLabel.TIA


# -- manifest -----------------------------------------------------------------


def _doc(**subject):
    entry = {"id": "a", "label": "control", "views": {"R_v1": "a.png"}}
    entry.update(subject)
    return {"schema_version": "1.0", "subjects": [entry]}


def test_manifest_round_trip(tmp_path):
    doc = {"schema_version": "1.0", "subjects": [
        {"id": "a", "label": "stroke", "source": "clinical", "views": {"L_v2": "x/a.png", "R_v1": "x/b.png"}},
        {"id": "b", "label": "tia", "source": "synthetic", "views": {}},
    ]}
    m = load_manifest(write_json(tmp_path / "m.json", doc))
    assert m.subjects[0].label is ClassLabel.STROKE
    assert list(m.subjects[0].views) == [ViewKey.R_V1, ViewKey.L_V2]
    assert m.subjects[0].views[ViewKey.L_V2] == tmp_path / "x/a.png"
    back = manifest_to_dict(m)
    assert back["subjects"][0]["views"] == {"R_v1": "x/b.png", "L_v2": "x/a.png"}
    assert parse_manifest(back, tmp_path).subjects == m.subjects


@pytest.mark.parametrize("doc, field", [
    (_doc(label="migraine"), "subjects/0/label"),
    (_doc(views={"R_v3": "a.png"}), "subjects/0/views/R_v3"),
    (_doc(age=40), "subjects/0/age"),
    ({"subjects": []}, "schema_version"),
    ({"schema_version": "1.0", "subjects": [{"id": "a", "views": {}}]}, "subjects/0/label"),
])
def test_schema_violation_names_field(doc, field):
    with pytest.raises(SchemaViolation) as info:
        parse_manifest(doc)
    assert info.value.field == field


def test_duplicate_and_missing(tmp_path):
    doc = _doc()
    doc["subjects"].append(dict(doc["subjects"][0]))
    with pytest.raises(DuplicateSubject):
        parse_manifest(doc)
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(SchemaViolation):
        load_manifest(tmp_path / "bad.json")


def test_clinical_summary_counts():
    table = summarize(clinical_shaped_manifest())
    assert table.total == 802
    assert table.view_totals == [183, 217, 191, 211]
    assert table.row(ClassLabel.CONTROL) == [109, 120, 110, 117]
    assert [int(p) for p in table.participants] == [121, 73, 26]
    assert "Total" in table.format()


def test_single_view_units_use_every_bound_image(tmp_path):
    m = clinical_shaped_manifest()
    units = [u for s in m.subjects for u in load_original_views(s, loader=lambda p: np.zeros((2, 2, 3)))]
    assert len(units) == 802
    assert len({u.unit_id for u in units}) == 802


# -- images -----------------------------------------------------------------


def bilinear_half_pixel(img, size):
    """Reference resize: sample at (i + 0.5) * scale - 0.5 with edge clamping."""
    h, w = img.shape[:2]

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, size)
    x0, x1, fx = axis(w, size)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


@pytest.mark.parametrize("shape", [(7, 5), (50, 80), (224, 224), (300, 260)])
def test_standardize_matches_reference_bilinear(shape, rng):
    img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
    out = standardize(img, 224)
    ref = bilinear_half_pixel(img.astype(np.float64) / 255.0, 224)
    assert out.shape == (224, 224, 3) and out.dtype == np.float32
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_standardize_scales_by_bit_depth():
    assert standardize(np.full((4, 4, 3), 255, np.uint8), 4).max() == 1.0
    assert standardize(np.full((4, 4, 3), 65535, np.uint16), 4).min() == 1.0
    assert standardize(np.full((4, 4), 32768, np.uint16), 4).shape == (4, 4, 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)),
              elements=st.floats(0, 1, width=32)))
def test_mirror_is_an_exact_involution(img):
    once = mirror_horizontal(img)
    assert np.array_equal(mirror_horizontal(once), img)
    w = img.shape[1]
    for j in range(w):
        assert np.array_equal(once[:, j], img[:, w - 1 - j])


# -- completion -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.sets(st.sampled_from(VIEW_ORDER)), st.integers(0, 2**16))
def test_completion_rules(present, seed):
    r = np.random.default_rng(seed)
    images = {k: r.random((3, 4, 3)).astype(np.float32) for k in present}
    out = complete_images("s", ClassLabel.STROKE, images)
    absent_type = any(
        ViewKey(f"R_{v}") not in present and ViewKey(f"L_{v}") not in present for v in ("v1", "v2")
    )
    if absent_type:
        assert isinstance(out, ExcludedSubject)
        return
    assert isinstance(out, ImageSet)
    for k in VIEW_ORDER:
        if k in present:
            assert out.provenance[k] is Provenance.ORIGINAL
            assert out.images[k] is images[k]
        else:
            assert out.provenance[k] is Provenance.MIRRORED
            assert np.array_equal(out.images[k], images[k.contralateral][:, ::-1])


def test_exclusion_reason_lists_both_types():
    out = complete_images("s", ClassLabel.CONTROL, {})
    assert out.reason == "no contralateral v1; no contralateral v2"


def test_unreadable_image_names_view(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    good = tmp_path / "good.png"
    cv2.imwrite(str(good), np.zeros((8, 8, 3), np.uint8))
    rec = SubjectRecord("s", ClassLabel.TIA, {ViewKey.R_V1: good, ViewKey.L_V2: bad})
    with pytest.raises(UnreadableImage) as info:
        complete_or_exclude(rec)
    assert info.value.view == "L_v2"


def test_complete_from_disk(tiny_cohort):
    _, manifest = tiny_cohort
    out = complete_or_exclude(manifest.subjects[0])
    assert [a.shape for a in out.arrays()] == [(224, 224, 3)] * 4


# -- folds -----------------------------------------------------------------


def _subjects(sizes):
    return [SubjectRecord(f"{c}-{i}", ClassLabel(c), {}) for c, n in enumerate(sizes) for i in range(n)]


def check_plan(subjects, plan, k):
    ids = [s.subject_id for s in subjects]
    assert sorted(plan.assignment) == sorted(ids)
    tests = [set(plan.test_ids(i)) for i in range(k)]
    assert set().union(*tests) == set(ids)
    assert sum(len(t) for t in tests) == len(ids)
    for i in range(k):
        assert not tests[i] & set(plan.train_ids(i))
    for c in ClassLabel:
        per_fold = [sum(1 for s in subjects if s.label is c and plan.assignment[s.subject_id] == i) for i in range(k)]
        assert max(per_fold) - min(per_fold) <= 1
    sizes = plan.fold_sizes()
    assert max(sizes) - min(sizes) <= 1


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 7).flatmap(lambda k: st.tuples(
    st.just(k), st.lists(st.one_of(st.just(0), st.integers(k, 40)), min_size=3, max_size=3), st.integers(0, 2**31))))
def test_fold_properties(args):
    k, sizes, seed = args
    subjects = _subjects(sizes)
    plan = make_folds(subjects, k, seed)
    check_plan(subjects, plan, k)
    assert make_folds(iter(subjects), k, seed) == plan


def test_clinical_fold_sizes():
    plan = make_folds(clinical_shaped_manifest(), 5, 0)
    assert plan.fold_sizes() == [44] * 5


def test_fold_errors_and_io(tmp_path):
    with pytest.raises(TooFewSubjectsInClass):
        make_folds(_subjects([10, 3, 10]), 5)
    with pytest.raises(ValueError):
        make_folds(_subjects([10]), 1)
    plan = make_folds(_subjects([9, 8, 7]), 4, seed=11)
    assert FoldPlan.load(plan.save(tmp_path / "f.json")) == plan
    assert json.loads((tmp_path / "f.json").read_text())["k"] == 4
