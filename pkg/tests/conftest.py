import json
from pathlib import Path

import numpy as np
import pytest

from mvsnet.dataset import VIEW_ORDER, ClassLabel, DatasetManifest, SubjectRecord
from mvsnet.synthetic import SynthSpec, generate_cohort

# images per (class, view) in the clinical cohort, columns in R_v1, R_v2, L_v1, L_v2 order
CLINICAL_COUNTS = {
    ClassLabel.CONTROL: (121, [109, 120, 110, 117]),
    ClassLabel.STROKE: (73, [56, 71, 59, 69]),
    ClassLabel.TIA: (26, [18, 26, 22, 25]),
}


def clinical_shaped_manifest() -> DatasetManifest:
    """Manifest with the clinical cohort's class sizes and per-view image counts (no files)."""
    subjects = []
    for label, (n, per_view) in CLINICAL_COUNTS.items():
        for i in range(n):
            views = {key: Path(f"{label}_{i}_{key.value}.png") for key, c in zip(VIEW_ORDER, per_view) if i < c}
            subjects.append(SubjectRecord(f"{label}-{i:03d}", label, views))
    return DatasetManifest(subjects)


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory):
    """Six subjects per class at 64 px, written once per session."""
    out = tmp_path_factory.mktemp("cohort")
    spec = SynthSpec(subjects_per_class={"control": 6, "stroke": 6, "tia": 6}, image_side=64, seed=3)
    manifest = generate_cohort(spec, out)
    return out, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc))
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
