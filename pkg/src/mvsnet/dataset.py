"""Subject manifests, four-view image sets, and patient-wise fold plans.

Images are plain ``numpy`` arrays of shape ``(height, width, 3)``. After
:func:`standardize` they are ``float32`` in ``[0, 1]`` at 224x224.
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import cv2
import jsonschema
import numpy as np

from .errors import (
    DuplicateSubject,
    MissingFile,
    SchemaViolation,
    TooFewSubjectsInClass,
    UnreadableImage,
)

IMAGE_SIZE = 224
SCHEMA_VERSION = "1.0"


class Eye(str, enum.Enum):
    RIGHT = "R"
    LEFT = "L"

    @property
    def other(self) -> "Eye":
        return Eye.LEFT if self is Eye.RIGHT else Eye.RIGHT


class ViewKey(str, enum.Enum):
    """Eye side plus view type; v1 is optic-nerve-head centred, v2 macula centred."""

    R_V1 = "R_v1"
    R_V2 = "R_v2"
    L_V1 = "L_v1"
    L_V2 = "L_v2"

    @property
    def eye(self) -> Eye:
        return Eye(self.value[0])

    @property
    def view(self) -> str:
        return self.value[2:]

    @property
    def contralateral(self) -> "ViewKey":
        return ViewKey(f"{self.eye.other.value}_{self.view}")

    def __str__(self):
        return self.value


VIEW_ORDER = (ViewKey.R_V1, ViewKey.R_V2, ViewKey.L_V1, ViewKey.L_V2)
VIEW_TYPES = ("v1", "v2")


class ClassLabel(enum.IntEnum):
    CONTROL = 0
    STROKE = 1
    TIA = 2

    @property
    def binary(self) -> int:
        """1 for stroke or TIA, 0 for healthy controls."""
        return int(self is not ClassLabel.CONTROL)

    @classmethod
    def parse(cls, name: str) -> "ClassLabel":
        return cls[name.upper()]

    def __str__(self):
        return self.name.lower()


DISPLAY_NAMES = {ClassLabel.CONTROL: "Control", ClassLabel.STROKE: "Stroke", ClassLabel.TIA: "TIA"}


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    MIRRORED = "mirrored-from-contralateral"


@dataclass
class SubjectRecord:
    subject_id: str
    label: ClassLabel
    views: dict[ViewKey, Path] = field(default_factory=dict)
    source: str = "clinical"


@dataclass
class ImageSet:
    """The four standardized views of one subject, in canonical order."""

    subject_id: str
    label: ClassLabel
    images: dict[ViewKey, np.ndarray]
    provenance: dict[ViewKey, Provenance]

    @property
    def unit_id(self) -> str:
        return self.subject_id

    @property
    def view_keys(self) -> tuple[ViewKey, ...]:
        return VIEW_ORDER

    def arrays(self) -> list[np.ndarray]:
        return [self.images[key] for key in VIEW_ORDER]


@dataclass
class ViewImage:
    """A single image treated as its own sample, labelled with its subject's class."""

    subject_id: str
    view: ViewKey
    label: ClassLabel
    image: np.ndarray

    @property
    def unit_id(self) -> str:
        return f"{self.subject_id}:{self.view.value}"

    @property
    def view_keys(self) -> tuple[ViewKey, ...]:
        return (self.view,)

    def arrays(self) -> list[np.ndarray]:
        return [self.image]


@dataclass
class ExcludedSubject:
    subject_id: str
    label: ClassLabel
    reason: str


@dataclass
class SummaryTable:
    """Image counts per class (rows, ClassLabel order) and view (columns, VIEW_ORDER)."""

    counts: np.ndarray
    participants: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def view_totals(self) -> list[int]:
        return [int(v) for v in self.counts.sum(axis=0)]

    def row(self, label: ClassLabel) -> list[int]:
        return [int(v) for v in self.counts[int(label)]]

    def format(self) -> str:
        header = f"{'Class':<8}{'#subj':>7}" + "".join(f"{k.value:>7}" for k in VIEW_ORDER)
        lines = [header]
        for label in ClassLabel:
            lines.append(
                f"{DISPLAY_NAMES[label]:<8}{int(self.participants[label]):>7}"
                + "".join(f"{v:>7}" for v in self.row(label))
            )
        lines.append(
            f"{'Total':<8}{int(self.participants.sum()):>7}"
            + "".join(f"{v:>7}" for v in self.view_totals)
        )
        return "\n".join(lines)


@dataclass
class DatasetManifest:
    subjects: list[SubjectRecord]
    root: Path = Path(".")
    schema_version: str = SCHEMA_VERSION

    @property
    def summary(self) -> SummaryTable:
        return summarize(self)

    def __len__(self):
        return len(self.subjects)

    def by_id(self) -> dict[str, SubjectRecord]:
        return {s.subject_id: s for s in self.subjects}


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "subjects"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "string"},
        "subjects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "label", "views"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "label": {"enum": ["control", "stroke", "tia"]},
                    "source": {"enum": ["clinical", "synthetic"]},
                    "views": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {k.value: {"type": "string"} for k in VIEW_ORDER},
                    },
                },
            },
        },
    },
}


def _schema_field(error: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in error.absolute_path)
    if error.validator == "additionalProperties":
        # the offending key lives in the message, not the path
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        path = "/".join(filter(None, [path, ",".join(extra)]))
    elif error.validator == "required":
        missing = [r for r in error.validator_value if r not in error.instance]
        path = "/".join(filter(None, [path, ",".join(missing)]))
    return path or "<root>"


def parse_manifest(doc: dict, root: Path | str = ".") -> DatasetManifest:
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(_schema_field(exc), exc.message) from None
    root = Path(root)
    subjects = []
    seen = set()
    for entry in doc["subjects"]:
        sid = entry["id"]
        if sid in seen:
            raise DuplicateSubject(sid)
        seen.add(sid)
        views = {ViewKey(k): root / v for k, v in entry["views"].items()}
        subjects.append(
            SubjectRecord(
                subject_id=sid,
                label=ClassLabel.parse(entry["label"]),
                views={k: views[k] for k in VIEW_ORDER if k in views},
                source=entry.get("source", "clinical"),
            )
        )
    return DatasetManifest(subjects=subjects, root=root, schema_version=doc["schema_version"])


def load_manifest(path) -> DatasetManifest:
    """Read and validate a JSON manifest; image paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<document>", f"invalid JSON ({exc})") from None
    return parse_manifest(doc, root=path.parent)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    subjects = []
    for s in manifest.subjects:
        views = {}
        for key in VIEW_ORDER:
            if key in s.views:
                p = Path(s.views[key])
                try:
                    p = p.relative_to(manifest.root)
                except ValueError:
                    pass
                views[key.value] = p.as_posix()
        subjects.append({"id": s.subject_id, "label": str(s.label), "source": s.source, "views": views})
    return {"schema_version": manifest.schema_version, "subjects": subjects}


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n")
    return path


def summarize(manifest: DatasetManifest) -> SummaryTable:
    counts = np.zeros((len(ClassLabel), len(VIEW_ORDER)), dtype=np.int64)
    participants = np.zeros(len(ClassLabel), dtype=np.int64)
    for s in manifest.subjects:
        participants[s.label] += 1
        for j, key in enumerate(VIEW_ORDER):
            if key in s.views:
                counts[s.label, j] += 1
    return SummaryTable(counts=counts, participants=participants)


# -- images -----------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Decode a PNG/JPEG into an RGB array, keeping its native bit depth."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"cannot decode {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    else:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw


def write_image(path, image: np.ndarray) -> None:
    """Write a [0, 1] float RGB image as an 8-bit PNG."""
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(data, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write {path}")


def standardize(image: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Scale pixels to [0, 1] by the dtype's maximum and resize bilinearly to size x size."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    image = image[..., :3]
    if image.dtype == np.uint8:
        out = image.astype(np.float32) / 255.0
    elif image.dtype == np.uint16:
        out = image.astype(np.float32) / 65535.0
    else:
        out = np.clip(image.astype(np.float32), 0.0, 1.0)
    if out.shape[:2] != (size, size):
        out = cv2.resize(out, (size, size), interpolation=cv2.INTER_LINEAR)
    return np.ascontiguousarray(out, dtype=np.float32)


def load_image(path, size: int = IMAGE_SIZE) -> np.ndarray:
    return standardize(read_image(path), size)


def mirror_horizontal(image: np.ndarray) -> np.ndarray:
    """Left-right flip: column j goes to column width - 1 - j."""
    return np.ascontiguousarray(image[:, ::-1])


# -- completion -----------------------------------------------------------------


def missing_view_types(present: Iterable[ViewKey]) -> list[str]:
    present = set(present)
    return [v for v in VIEW_TYPES if ViewKey(f"R_{v}") not in present and ViewKey(f"L_{v}") not in present]


def complete_images(subject_id, label, images: dict[ViewKey, np.ndarray]) -> ImageSet | ExcludedSubject:
    """Fill each missing view with the mirrored same view of the other eye.

    A subject missing one view type in both eyes has nothing to mirror from
    and is excluded instead.
    """
    absent = missing_view_types(images)
    if absent:
        return ExcludedSubject(subject_id, label, "; ".join(f"no contralateral {v}" for v in absent))
    filled, provenance = {}, {}
    for key in VIEW_ORDER:
        if key in images:
            filled[key] = images[key]
            provenance[key] = Provenance.ORIGINAL
        else:
            filled[key] = mirror_horizontal(images[key.contralateral])
            provenance[key] = Provenance.MIRRORED
    return ImageSet(subject_id, label, filled, provenance)


def complete_or_exclude(
    record: SubjectRecord, loader: Callable[[Path], np.ndarray] = load_image
) -> ImageSet | ExcludedSubject:
    absent = missing_view_types(record.views)
    if absent:
        return ExcludedSubject(
            record.subject_id, record.label, "; ".join(f"no contralateral {v}" for v in absent)
        )
    images = {}
    for key, path in record.views.items():
        try:
            images[key] = loader(path)
        except OSError as exc:
            raise UnreadableImage(key.value, path, str(exc)) from exc
    return complete_images(record.subject_id, record.label, images)


def load_original_views(record: SubjectRecord, loader=load_image) -> list[ViewImage]:
    """Every bound image of a subject as a standalone unit (no completion)."""
    out = []
    for key, path in record.views.items():
        try:
            image = loader(path)
        except OSError as exc:
            raise UnreadableImage(key.value, path, str(exc)) from exc
        out.append(ViewImage(record.subject_id, key, record.label, image))
    return out


# -- folds -----------------------------------------------------------------


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def test_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f != fold]

    def fold_sizes(self) -> list[int]:
        c = Counter(self.assignment.values())
        return [c.get(i, 0) for i in range(self.k)]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "assignment": dict(self.assignment)}

    @classmethod
    def from_dict(cls, doc: dict) -> "FoldPlan":
        return cls(k=int(doc["k"]), seed=int(doc["seed"]), assignment={str(a): int(b) for a, b in doc["assignment"].items()})

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "FoldPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_folds(subjects, k: int = 5, seed: int = 0) -> FoldPlan:
    """Patient-wise stratified fold assignment.

    Each class's subjects are shuffled and dealt round-robin into ``k`` folds.
    The dealing position carries over from one class to the next, so fold
    sizes stay within one of each other overall as well as per class.

    Parameters
    ----------
    subjects : DatasetManifest or iterable of SubjectRecord
    k : int
        Number of folds, at least 2.
    seed : int
        Seed for the shuffle; identical inputs give an identical plan.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if isinstance(subjects, DatasetManifest):
        subjects = subjects.subjects
    subjects = list(subjects)
    by_class: dict[ClassLabel, list[str]] = {label: [] for label in ClassLabel}
    for s in subjects:
        by_class[s.label].append(s.subject_id)
    for label, ids in by_class.items():
        if ids and len(ids) < k:
            raise TooFewSubjectsInClass(label, len(ids), k)

    rng = np.random.default_rng(seed)
    assignment = {}
    pos = 0
    for label in ClassLabel:
        ids = by_class[label]
        for i in rng.permutation(len(ids)):
            assignment[ids[i]] = pos % k
            pos += 1
    # keep the manifest's subject order in the artifact
    order = [s.subject_id for s in subjects]
    return FoldPlan(k=k, seed=seed, assignment={sid: assignment[sid] for sid in order})
