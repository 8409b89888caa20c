"""Image grids, paired studies, datasets and their on-disk form.

A dataset on disk is a JSON manifest plus one 16-bit grayscale PNG per image::

    {"studies": [{"patient_id": "p000", "slice_index": 0,
                  "label": "p000_0000_label.png", "ct": "p000_0000_ct.png",
                  "pet": "p000_0000_pet.png", "suv_scale": 9.7}]}

Image paths are relative to the manifest's directory. All values are held
normalised to [0, 1].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import InputError, PreconditionError, ValidationError

QUANT_LEVELS = 65535
KINDS = ("label", "ct", "pet")
MIN_SIZE = 8


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(eq=False)
class ImageGrid:
    values: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"image must be 2D, got shape {v.shape}")
        h, w = v.shape
        if h < MIN_SIZE or w < MIN_SIZE or not (_is_pow2(h) and _is_pow2(w)):
            raise ValidationError(
                f"image dims must be powers of two >= {MIN_SIZE}, got {h}x{w}")
        lo, hi = self.value_range
        if not np.all(np.isfinite(v)):
            raise ValidationError("image contains non-finite values")
        if v.size and (v.min() < lo or v.max() > hi):
            raise ValidationError(
                f"values [{v.min():.4g}, {v.max():.4g}] outside range [{lo}, {hi}]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        return (type(self) is type(other)
                and self.value_range == other.value_range
                and np.array_equal(self.values, other.values))


@dataclass(eq=False)
class LabelMap(ImageGrid):
    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValidationError("label map must be binary (0/1)")


@dataclass(eq=False)
class CtImage(ImageGrid):
    raw_range: tuple[float, float] = (0.0, 1.0)


@dataclass(eq=False)
class PetImage(ImageGrid):
    suv_scale: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not self.suv_scale > 0:
            raise ValidationError(f"suv_scale must be > 0, got {self.suv_scale}")


@dataclass
class PairedStudy:
    patient_id: str
    slice_index: int
    label: LabelMap
    ct: CtImage
    pet: PetImage

    def __post_init__(self):
        if not self.patient_id:
            raise ValidationError("patient_id must be non-empty")
        if not (self.label.shape == self.ct.shape == self.pet.shape):
            raise ValidationError(
                f"shape mismatch in study ({self.patient_id}, {self.slice_index}): "
                f"label {self.label.shape}, ct {self.ct.shape}, pet {self.pet.shape}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.patient_id, self.slice_index)


@dataclass
class Dataset:
    studies: list[PairedStudy]
    manifest_path: Path | None = None

    def __post_init__(self):
        self.studies = sorted(self.studies, key=lambda s: s.key)
        keys = [s.key for s in self.studies]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ValidationError(f"duplicate (patient_id, slice_index): {dupes}")

    def __iter__(self) -> Iterator[PairedStudy]:
        return iter(self.studies)

    def __len__(self) -> int:
        return len(self.studies)

    def __getitem__(self, i) -> PairedStudy:
        return self.studies[i]

    @property
    def patient_ids(self) -> list[str]:
        return sorted({s.patient_id for s in self.studies})

    def subset(self, patient_ids) -> "Dataset":
        keep = set(patient_ids)
        return Dataset([s for s in self.studies if s.patient_id in keep],
                       self.manifest_path)


# --- image files -----------------------------------------------------------

def quantize(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * QUANT_LEVELS).astype(np.uint16)


def dequantize(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float64) / QUANT_LEVELS


def save_image(grid: ImageGrid, path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise InputError(f"parent directory does not exist: {path.parent}")
    img = Image.fromarray(quantize(grid.values))
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise InputError(f"cannot write image {path}: {exc}") from exc


def _read_u16(path: Path) -> np.ndarray:
    if not path.is_file():
        raise InputError(f"image file not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.array(img)
    except OSError as exc:
        raise InputError(f"corrupt image file {path}: {exc}") from exc
    if mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise InputError(f"unsupported image mode {mode!r} in {path}; expected 16-bit gray")
    if arr.ndim != 2 or arr.min(initial=0) < 0 or arr.max(initial=0) > QUANT_LEVELS:
        raise InputError(f"unsupported bit depth in {path}")
    return arr.astype(np.uint16)


def read_image(path, kind: str, **meta) -> ImageGrid:
    """Read a 16-bit PNG as a LabelMap, CtImage or PetImage."""
    path = Path(path)
    values = dequantize(_read_u16(path))
    if kind == "label":
        return LabelMap(values)
    if kind == "ct":
        return CtImage(values, **meta)
    if kind == "pet":
        return PetImage(values, **meta)
    raise ValueError(f"unknown image kind {kind!r}")


# --- manifests -------------------------------------------------------------

def study_filename(patient_id: str, slice_index: int, kind: str) -> str:
    return f"{patient_id}_{slice_index:04d}_{kind}.png"


def save_dataset(studies: Sequence[PairedStudy], out_dir, name="manifest.json") -> Path:
    """Write images and a manifest for ``studies``; returns the manifest path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create directory {out_dir}: {exc}") from exc
    records = []
    for s in sorted(studies, key=lambda s: s.key):
        rec = {"patient_id": s.patient_id, "slice_index": s.slice_index}
        for kind in KINDS:
            fname = study_filename(s.patient_id, s.slice_index, kind)
            save_image(getattr(s, kind), out_dir / fname)
            rec[kind] = fname
        rec["suv_scale"] = float(s.pet.suv_scale)
        records.append(rec)
    manifest = out_dir / name
    try:
        manifest.write_text(json.dumps({"studies": records}, indent=1) + "\n",
                            encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write manifest {manifest}: {exc}") from exc
    return manifest


def _study_from_record(rec: dict, root: Path, idx: int) -> PairedStudy:
    try:
        pid = str(rec["patient_id"])
        sl = int(rec["slice_index"])
        paths = {k: root / rec[k] for k in KINDS}
        suv = float(rec.get("suv_scale", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"manifest record {idx} malformed: {exc!r}") from exc
    grids = {}
    for kind in KINDS:
        try:
            if kind == "pet":
                grids[kind] = read_image(paths[kind], kind, suv_scale=suv)
            else:
                grids[kind] = read_image(paths[kind], kind)
        except ValidationError as exc:
            raise ValidationError(f"study ({pid}, {sl}) {kind}: {exc}") from exc
    try:
        return PairedStudy(pid, sl, grids["label"], grids["ct"], grids["pet"])
    except ValidationError as exc:
        raise ValidationError(f"study ({pid}, {sl}): {exc}") from exc


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise InputError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse manifest {manifest_path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("studies"), list):
        raise ValidationError(f"manifest {manifest_path} lacks a 'studies' list")
    root = manifest_path.parent
    studies = [_study_from_record(r, root, i) for i, r in enumerate(doc["studies"])]
    return Dataset(studies, manifest_path)


def split_two_fold(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Split by patient into two folds whose patient counts differ by <= 1."""
    pids = ds.patient_ids
    if len(pids) < 2:
        raise PreconditionError(f"need >= 2 patients to split, got {len(pids)}")
    order = np.random.default_rng(seed).permutation(len(pids))
    half = len(pids) // 2
    first = [pids[i] for i in order[:half]]
    second = [pids[i] for i in order[half:]]
    return ds.subset(first), ds.subset(second)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
