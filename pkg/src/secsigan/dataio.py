"""Dataset manifests, patient-level splits, GAN dataset composition and image I/O.

A manifest is a CSV file with the header
``image_path,patient_id,domain,tissue,source_dataset``. Relative image paths
are resolved against the directory holding the manifest.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

MANIFEST_HEADER = ("image_path", "patient_id", "domain", "tissue", "source_dataset")


class DomainTag(str, Enum):
    WLI = "WLI"
    NBI = "NBI"

    @property
    def other(self) -> "DomainTag":
        return DomainTag.NBI if self is DomainTag.WLI else DomainTag.WLI


class TissueClass(str, Enum):
    HGC = "HGC"
    LGC = "LGC"
    NTL = "NTL"
    NST = "NST"
    UNLABELED = "UNLABELED"


# Index order doubles as the argmax tie-break order.
CLASSES: tuple[TissueClass, ...] = (TissueClass.HGC, TissueClass.LGC, TissueClass.NTL, TissueClass.NST)
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}


class SourceDataset(str, Enum):
    D_A = "D_A"
    D_B = "D_B"
    D_C = "D_C"
    D_D = "D_D"
    SYNTHETIC = "SYNTHETIC"


EXTERNAL_SOURCES = frozenset({SourceDataset.D_B, SourceDataset.D_C, SourceDataset.D_D})


class ValueRange(str, Enum):
    UNIT = "unit"
    SYMMETRIC = "symmetric"

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is ValueRange.UNIT else (-1.0, 1.0)

    @property
    def width(self) -> float:
        lo, hi = self.bounds
        return hi - lo


# Printed reference counts. The per-class rows of the first table do not sum to
# the printed totals; loaders count what is on disk and never trust these.
TABLE_I_COUNTS = {
    "HGC": {"WLI": 386, "NBI": 64, "total": 469},
    "LGC": {"WLI": 454, "NBI": 145, "total": 647},
    "NST": {"WLI": 439, "NBI": 75, "total": 504},
    "NTL": {"WLI": 97, "NBI": 37, "total": 134},
    "total": {"WLI": 1433, "NBI": 321, "total": 1754},
}
# Column labels as printed; they look swapped relative to TABLE_I_COUNTS.
TABLE_II_COUNTS = {
    "D1": {"NBI": 1036, "WLI": 228, "total": 1264},
    "D2": {"NBI": 4592, "WLI": 2512, "total": 7104},
    "D3": {"NBI": 5628, "WLI": 2740, "total": 8368},
}


class ManifestError(ValueError):
    """Raised for malformed manifests, splits or records."""


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_path: str
    patient_id: str
    domain: DomainTag
    tissue: TissueClass
    source_dataset: SourceDataset = SourceDataset.SYNTHETIC

    def __post_init__(self):
        if not self.image_path:
            raise ManifestError("image_path must be non-empty")
        if self.source_dataset is SourceDataset.D_A and not self.patient_id:
            raise ManifestError(f"{self.image_path}: records from D_A need a patient_id")
        # unlabeled WLI images may only come from GAN-only corpora (external or synthetic)
        if self.tissue is TissueClass.UNLABELED and self.domain is DomainTag.WLI and self.source_dataset is SourceDataset.D_A:
            raise ManifestError(f"{self.image_path}: WLI records of D_A must be labeled")

    @property
    def labeled(self) -> bool:
        return self.tissue is not TissueClass.UNLABELED

    def row(self) -> list[str]:
        return [self.image_path, self.patient_id, self.domain.value, self.tissue.value, self.source_dataset.value]


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    composition_id: str = "CUSTOM"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.composition_id not in ("D1", "D2", "D3", "CUSTOM"):
            raise ManifestError(f"unknown composition id {self.composition_id!r}")
        seen = set()
        for rec in self.records:
            if rec.image_path in seen:
                raise ManifestError(f"duplicate image_path {rec.image_path}")
            seen.add(rec.image_path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def counts(self) -> Counter:
        """Counts keyed by ``(domain, tissue)``."""
        return Counter((r.domain, r.tissue) for r in self.records)

    def domain_counts(self) -> dict[str, int]:
        c = Counter(r.domain.value for r in self.records)
        return {d.value: c.get(d.value, 0) for d in DomainTag}

    def tissue_counts(self) -> dict[str, int]:
        c = Counter(r.tissue.value for r in self.records)
        return {t.value: c[t.value] for t in TissueClass if c[t.value]}

    def patients(self) -> list[str]:
        return sorted({r.patient_id for r in self.records if r.patient_id})

    def filter(self, pred) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if pred(r)], self.composition_id)

    def by_path(self) -> dict[str, ImageRecord]:
        return {r.image_path: r for r in self.records}


def _parse_enum(enum_cls, token: str, what: str, lineno: int):
    try:
        return enum_cls(token.strip())
    except ValueError:
        raise ManifestError(f"line {lineno}: unknown {what} token {token!r}") from None


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"line 1: expected header {','.join(MANIFEST_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"line {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            img, pid, dom, tis, src = (cell.strip() for cell in row)
            if not img:
                raise ManifestError(f"line {lineno}: empty image_path")
            img_path = Path(img)
            if not img_path.is_absolute():
                img_path = base / img_path
            try:
                records.append(
                    ImageRecord(
                        image_path=str(img_path),
                        patient_id=pid,
                        domain=_parse_enum(DomainTag, dom, "domain", lineno),
                        tissue=_parse_enum(TissueClass, tis, "tissue", lineno),
                        source_dataset=_parse_enum(SourceDataset, src, "source_dataset", lineno),
                    )
                )
            except ManifestError as exc:
                if str(exc).startswith("line "):
                    raise
                raise ManifestError(f"line {lineno}: {exc}") from None
    try:
        return DatasetManifest(records)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def save_manifest(manifest: DatasetManifest, path: str | Path, relative_to: str | Path | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = Path(relative_to) if relative_to is not None else path.parent
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            row = rec.row()
            try:
                row[0] = str(Path(rec.image_path).resolve().relative_to(root.resolve()))
            except ValueError:
                pass
            w.writerow(row)
    return path


# --------------------------------------------------------------------------- splits


@dataclass
class SplitSpec:
    seed: int
    test_patients: list[str]
    train_records: list[ImageRecord]
    val_records: list[ImageRecord]
    test_records: list[ImageRecord]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_patients": list(self.test_patients),
            "train": [r.image_path for r in self.train_records],
            "val": [r.image_path for r in self.val_records],
            "test": [r.image_path for r in self.test_records],
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def from_json(cls, path: str | Path, manifest: DatasetManifest) -> "SplitSpec":
        data = json.loads(Path(path).read_text())
        lookup = manifest.by_path()
        try:
            parts = {k: [lookup[p] for p in data[k]] for k in ("train", "val", "test")}
        except KeyError as exc:
            raise ManifestError(f"split references a path missing from the manifest: {exc}") from None
        return cls(int(data["seed"]), list(data["test_patients"]), parts["train"], parts["val"], parts["test"])


def _ratio_split(records: list[ImageRecord], ratio: float, rng: np.random.Generator):
    order = rng.permutation(len(records))
    n_train = int(round(ratio * len(records)))
    shuffled = [records[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def split_holdout(manifest: DatasetManifest, n_test_patients: int = 4, ratio: float = 0.75, seed: int = 0) -> SplitSpec:
    """Hold out whole patients for testing, then split the rest train/val.

    Labeled and unlabeled non-test records are each shuffled and cut at
    ``ratio`` so the labeled train:val proportion is exact up to rounding.
    Records without a patient id never land in the test split.
    """
    if not 0.0 < ratio < 1.0:
        raise ManifestError(f"ratio must lie in (0, 1), got {ratio}")
    patients = manifest.patients()
    if n_test_patients < 0 or len(patients) < n_test_patients:
        raise ManifestError(f"need {n_test_patients} distinct patients, manifest has {len(patients)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(patients), size=n_test_patients, replace=False) if n_test_patients else []
    test_patients = sorted(patients[i] for i in chosen)
    held = set(test_patients)
    test = [r for r in manifest.records if r.patient_id in held]
    rest = [r for r in manifest.records if r.patient_id not in held]
    tr_l, va_l = _ratio_split([r for r in rest if r.labeled], ratio, rng)
    tr_u, va_u = _ratio_split([r for r in rest if not r.labeled], ratio, rng)
    return SplitSpec(seed, test_patients, tr_l + tr_u, va_l + va_u, test)


# --------------------------------------------------------------------------- composition

_COMPOSITION_SOURCES = {
    "D1": frozenset({SourceDataset.D_A}),
    "D2": EXTERNAL_SOURCES,
    "D3": EXTERNAL_SOURCES | {SourceDataset.D_A},
}


def compose_gan_dataset(parts: Sequence[DatasetManifest], composition_id: str) -> DatasetManifest:
    """Union of manifest parts for one of the GAN training compositions.

    D1 is the labeled in-house set (pass its train split only), D2 the three
    external corpora and D3 both. Records are de-duplicated on image path,
    first occurrence wins.
    """
    if composition_id not in _COMPOSITION_SOURCES:
        raise ManifestError(f"composition must be one of D1, D2, D3; got {composition_id!r}")
    wanted = _COMPOSITION_SOURCES[composition_id]
    present = {r.source_dataset for p in parts for r in p.records}
    missing = sorted(s.value for s in wanted - present)
    if missing:
        raise ManifestError(f"{composition_id} requires parts from {missing}")
    seen, records = set(), []
    for part in parts:
        for rec in part.records:
            if rec.source_dataset in wanted and rec.image_path not in seen:
                seen.add(rec.image_path)
                records.append(rec)
    out = DatasetManifest(records, composition_id)
    out.metadata = {
        "composition_id": composition_id,
        "domain_counts": out.domain_counts(),
        "total": len(out),
        "reference_counts": TABLE_II_COUNTS[composition_id],
    }
    return out


# --------------------------------------------------------------------------- images


@dataclass
class ImageTensor:
    """H x W x 3 float32 array tagged with its value range."""

    data: np.ndarray
    value_range: ValueRange = ValueRange.UNIT

    def __post_init__(self):
        self.value_range = ValueRange(self.value_range)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 data, got shape {self.data.shape}")
        lo, hi = self.value_range.bounds
        # small slack for float round-off from range conversion
        if self.data.size and (self.data.min() < lo - 1e-5 or self.data.max() > hi + 1e-5):
            raise ValueError(f"values outside the declared {self.value_range.value} range [{lo}, {hi}]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_range(self, value_range: ValueRange) -> "ImageTensor":
        value_range = ValueRange(value_range)
        if value_range is self.value_range:
            return self
        if value_range is ValueRange.SYMMETRIC:
            return ImageTensor(self.data * 2.0 - 1.0, value_range)
        return ImageTensor((self.data + 1.0) / 2.0, value_range)

    def to_chw(self) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(self.data.transpose(2, 0, 1)))

    @classmethod
    def from_chw(cls, t: torch.Tensor, value_range: ValueRange) -> "ImageTensor":
        return cls(t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32, copy=False), value_range)


def scale_uint8(pixels: np.ndarray, value_range: ValueRange) -> np.ndarray:
    unit = pixels.astype(np.float32) / 255.0
    return unit if ValueRange(value_range) is ValueRange.UNIT else unit * 2.0 - 1.0


def load_image(
    record: ImageRecord | str | Path,
    size: tuple[int, int] = (256, 256),
    value_range: ValueRange = ValueRange.UNIT,
) -> ImageTensor:
    """Decode an image file to RGB, resize to ``size`` (H, W) and scale."""
    path = record.image_path if isinstance(record, ImageRecord) else str(record)
    try:
        with Image.open(path) as im:
            if im.width == 0 or im.height == 0:
                raise ImageDecodeError(f"{path}: zero-area image")
            im = im.convert("RGB")
            h, w = size
            if (im.height, im.width) != (h, w):
                im = im.resize((w, h), Image.BILINEAR)
            pixels = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return ImageTensor(scale_uint8(pixels, value_range), ValueRange(value_range))


def save_image(image: ImageTensor | np.ndarray, path: str | Path, value_range: ValueRange = ValueRange.UNIT) -> Path:
    if isinstance(image, ImageTensor):
        data, value_range = image.data, image.value_range
    else:
        data = image
    data = np.asarray(data, dtype=np.float64)
    if ValueRange(value_range) is ValueRange.SYMMETRIC:
        data = (data + 1.0) / 2.0
    pixels = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, "RGB").save(path)
    return path


def load_images(
    records: Iterable[ImageRecord], size: tuple[int, int], value_range: ValueRange = ValueRange.UNIT
) -> torch.Tensor:
    """Stack records into an N x 3 x H x W float32 tensor."""
    arrays = [load_image(r, size, value_range).data.transpose(2, 0, 1) for r in records]
    if not arrays:
        return torch.zeros((0, 3, *size), dtype=torch.float32)
    return torch.from_numpy(np.stack(arrays))


def resize_array(data: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an H x W x C float array (convex, so range-preserving)."""
    if data.shape[:2] == tuple(size):
        return data
    t = torch.from_numpy(np.ascontiguousarray(data.transpose(2, 0, 1)))[None].float()
    out = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0)


@dataclass
class AugmentConfig:
    """Training-time augmentation. ``output_size`` of None keeps the input size."""

    crop_size: tuple[int, int] | None = None
    rotation_degrees: float = 0.0
    hflip_prob: float = 0.0
    vflip_prob: float = 0.0
    output_size: tuple[int, int] | None = None

    @property
    def enabled(self) -> bool:
        return bool(self.crop_size or self.rotation_degrees or self.hflip_prob or self.vflip_prob)


def augment(image: ImageTensor, config: AugmentConfig, seed: int | np.random.Generator) -> ImageTensor:
    """Random rotation, crop and flips, then resize to the training shape."""
    data = image.data
    h, w = data.shape[:2]
    out_size = tuple(config.output_size) if config.output_size else (h, w)
    if config.crop_size is not None:
        ch, cw = config.crop_size
        if ch > h or cw > w:
            raise ValueError(f"crop {config.crop_size} larger than image {(h, w)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = image.value_range.bounds
    if config.rotation_degrees:
        angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
        data = ndimage.rotate(data, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        # order-1 interpolation is convex; clip only guards float round-off
        data = np.clip(data, lo, hi)
    if config.crop_size is not None:
        ch, cw = config.crop_size
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        data = data[top : top + ch, left : left + cw]
    if config.hflip_prob and rng.random() < config.hflip_prob:
        data = data[:, ::-1]
    if config.vflip_prob and rng.random() < config.vflip_prob:
        data = data[::-1]
    data = resize_array(np.ascontiguousarray(data, dtype=np.float32), out_size)
    return ImageTensor(np.clip(data, lo, hi).astype(np.float32, copy=False), image.value_range)


def augment_batch(batch: torch.Tensor, config: AugmentConfig, rng: np.random.Generator, value_range=ValueRange.UNIT) -> torch.Tensor:
    """Apply :func:`augment` independently to every image of an N x 3 x H x W batch."""
    if not config.enabled and not config.output_size:
        return batch
    out = []
    for img in batch:
        t = augment(ImageTensor.from_chw(img, value_range), config, rng)
        out.append(t.to_chw())
    return torch.stack(out).to(batch.dtype)

