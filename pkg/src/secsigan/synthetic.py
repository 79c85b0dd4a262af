"""Desk-scale synthetic data.

``channel_swap_domains``: smooth colour blobs; domain B is the BGR view of an
independent set of domain-A-style images.

``tissue_benchmark``: a 4-class, two-domain analog of the endoscopy task. The
class is carried by texture type, the domain by the colour
rendering of that texture. Every record carries its true class; experiments
decide which labels training may see.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import (
    CLASSES,
    DatasetManifest,
    DomainTag,
    ImageRecord,
    SourceDataset,
    save_image,
)


def _blob_image(rng: np.random.Generator, size: int, n_blobs: int = 6) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, 3))
    base = rng.uniform(0.1, 0.4, size=3)
    img[:] = base
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.06, 0.25)
        colour = rng.uniform(-0.1, 0.6, size=3)
        w = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
        img += w[..., None] * colour
    return np.clip(img, 0.0, 1.0)


def channel_swap_domains(n_a: int, n_b: int, size: int = 64, seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """Unpaired unit-range batches (N x 3 x H x W); B images are BGR renderings."""
    rng = np.random.default_rng(seed)
    a = np.stack([_blob_image(rng, size) for _ in range(n_a)])
    b = np.stack([_blob_image(rng, size)[..., ::-1] for _ in range(n_b)])
    to_t = lambda arr: torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float()
    return to_t(a), to_t(b)


# Colour rendering per domain: pixel = base + amplitude * texture, texture in [-1, 1].
# Amplitudes share sign across domains, so a colour-only mapping keeps structure.
DOMAIN_RENDER = {
    DomainTag.WLI: (np.array([0.72, 0.42, 0.38]), np.array([0.22, 0.16, 0.05])),
    DomainTag.NBI: (np.array([0.40, 0.45, 0.42]), np.array([0.10, 0.14, 0.20])),
}


def tissue_texture(rng: np.random.Generator, cls_index: int, size: int) -> np.ndarray:
    """Texture in [-1, 1] whose pattern type encodes the class.

    0 stripes, 1 checkerboard, 2 concentric rings, 3 scattered spots. Scale,
    orientation and position are random, so the class survives flips and
    rotations.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(3.0, 4.5)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    v = -np.sin(theta) * xx + np.cos(theta) * yy
    if cls_index == 0:
        tex = np.sin(2 * np.pi * freq * u + phase[0])
    elif cls_index == 1:
        tex = 1.6 * np.sin(2 * np.pi * freq * u + phase[0]) * np.sin(2 * np.pi * freq * v + phase[1])
    elif cls_index == 2:
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        tex = np.sin(2 * np.pi * freq * np.hypot(yy - cy, xx - cx) + phase[0])
    elif cls_index == 3:
        tex = -np.ones_like(xx)
        for cy, cx in rng.uniform(0, 1, size=(int(rng.integers(5, 9)), 2)):
            r = rng.uniform(0.05, 0.09)
            tex += 2 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
    else:
        raise ValueError(f"class index {cls_index} out of range")
    tex = tex * rng.uniform(0.6, 1.0) + rng.normal(0, 0.12, size=(size, size))
    return np.clip(tex, -1.0, 1.0)


def render(tex: np.ndarray, domain: DomainTag, rng: np.random.Generator, jitter: float = 0.04) -> np.ndarray:
    base, amp = DOMAIN_RENDER[domain]
    base = base + rng.normal(0, jitter, size=3)
    img = base + tex[..., None] * amp
    return np.clip(img, 0.0, 1.0)


@dataclass
class BenchmarkSpec:
    n_patients: int = 12
    images_per_patient_a: int = 40
    images_per_patient_b: int = 30
    classes_per_patient: int = 2
    size: int = 32


def tissue_benchmark(out_dir: str | Path, spec: BenchmarkSpec | None = None, seed: int = 0) -> DatasetManifest:
    """Render the 4-class benchmark to PNG files and return its manifest.

    Every patient shows ``classes_per_patient`` tissue classes in both domains.
    """
    spec = spec or BenchmarkSpec()
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    records: list[ImageRecord] = []
    for p in range(spec.n_patients):
        pid = f"P{p:03d}"
        classes = sorted(rng.choice(len(CLASSES), size=spec.classes_per_patient, replace=False))
        for domain, n_img in ((DomainTag.WLI, spec.images_per_patient_a), (DomainTag.NBI, spec.images_per_patient_b)):
            for i in range(n_img):
                c = classes[i % len(classes)]
                img = render(tissue_texture(rng, c, spec.size), domain, rng)
                path = out_dir / domain.value / f"{pid}_{i:03d}.png"
                save_image(img, path)
                records.append(ImageRecord(str(path), pid, domain, CLASSES[c], SourceDataset.SYNTHETIC))
    return DatasetManifest(records)


def channel_swap_benchmark(out_dir: str | Path, n_a: int = 100, n_b: int = 100, size: int = 64, seed: int = 0) -> DatasetManifest:
    """Write :func:`channel_swap_domains` images as unlabeled GAN-only records (A = WLI, B = NBI)."""
    from .dataio import TissueClass

    out_dir = Path(out_dir)
    a, b = channel_swap_domains(n_a, n_b, size, seed)
    records = []
    for domain, batch in ((DomainTag.WLI, a), (DomainTag.NBI, b)):
        for i, img in enumerate(batch):
            path = out_dir / domain.value / f"cs_{i:04d}.png"
            save_image(img.permute(1, 2, 0).numpy(), path)
            records.append(ImageRecord(str(path), f"CS{i:04d}", domain, TissueClass.UNLABELED, SourceDataset.SYNTHETIC))
    return DatasetManifest(records)
