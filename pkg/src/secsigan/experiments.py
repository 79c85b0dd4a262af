"""Ablation presets and the multi-seed comparison harness.

Presets (one row family each of the comparison table):

* ``baseline``: single backbone trained on labeled WLI images (the teacher).
* ``csigan_b2`` / ``csigan_b3``: single branch fed the translation or the
  reconstruction, fully supervised.
* ``csigan_fs``: three-branch classifier, fully supervised.
* ``baseline_semisup``: single backbone student on labeled plus teacher
  pseudo-labeled images, no GAN.
* ``secsigan``: three-branch student on labeled plus pseudo-labeled triples.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .classify import (
    ClassifierConfig,
    ClassifierTrainConfig,
    ImageSet,
    SlotClassifier,
    init_classifier,
    predict,
    train_student_semisup,
    train_teacher,
)
from .csigan import ArchitectureSpec, GanModel, GanTrainConfig, fit_gan, init_gan
from .dataio import DatasetManifest, DomainTag, SplitSpec, ValueRange, load_images
from .evaluate import STRATA, mann_whitney_u, per_domain_report

log = logging.getLogger(__name__)

PRESETS = ("baseline", "csigan_b2", "csigan_b3", "csigan_fs", "baseline_semisup", "secsigan")
NEEDS_GAN = frozenset({"csigan_b2", "csigan_b3", "csigan_fs", "secsigan"})
NEEDS_TEACHER = frozenset({"baseline_semisup", "secsigan"})
METRICS = (("Accuracy", "accuracy"), ("Precision", "precision"), ("Recall", "recall"), ("F1", "f1"), ("MCC", "mcc"), ("CK", "cohen_kappa"))


def derive_seed(root: int, name: str) -> int:
    """Independent, reproducible substream seed for ``name`` under ``root``."""
    digest = hashlib.sha256(f"{int(root)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


# --------------------------------------------------------------------------- data


@dataclass
class ExperimentData:
    """Tensors for one shared split; labels exist only where training may use them."""

    labeled: ImageSet  # labeled WLI training images
    val: ImageSet  # labeled WLI validation images
    unlabeled: ImageSet  # every other train/val image, labels hidden
    test: ImageSet  # labeled held-out images of both domains
    gan_a: torch.Tensor  # symmetric-range WLI training images
    gan_b: torch.Tensor  # symmetric-range NBI training images

    @classmethod
    def from_split(cls, split: SplitSpec, size: tuple[int, int]) -> "ExperimentData":
        def images(records):
            return ImageSet.from_records(records, size) if records else None

        wli = DomainTag.WLI
        lab = [r for r in split.train_records if r.domain is wli and r.labeled]
        val = [r for r in split.val_records if r.domain is wli and r.labeled]
        rest = [r for r in split.train_records + split.val_records if not (r.domain is wli and r.labeled)]
        test = [r for r in split.test_records if r.labeled]
        if not lab:
            raise ValueError("split has no labeled WLI training images")
        if not test:
            raise ValueError("split has no labeled test images")
        unl = images(rest)
        gan_a = [r for r in split.train_records if r.domain is wli]
        gan_b = [r for r in split.train_records if r.domain is DomainTag.NBI]
        return cls(
            labeled=images(lab),
            val=images(val) if val else ImageSet(torch.zeros((0, 3, *size)), [], []),
            unlabeled=unl.hide_labels() if unl is not None else ImageSet(torch.zeros((0, 3, *size)), [], []),
            test=images(test),
            gan_a=load_images(gan_a, size, ValueRange.SYMMETRIC) if gan_a else torch.zeros((0, 3, *size)),
            gan_b=load_images(gan_b, size, ValueRange.SYMMETRIC) if gan_b else torch.zeros((0, 3, *size)),
        )


# --------------------------------------------------------------------------- configs


@dataclass
class ExperimentConfig:
    """Everything a preset run needs besides data and seed."""

    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    train: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    gan_train: GanTrainConfig = field(default_factory=GanTrainConfig)
    gan_arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    # teacher input for pseudo-labels in the secsigan preset (see classify.PSEUDO_LABEL_INPUTS)
    secsigan_pseudo_label_input: str = "labeled_domain_view"

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return {
            "classifier": self.classifier.to_dict(),
            "train": self.train.to_dict(),
            "gan_train": self.gan_train.to_dict(),
            "gan_arch": asdict(self.gan_arch),
            "secsigan_pseudo_label_input": self.secsigan_pseudo_label_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(
            classifier=ClassifierConfig(**d.get("classifier", {})),
            train=ClassifierTrainConfig(**d.get("train", {})),
            gan_train=GanTrainConfig.from_dict(d.get("gan_train", {})),
            gan_arch=ArchitectureSpec(**d.get("gan_arch", {})),
            secsigan_pseudo_label_input=d.get("secsigan_pseudo_label_input", "labeled_domain_view"),
        )


def desk_scale_config(image_size: int = 32) -> ExperimentConfig:
    """Small models and short schedules for the synthetic benchmark on a CPU."""
    return ExperimentConfig(
        classifier=ClassifierConfig("TOY", (64, 32, 16)),
        train=ClassifierTrainConfig(learning_rate=1e-3, epochs=20, batch_size=32),
        gan_train=GanTrainConfig(epochs=30, batch_size=4, image_size=(image_size, image_size)),
        gan_arch=ArchitectureSpec(ngf=16, n_blocks=2, ndf=16, n_disc_layers=2),
    )


def toy_translation_config(epochs: int = 30, seed: int = 0) -> tuple[ArchitectureSpec, GanTrainConfig]:
    """Two-block 64x64 GAN for the channel-swap sanity run.

    Heavier cycle weights and a linear decay over the second half keep the
    round-trip loss falling; with unit cycle weights the adversarial terms
    dominate this small model and the cycle loss only jitters.
    """
    arch = ArchitectureSpec(ngf=16, n_blocks=2, ndf=16, n_disc_layers=2)
    train = GanTrainConfig(
        lambda3=10.0,
        lambda4=10.0,
        epochs=epochs,
        batch_size=4,
        image_size=(64, 64),
        seed=seed,
        lr_decay_start=epochs // 2,
    )
    return arch, train


# --------------------------------------------------------------------------- runs


@dataclass
class PresetResult:
    preset: str
    seed: int
    reports: dict  # stratum -> MetricsReport dict
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def metric(self, stratum: str, key: str) -> float:
        return float(self.reports[stratum][key]) if stratum in self.reports else float("nan")

    def to_dict(self) -> dict:
        return {"preset": self.preset, "seed": self.seed, "reports": self.reports, "history": self.history, "seconds": self.seconds}


def train_gan_for(data: ExperimentData, config: ExperimentConfig, seed: int, ckpt_dir: str | Path | None = None) -> GanModel:
    if len(data.gan_a) == 0 or len(data.gan_b) == 0:
        raise ValueError("GAN training needs WLI and NBI training images")
    gcfg = replace(config.gan_train, seed=seed)
    gan = init_gan(config.gan_arch, seed, gcfg.gan_loss_mode)
    gan, _ = fit_gan(gan, data.gan_a, data.gan_b, gcfg, ckpt_dir)
    return gan


def train_baseline(data: ExperimentData, config: ExperimentConfig, seed: int):
    tc = replace(config.train, seed=seed)
    model = init_classifier(config.classifier, seed)
    return train_teacher(model, data.labeled, data.val, tc)


def run_preset(
    preset: str,
    data: ExperimentData,
    config: ExperimentConfig,
    seed: int,
    gan: GanModel | None = None,
    teacher=None,
):
    """Train and evaluate one preset; returns (model, PresetResult).

    ``baseline`` never touches the GAN. Presets that read translations or
    pseudo-labels fail fast if ``gan``/``teacher`` are missing.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if preset in NEEDS_GAN and gan is None:
        raise ValueError(f"preset {preset} needs a trained GAN")
    if preset in NEEDS_TEACHER and teacher is None:
        raise ValueError(f"preset {preset} needs a trained teacher")
    t0 = time.perf_counter()
    tc = replace(config.train, seed=seed)
    if preset == "baseline":
        model, hist = train_baseline(data, config, seed)
        used_gan = None
    elif preset in ("csigan_b2", "csigan_b3"):
        model = SlotClassifier(init_classifier(config.classifier, seed), slot=1 if preset == "csigan_b2" else 2)
        model, hist = train_student_semisup(model, None, gan, data.labeled, None, data.val, tc)
        used_gan = gan
    elif preset == "csigan_fs":
        model = init_classifier(config.classifier, seed, multi_input=True)
        model, hist = train_student_semisup(model, None, gan, data.labeled, None, data.val, tc)
        used_gan = gan
    elif preset == "baseline_semisup":
        model = init_classifier(config.classifier, seed)
        model, hist = train_student_semisup(model, teacher, None, data.labeled, data.unlabeled, data.val, tc)
        used_gan = None
    else:
        tc = replace(tc, pseudo_label_input=config.secsigan_pseudo_label_input)
        model = init_classifier(config.classifier, seed, multi_input=True)
        model, hist = train_student_semisup(model, teacher, gan, data.labeled, data.unlabeled, data.val, tc)
        used_gan = gan
    probs = predict(model, used_gan, data.test)
    reports = per_domain_report(probs.numpy(), data.test.labels.numpy(), data.test.domain_tags)
    result = PresetResult(preset, seed, {k: v.to_dict() for k, v in reports.items()}, hist.rows, time.perf_counter() - t0)
    return model, result


# --------------------------------------------------------------------------- suite


@dataclass
class AblationTable:
    presets: list[str]
    seeds: list[int]
    results: dict[str, list[PresetResult]]
    baseline: str = "baseline"
    notes: list[str] = field(default_factory=list)

    @staticmethod
    def column(metric: str, stratum: str) -> str:
        return f"{metric}_{stratum}"

    @property
    def columns(self) -> list[str]:
        return [self.column(m, s) for m, _ in METRICS for s in STRATA]

    def values(self, preset: str, metric_key: str, stratum: str) -> list[float]:
        return [r.metric(stratum, metric_key) for r in self.results[preset]]

    def summary(self) -> dict:
        """``{preset: {column: {mean, std, p_value, values}}}``; std with ddof=1."""
        out = {}
        for preset in self.presets:
            row = {}
            for name, key in METRICS:
                for stratum in STRATA:
                    vals = np.asarray(self.values(preset, key, stratum), dtype=np.float64)
                    cell = {
                        "mean": float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan"),
                        "std": float(np.nanstd(vals, ddof=1)) if np.isfinite(vals).sum() > 1 else 0.0,
                        "values": vals.tolist(),
                        "p_value": None,
                        "method": None,
                    }
                    if preset != self.baseline and self.baseline in self.results and len(self.seeds) >= 2:
                        base = np.asarray(self.values(self.baseline, key, stratum), dtype=np.float64)
                        a, b = vals[np.isfinite(vals)], base[np.isfinite(base)]
                        if a.size and b.size:
                            sig = mann_whitney_u(a, b)
                            cell["p_value"], cell["method"] = sig.p_value, sig.method
                    row[self.column(name, stratum)] = cell
            out[preset] = row
        return out

    def paired_wins(self, preset: str, metric_key: str = "accuracy", stratum: str = "NBI") -> int:
        a = self.values(preset, metric_key, stratum)
        b = self.values(self.baseline, metric_key, stratum)
        return int(sum(x > y for x, y in zip(a, b)))

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "presets": self.presets,
            "seeds": self.seeds,
            "baseline": self.baseline,
            "columns": self.columns,
            "summary": self.summary(),
            "runs": {p: [r.to_dict() for r in rs] for p, rs in self.results.items()},
            "notes": self.notes,
        }
        path.write_text(json.dumps(doc, indent=2))
        return path

    def to_csv(self, path: str | Path) -> Path:
        """One row per preset, ``mean±std`` cells, plus a row of baseline-relative p-values per preset."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        summ = self.summary()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["preset", "row"] + self.columns)
            for preset in self.presets:
                cells = summ[preset]
                w.writerow([preset, "mean±std"] + [f"{cells[c]['mean']:.3f}±{cells[c]['std']:.3f}" for c in self.columns])
                if preset != self.baseline:
                    w.writerow([preset, "p_value"] + ["" if cells[c]["p_value"] is None else f"{cells[c]['p_value']:.4g}" for c in self.columns])
        return path


def ablation_suite(
    data: ExperimentData,
    config: ExperimentConfig,
    presets: Sequence[str] = PRESETS,
    seeds: Sequence[int] = tuple(range(10)),
    gan: GanModel | None = None,
    gan_seed: int = 0,
    on_result: Callable[[PresetResult], None] | None = None,
) -> AblationTable:
    """Run every preset for every seed on one shared split.

    The GAN is trained once (or passed in) and shared; one teacher per seed
    is trained and serves as both the ``baseline`` row and the pseudo-labeler.
    """
    presets = list(presets)
    for p in presets:
        if p not in PRESETS:
            raise ValueError(f"unknown preset {p!r}")
    seeds = [int(s) for s in seeds]
    notes = []
    if len(seeds) < 2:
        msg = "fewer than 2 seeds: significance tests skipped"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    if "baseline" not in presets:
        presets = ["baseline"] + presets
    if gan is None and any(p in NEEDS_GAN for p in presets):
        gan = train_gan_for(data, config, gan_seed)
    results: dict[str, list[PresetResult]] = {p: [] for p in presets}
    for seed in seeds:
        teacher, base = run_preset("baseline", data, config, seed)
        results["baseline"].append(base)
        if on_result:
            on_result(base)
        for p in presets:
            if p == "baseline":
                continue
            _, res = run_preset(p, data, config, seed, gan=gan, teacher=teacher)
            results[p].append(res)
            if on_result:
                on_result(res)
    return AblationTable(presets, seeds, results, notes=notes)
