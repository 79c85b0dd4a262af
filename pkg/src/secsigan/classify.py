"""Teacher classifier, three-branch student, pseudo-labels and training loops.

Classifiers consume unit-range N x 3 x H x W tensors and return logits; use
:func:`predict_proba` for probability vectors. The student takes translation
triples in the fixed slot order (original, translation, reconstruction),
whatever the origin domain.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .csigan import GanModel, param_checksum, translate_batch
from .dataio import (
    CLASS_INDEX,
    CLASSES,
    AugmentConfig,
    DomainTag,
    ImageRecord,
    ImageTensor,
    TissueClass,
    ValueRange,
    augment_batch,
    load_images,
)

log = logging.getLogger(__name__)

NUM_CLASSES = len(CLASSES)
DOMAIN_CODE = {DomainTag.WLI: 0, DomainTag.NBI: 1}
BACKBONES = ("VGG16", "VGG19", "InceptionV3", "DenseNet", "ResNet50", "ResNet101", "TOY")
_IMAGENET_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
_IMAGENET_STD = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)


class UntrainedTeacherError(RuntimeError):
    pass


class FrozenComponentError(RuntimeError):
    pass


# --------------------------------------------------------------------------- labels


class LabelSource(str, Enum):
    TEACHER = "teacher"
    GROUND_TRUTH = "ground_truth"


@dataclass
class PseudoLabel:
    probs: np.ndarray
    mode: str = "soft"
    source: LabelSource = LabelSource.TEACHER

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (NUM_CLASSES,):
            raise ValueError(f"expected {NUM_CLASSES} probabilities, got shape {self.probs.shape}")
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be soft or hard, got {self.mode!r}")


@dataclass
class ClassPrediction:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)

    @property
    def index(self) -> int:
        # np.argmax returns the first maximum: HGC < LGC < NTL < NST
        return int(np.argmax(self.probs))

    @property
    def predicted(self) -> TissueClass:
        return CLASSES[self.index]


def one_hot(index: int, n: int = NUM_CLASSES) -> np.ndarray:
    v = np.zeros(n)
    v[index] = 1.0
    return v


def cross_entropy(target: PseudoLabel | np.ndarray, pred: ClassPrediction | np.ndarray) -> float:
    """``-sum_i t_i log p_i`` with ``p`` clamped to ``[1e-12, 1]``."""
    t = target.probs if isinstance(target, PseudoLabel) else np.asarray(target, dtype=np.float64)
    p = pred.probs if isinstance(pred, ClassPrediction) else np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {p.shape}")
    return float(-(t * np.log(np.clip(p, 1e-12, 1.0))).sum())


def cross_entropy_probs(target: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Batched torch form on probability vectors, mean over the batch."""
    if target.shape != probs.shape:
        raise ValueError(f"dimension mismatch: {tuple(target.shape)} vs {tuple(probs.shape)}")
    return -(target * torch.log(probs.clamp(1e-12, 1.0))).sum(-1).mean()


def soft_cross_entropy(logits: torch.Tensor, target: torch.Tensor, class_weights: torch.Tensor | None = None) -> torch.Tensor:
    """Cross-entropy against (soft) target distributions, computed from logits."""
    per = -(target * F.log_softmax(logits, dim=-1))
    if class_weights is not None:
        per = per * class_weights
    return per.sum(-1).mean()


# --------------------------------------------------------------------------- networks


class ToyBackbone(nn.Module):
    """Small from-scratch CNN for desk-scale runs."""

    def __init__(self, width: int = 16):
        super().__init__()
        w = width
        self.net = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1),
            nn.BatchNorm2d(w),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 3, padding=1),
            nn.BatchNorm2d(2 * w),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * w, 4 * w, 3, padding=1),
            nn.BatchNorm2d(4 * w),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.feature_dim = 4 * w

    def forward(self, x):
        return self.net(x)


def build_backbone(backbone_id: str, pretrained: bool = False, toy_width: int = 16) -> tuple[nn.Module, int]:
    """Feature extractor and its output width. Pretrained weights need network access."""
    if backbone_id == "TOY":
        net = ToyBackbone(toy_width)
        return net, net.feature_dim
    import torchvision.models as tvm

    w = "DEFAULT" if pretrained else None
    if backbone_id in ("ResNet50", "ResNet101"):
        net = (tvm.resnet50 if backbone_id == "ResNet50" else tvm.resnet101)(weights=w)
        dim = net.fc.in_features
        net.fc = nn.Identity()
    elif backbone_id in ("VGG16", "VGG19"):
        net = (tvm.vgg16 if backbone_id == "VGG16" else tvm.vgg19)(weights=w)
        dim = net.classifier[-1].in_features
        net.classifier = net.classifier[:-1]
    elif backbone_id == "DenseNet":
        net = tvm.densenet121(weights=w)
        dim = net.classifier.in_features
        net.classifier = nn.Identity()
    elif backbone_id == "InceptionV3":
        net = tvm.inception_v3(weights=w, aux_logits=True, init_weights=not pretrained)
        net.aux_logits = False
        net.AuxLogits = None
        dim = net.fc.in_features
        net.fc = nn.Identity()
    else:
        raise ValueError(f"unknown backbone {backbone_id!r}; choose from {BACKBONES}")
    return net, dim


def fc_stack(in_dim: int, widths: Sequence[int], dropout: float = 0.0) -> nn.Sequential:
    layers: list[nn.Module] = []
    for w in widths:
        layers += [nn.Linear(in_dim, w), nn.ReLU(inplace=True)]
        if dropout:
            layers.append(nn.Dropout(dropout))
        in_dim = w
    return nn.Sequential(*layers)


@dataclass
class ClassifierConfig:
    backbone_id: str = "ResNet101"
    head_widths: tuple[int, ...] = (512, 256, 128)
    pretrained: bool = False
    dropout: float = 0.0
    toy_width: int = 16
    num_classes: int = NUM_CLASSES
    shared_backbone: bool = False

    def __post_init__(self):
        self.head_widths = tuple(self.head_widths)
        if self.backbone_id not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone_id!r}")
        if len(self.head_widths) != 3:
            raise ValueError("the head has exactly three fully connected layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_widths"] = list(self.head_widths)
        return d


class ClassifierModel(nn.Module):
    """Backbone, three FC layers, class layer. ``forward`` returns logits."""

    def __init__(self, config: ClassifierConfig | None = None):
        super().__init__()
        self.config = config or ClassifierConfig()
        self.backbone, dim = build_backbone(self.config.backbone_id, self.config.pretrained, self.config.toy_width)
        self.head = fc_stack(dim, self.config.head_widths, self.config.dropout)
        self.classifier = nn.Linear(self.config.head_widths[-1], self.config.num_classes)
        self.normalize = self.config.backbone_id != "TOY"
        self.trained = False

    def features(self, x):
        if self.normalize:
            x = (x - _IMAGENET_MEAN.to(x)) / _IMAGENET_STD.to(x)
        return self.head(self.backbone(x))

    def forward(self, x):
        return self.classifier(self.features(x))


class SlotClassifier(nn.Module):
    """Single-branch classifier reading one slot of a triple (0 original, 1 translation, 2 reconstruction)."""

    def __init__(self, model: ClassifierModel, slot: int = 0):
        super().__init__()
        if slot not in (0, 1, 2):
            raise ValueError("slot must be 0, 1 or 2")
        self.model = model
        self.slot = slot
        self.trained = False

    @property
    def config(self):
        return self.model.config

    def forward(self, x1, x2=None, x3=None):
        return self.model((x1, x2, x3)[self.slot])


class MultiInputClassifier(nn.Module):
    """Three backbones with separate FC stacks, concatenated into one class layer.

    With ``config.shared_backbone`` the three branches reuse one feature
    extractor (heads stay separate), which stands in for the common
    pretrained starting point when backbones are trained from scratch.
    """

    def __init__(self, config: ClassifierConfig | None = None):
        super().__init__()
        self.config = config or ClassifierConfig()
        self.branches = nn.ModuleList()
        self.heads = nn.ModuleList()
        shared = None
        for _ in range(3):
            if shared is None or not self.config.shared_backbone:
                net, dim = build_backbone(self.config.backbone_id, self.config.pretrained, self.config.toy_width)
                shared = (net, dim)
            net, dim = shared
            self.branches.append(net)
            self.heads.append(fc_stack(dim, self.config.head_widths, self.config.dropout))
        self.classifier = nn.Linear(3 * self.config.head_widths[-1], self.config.num_classes)
        self.normalize = self.config.backbone_id != "TOY"
        self.trained = False

    def forward(self, x1, x2, x3):
        feats = []
        for net, head, x in zip(self.branches, self.heads, (x1, x2, x3)):
            if x.shape[1:] != x1.shape[1:]:
                raise ValueError(f"branch input shape {tuple(x.shape)} differs from {tuple(x1.shape)}")
            if self.normalize:
                x = (x - _IMAGENET_MEAN.to(x)) / _IMAGENET_STD.to(x)
            feats.append(head(net(x)))
        return self.classifier(torch.cat(feats, dim=1))


def init_classifier(config: ClassifierConfig, seed: int, multi_input: bool = False) -> nn.Module:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return MultiInputClassifier(config) if multi_input else ClassifierModel(config)


@torch.no_grad()
def predict_proba(model: nn.Module, *inputs: torch.Tensor, chunk: int = 256) -> torch.Tensor:
    was = model.training
    model.eval()
    n = inputs[0].shape[0]
    out = [F.softmax(model(*(x[i : i + chunk] for x in inputs)), dim=-1) for i in range(0, n, chunk)]
    model.train(was)
    if not out:
        return torch.zeros((0, NUM_CLASSES))
    return torch.cat(out)


# --------------------------------------------------------------------------- data


@dataclass
class ImageSet:
    """A batch of unit-range images with labels (-1 = unlabeled) and domain codes (0 WLI, 1 NBI)."""

    images: torch.Tensor
    labels: torch.Tensor
    domains: torch.Tensor
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        self.domains = torch.as_tensor(self.domains, dtype=torch.long)
        if not (len(self.images) == len(self.labels) == len(self.domains)):
            raise ValueError("images, labels and domains must have equal length")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, mask_or_idx) -> "ImageSet":
        idx = torch.as_tensor(mask_or_idx)
        if idx.dtype == torch.bool:
            idx = idx.nonzero().flatten()
        paths = [self.paths[i] for i in idx.tolist()] if self.paths else []
        return ImageSet(self.images[idx], self.labels[idx], self.domains[idx], paths)

    def domain(self, domain: DomainTag) -> "ImageSet":
        return self.subset(self.domains == DOMAIN_CODE[DomainTag(domain)])

    def hide_labels(self, domain: DomainTag | None = None) -> "ImageSet":
        labels = self.labels.clone()
        if domain is None:
            labels[:] = -1
        else:
            labels[self.domains == DOMAIN_CODE[DomainTag(domain)]] = -1
        return ImageSet(self.images, labels, self.domains, list(self.paths))

    @property
    def labeled_mask(self) -> torch.Tensor:
        return self.labels >= 0

    @property
    def domain_tags(self) -> list[DomainTag]:
        inv = {v: k for k, v in DOMAIN_CODE.items()}
        return [inv[int(d)] for d in self.domains]

    @classmethod
    def from_records(cls, records: Sequence[ImageRecord], size: tuple[int, int]) -> "ImageSet":
        records = list(records)
        labels = [CLASS_INDEX[r.tissue] if r.labeled else -1 for r in records]
        domains = [DOMAIN_CODE[r.domain] for r in records]
        return cls(load_images(records, size, ValueRange.UNIT), labels, domains, [r.image_path for r in records])

    @classmethod
    def concat(cls, *sets: "ImageSet") -> "ImageSet":
        sets = [s for s in sets if s is not None and len(s)]
        if not sets:
            raise ValueError("nothing to concatenate")
        return cls(
            torch.cat([s.images for s in sets]),
            torch.cat([s.labels for s in sets]),
            torch.cat([s.domains for s in sets]),
            [p for s in sets for p in s.paths],
        )


def build_triples(gan: GanModel | None, data: ImageSet) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(original, translation, reconstruction) unit-range tensors for every image."""
    x = data.images
    if gan is None:
        return x, x, x
    trans = torch.empty_like(x)
    rec = torch.empty_like(x)
    for domain, code in DOMAIN_CODE.items():
        idx = (data.domains == code).nonzero().flatten()
        if len(idx) == 0:
            continue
        t, r = translate_batch(gan, x[idx] * 2 - 1, domain)
        trans[idx] = ((t + 1) / 2).to(x.dtype)
        rec[idx] = ((r + 1) / 2).to(x.dtype)
    return x, trans, rec


# --------------------------------------------------------------------------- training

# What the teacher sees when labelling an unlabeled image: the image itself, or
# its labeled-domain (WLI) view, i.e. the translation for NBI images.
PSEUDO_LABEL_INPUTS = ("original", "labeled_domain_view")


@dataclass
class ClassifierTrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 30
    weight_decay: float = 0.0
    seed: int = 0
    pseudo_label_mode: str = "soft"
    pseudo_label_input: str = "original"
    class_weighting: bool = False
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(rotation_degrees=15.0, hflip_prob=0.5, vflip_prob=0.5))

    def __post_init__(self):
        if isinstance(self.augment, dict):
            aug = dict(self.augment)
            for k in ("crop_size", "output_size"):
                if aug.get(k) is not None:
                    aug[k] = tuple(aug[k])
            self.augment = AugmentConfig(**aug)
        if self.pseudo_label_mode not in ("soft", "hard"):
            raise ValueError("pseudo_label_mode must be soft or hard")
        if self.pseudo_label_input not in PSEUDO_LABEL_INPUTS:
            raise ValueError(f"pseudo_label_input must be one of {PSEUDO_LABEL_INPUTS}")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and learning_rate > 0 required")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("epoch", "split", "loss", "acc"))
            w.writeheader()
            for r in self.rows:
                w.writerow(r)
        return path


def _class_weights(targets: torch.Tensor) -> torch.Tensor:
    mass = targets.sum(0)
    w = torch.where(mass > 0, mass.sum() / (NUM_CLASSES * mass.clamp_min(1e-12)), torch.zeros_like(mass))
    return w


def _fit(
    model: nn.Module,
    inputs: tuple[torch.Tensor, ...],
    targets: torch.Tensor,
    config: ClassifierTrainConfig,
    val_inputs: tuple[torch.Tensor, ...] | None,
    val_labels: torch.Tensor | None,
) -> TrainHistory:
    """Minibatch Adam on soft targets; augmentation touches input slot 0 only.

    Keeps the weights of the epoch with the best validation accuracy (ties:
    lower validation loss), or the last epoch without validation data.
    """
    rng = np.random.default_rng(config.seed)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
        weights = _class_weights(targets) if config.class_weighting else None
        history = TrainHistory(metadata={"learning_rate": config.learning_rate, "batch_size": config.batch_size, "optimizer": "adam"})
        best_key, best_state = None, None
        n = len(targets)
        for epoch in range(1, config.epochs + 1):
            model.train()
            perm = rng.permutation(n)
            total, correct, seen = 0.0, 0, 0
            for s in range(0, n, config.batch_size):
                idx = torch.from_numpy(perm[s : s + config.batch_size])
                if len(idx) < 2 and n >= 2:
                    continue  # batch norm needs more than one sample
                batch = [x[idx] for x in inputs]
                batch[0] = augment_batch(batch[0], config.augment, rng)
                t = targets[idx]
                logits = model(*batch)
                loss = soft_cross_entropy(logits, t, weights)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
                correct += int((logits.argmax(-1) == t.argmax(-1)).sum())
                seen += len(idx)
            if seen:
                history.rows.append({"epoch": epoch, "split": "train", "loss": total / seen, "acc": correct / seen})
            if val_inputs is not None and val_labels is not None and len(val_labels):
                probs = predict_proba(model, *val_inputs)
                vloss = float(soft_cross_entropy(torch.log(probs.clamp_min(1e-12)), F.one_hot(val_labels, NUM_CLASSES).float()))
                vacc = float((probs.argmax(-1) == val_labels).float().mean())
                history.rows.append({"epoch": epoch, "split": "val", "loss": vloss, "acc": vacc})
                key = (vacc, -vloss)
                if best_key is None or key > best_key:
                    best_key, best_state = key, copy.deepcopy(model.state_dict())
                    history.best_epoch = epoch
        if best_state is not None:
            model.load_state_dict(best_state)
        else:
            history.best_epoch = config.epochs
    model.eval()
    model.trained = True
    return history


def _one_hot_labels(labels: torch.Tensor) -> torch.Tensor:
    return F.one_hot(labels, NUM_CLASSES).float()


def _warn_missing_classes(labels: torch.Tensor) -> None:
    present = set(labels.tolist())
    missing = [CLASSES[i].value for i in range(NUM_CLASSES) if i not in present]
    if missing:
        warnings.warn(f"classes absent from the training fold: {missing}", stacklevel=3)


def train_teacher(
    model: ClassifierModel,
    train: ImageSet,
    val: ImageSet | None,
    config: ClassifierTrainConfig,
) -> tuple[ClassifierModel, TrainHistory]:
    """Fully supervised training on labeled WLI images."""
    if len(train) == 0:
        raise ValueError("empty labeled training set")
    if bool((train.labels < 0).any()) or bool((train.domains != DOMAIN_CODE[DomainTag.WLI]).any()):
        raise ValueError("teacher training data must be labeled WLI images only")
    _warn_missing_classes(train.labels)
    val_inputs = val_labels = None
    if val is not None and len(val):
        val = val.subset(val.labeled_mask)
        val_inputs, val_labels = (val.images,), val.labels
    history = _fit(model, (train.images,), _one_hot_labels(train.labels), config, val_inputs, val_labels)
    return model, history


@torch.no_grad()
def pseudo_label_batch(teacher: nn.Module, images: torch.Tensor, mode: str = "soft") -> torch.Tensor:
    if not getattr(teacher, "trained", False):
        raise UntrainedTeacherError("teacher has not been trained or loaded from a checkpoint")
    probs = predict_proba(teacher, images)
    if mode == "soft":
        return probs
    if mode == "hard":
        return _one_hot_labels(probs.argmax(-1))
    raise ValueError(f"mode must be soft or hard, got {mode!r}")


def pseudo_label(teacher: nn.Module, x: ImageTensor, mode: str = "soft") -> PseudoLabel:
    img = x.to_range(ValueRange.UNIT).to_chw()[None]
    probs = pseudo_label_batch(teacher, img, mode)[0].double().numpy()
    return PseudoLabel(probs, mode, LabelSource.TEACHER)


def student_forward(model: nn.Module, triple) -> ClassPrediction:
    """Probability vector for one :class:`~secsigan.csigan.TranslationTriple`."""
    xs = [t.to_range(ValueRange.UNIT).to_chw()[None] for t in (triple.original, triple.translated, triple.reconstructed)]
    return ClassPrediction(predict_proba(model, *xs)[0].double().numpy())


def _needs_gan(model: nn.Module) -> bool:
    return not (isinstance(model, (ClassifierModel,)) or (isinstance(model, SlotClassifier) and model.slot == 0))


def _forward_inputs(model: nn.Module, triple: tuple[torch.Tensor, ...]) -> tuple[torch.Tensor, ...]:
    return (triple[0],) if isinstance(model, ClassifierModel) else triple


def _teacher_view(gan: GanModel | None, data: ImageSet, which: str) -> torch.Tensor:
    if which == "original":
        return data.images
    if gan is None:
        raise ValueError("labeled_domain_view pseudo-labels need a GAN")
    out = data.images.clone()
    idx = (data.domains == DOMAIN_CODE[DomainTag.NBI]).nonzero().flatten()
    if len(idx):
        t, _ = translate_batch(gan, data.images[idx] * 2 - 1, DomainTag.NBI)
        out[idx] = ((t + 1) / 2).to(out.dtype)
    return out


def train_student_semisup(
    student: nn.Module,
    teacher: nn.Module | None,
    gan: GanModel | None,
    labeled: ImageSet,
    unlabeled: ImageSet | None,
    val: ImageSet | None,
    config: ClassifierTrainConfig,
) -> tuple[nn.Module, TrainHistory]:
    """Train on labeled triples plus teacher-pseudo-labeled unlabeled triples.

    Ground truth wins where present; unlabeled samples get the teacher's soft
    (or hard) prediction on the un-augmented original, or on its WLI-domain
    view when ``config.pseudo_label_input == "labeled_domain_view"``. The GAN and teacher
    are only read; their parameter checksums are verified afterwards.
    """
    if gan is None and _needs_gan(student):
        raise ValueError("this student reads translated slots and needs a GAN")
    if unlabeled is not None and len(unlabeled) and teacher is None:
        raise ValueError("unlabeled data requires a teacher")
    if len(labeled) == 0 and (unlabeled is None or len(unlabeled) == 0):
        raise ValueError("empty training pool")
    checks = {}
    if gan is not None:
        checks["gan"] = (gan, param_checksum(gan))
    if teacher is not None:
        checks["teacher"] = (teacher, param_checksum(teacher))

    labeled = labeled.subset(labeled.labeled_mask)
    pool = labeled
    targets = _one_hot_labels(labeled.labels)
    n_pseudo = 0
    if unlabeled is not None and len(unlabeled):
        un = unlabeled.subset(~unlabeled.labeled_mask)
        if len(un):
            pseudo = pseudo_label_batch(teacher, _teacher_view(gan, un, config.pseudo_label_input), config.pseudo_label_mode)
            pool = ImageSet.concat(labeled, un) if len(labeled) else un
            targets = torch.cat([targets, pseudo]) if len(labeled) else pseudo
            n_pseudo = len(un)
    if len(labeled):
        _warn_missing_classes(labeled.labels)
    triple = build_triples(gan if _needs_gan(student) else None, pool)
    val_inputs = val_labels = None
    if val is not None and len(val):
        val = val.subset(val.labeled_mask)
        vt = build_triples(gan if _needs_gan(student) else None, val)
        val_inputs, val_labels = _forward_inputs(student, vt), val.labels
    history = _fit(student, _forward_inputs(student, triple), targets, config, val_inputs, val_labels)
    history.metadata.update(
        {
            "n_labeled": len(labeled),
            "n_pseudo": n_pseudo,
            "pseudo_label_mode": config.pseudo_label_mode,
            "pseudo_label_input": config.pseudo_label_input,
        }
    )
    for name, (net, before) in checks.items():
        if param_checksum(net) != before:
            raise FrozenComponentError(f"{name} weights changed during student training")
    return student, history


def predict(model: nn.Module, gan: GanModel | None, data: ImageSet) -> torch.Tensor:
    """Class probabilities for every image of ``data`` (triples built as needed)."""
    triple = build_triples(gan if _needs_gan(model) else None, data)
    return predict_proba(model, *_forward_inputs(model, triple))


ARMS = ("b1_only", "b2_only", "b3_only", "full")


def make_arm_model(arm: str, config: ClassifierConfig, seed: int) -> nn.Module:
    if arm == "b1_only":
        return init_classifier(config, seed)
    if arm in ("b2_only", "b3_only"):
        return SlotClassifier(init_classifier(config, seed), slot=1 if arm == "b2_only" else 2)
    if arm == "full":
        return init_classifier(config, seed, multi_input=True)
    raise ValueError(f"invalid arm {arm!r}; choose from {ARMS}")


def ablation_branch_run(
    arm: str,
    gan: GanModel | None,
    labeled: ImageSet,
    val: ImageSet | None,
    test: ImageSet,
    classifier_config: ClassifierConfig,
    train_config: ClassifierTrainConfig,
) -> tuple[nn.Module, dict]:
    """Fully supervised single-branch (or full three-branch) run; report tagged with the arm."""
    from .evaluate import per_domain_report

    model = make_arm_model(arm, classifier_config, train_config.seed)
    if arm == "b1_only":
        model, _ = train_teacher(model, labeled, val, train_config)
    else:
        model, _ = train_student_semisup(model, None, gan, labeled, None, val, train_config)
    probs = predict(model, gan, test)
    reports = per_domain_report(probs.numpy(), test.labels.numpy(), test.domain_tags)
    return model, {"arm": arm, "reports": {k: v.to_dict() for k, v in reports.items()}}


# --------------------------------------------------------------------------- checkpoints


def save_classifier(model: nn.Module, run_dir: str | Path, train_config: ClassifierTrainConfig | None = None, history: TrainHistory | None = None) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    kind = type(model).__name__
    doc = {"kind": kind, "classifier": model.config.to_dict()}
    if isinstance(model, SlotClassifier):
        doc["slot"] = model.slot
    if train_config is not None:
        doc["train"] = train_config.to_dict()
    (run_dir / "config.json").write_text(json.dumps(doc, indent=2))
    torch.save(model.state_dict(), run_dir / "model.weights")
    if history is not None:
        history.to_csv(run_dir / "history.csv")
    return run_dir


def load_classifier(run_dir: str | Path) -> nn.Module:
    run_dir = Path(run_dir)
    cfg = run_dir / "config.json"
    if not cfg.is_file():
        raise FileNotFoundError(f"no classifier config at {cfg}")
    doc = json.loads(cfg.read_text())
    c = ClassifierConfig(**doc["classifier"])
    if doc["kind"] == "MultiInputClassifier":
        model = MultiInputClassifier(c)
    elif doc["kind"] == "SlotClassifier":
        model = SlotClassifier(ClassifierModel(c), doc.get("slot", 0))
    else:
        model = ClassifierModel(c)
    model.load_state_dict(torch.load(run_dir / "model.weights", weights_only=True))
    model.eval()
    model.trained = True
    return model
