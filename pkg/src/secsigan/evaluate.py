"""Evaluation metrics: FID, noise sensitivity, classification reports, Mann-Whitney U."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy import stats as sps

from .dataio import CLASS_INDEX, CLASSES, DomainTag, TissueClass

DEFAULT_SIGMAS = (0.025, 0.05, 0.075, 0.1, 0.2)
STRATA = ("ALL", "WLI", "NBI")


# --------------------------------------------------------------------------- FID


@dataclass
class FeatureSet:
    features: np.ndarray
    extractor_id: str = "array"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        if self.features.shape[0] < 2:
            raise ValueError("need at least 2 feature rows")

    @cached_property
    def mean(self) -> np.ndarray:
        return self.features.mean(axis=0)

    @cached_property
    def cov(self) -> np.ndarray:
        c = np.cov(self.features, rowvar=False).reshape(self.features.shape[1], self.features.shape[1])
        return (c + c.T) / 2

    @property
    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean, self.cov


def _psd_sqrt(c: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(stats_real, stats_gen, tol: float = 1e-6) -> float:
    """Fréchet distance ``|m - m_w|^2 + Tr(C + C_w - 2 (C C_w)^(1/2))``.

    The trace of the square root is taken from the symmetric similar matrix
    ``C^(1/2) C_w C^(1/2)``, eigenvalues clamped at zero. Eigenvalues below
    ``-tol`` raise; a trace residue in ``(-tol, 0)`` is clamped to 0.
    """
    m1, c1 = (np.asarray(a, dtype=np.float64) for a in stats_real)
    m2, c2 = (np.asarray(a, dtype=np.float64) for a in stats_gen)
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    c1, c2 = np.atleast_2d(c1), np.atleast_2d(c2)
    if m1.shape != m2.shape or c1.shape != c2.shape or c1.shape != (m1.size, m1.size):
        raise ValueError(f"dimension mismatch: {m1.shape}/{c1.shape} vs {m2.shape}/{c2.shape}")
    s1 = _psd_sqrt(c1, tol)
    _psd_sqrt(c2, tol)
    w = np.linalg.eigvalsh((s1 @ c2 @ s1 + (s1 @ c2 @ s1).T) / 2)
    if w.min(initial=0.0) < -tol:
        raise ValueError("covariance product has a negative eigenvalue; square root undefined")
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    d = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    if d < 0:
        if d < -tol:
            raise ValueError(f"negative FID {d:.3g}; inputs are not valid covariances")
        d = 0.0
    return d


class ToyExtractor(nn.Module):
    """Fixed random conv features (seed 0); deterministic stand-in for Inception in tests."""

    def __init__(self, dim: int = 32):
        super().__init__()
        gen = torch.Generator().manual_seed(0)
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, dim, 3, stride=2, padding=1)
        with torch.no_grad():
            for m in (self.conv1, self.conv2):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) / math.sqrt(m.weight[0].numel()))
                m.bias.zero_()
        self.eval()

    @torch.no_grad()
    def forward(self, x):
        h = torch.relu(self.conv2(torch.relu(self.conv1(x))))
        return torch.cat([h.mean((2, 3)), x.mean((2, 3))], dim=1)


def _inception_pool():
    import torchvision.models as tvm

    net = tvm.inception_v3(weights="DEFAULT", aux_logits=True)
    net.fc = nn.Identity()
    net.eval()
    return net


_EXTRACTORS = {"toy": ToyExtractor, "inception": _inception_pool}


@torch.no_grad()
def extract_features(images: torch.Tensor, extractor_id: str = "toy", batch: int = 64) -> FeatureSet:
    """Per-image features of a unit-range N x 3 x H x W batch."""
    if extractor_id not in _EXTRACTORS:
        raise ValueError(f"unknown extractor {extractor_id!r}; available: {sorted(_EXTRACTORS)}")
    if len(images) < 2:
        raise ValueError("need at least 2 images")
    net = _EXTRACTORS[extractor_id]()
    x = images.float()
    if extractor_id == "inception":
        x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        x = (x - mean) / std
    rows = [net(x[i : i + batch]) for i in range(0, len(x), batch)]
    return FeatureSet(torch.cat(rows).double().numpy(), extractor_id)


# --------------------------------------------------------------------------- sensitivity


@dataclass
class SensitivityCurve:
    sigmas: np.ndarray
    sn: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        self.sn = np.asarray(self.sn, dtype=np.float64)
        if self.sigmas.shape != self.sn.shape:
            raise ValueError("sigmas and sn must have equal length")
        if np.any(np.diff(self.sigmas) <= 0):
            raise ValueError("sigmas must be strictly increasing")

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.sigmas.tolist(), self.sn.tolist()))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "sn"])
            w.writerows(self.points)
        return path


@torch.no_grad()
def sensitivity_curve(
    gan,
    images: torch.Tensor,
    domains: Sequence[DomainTag],
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    seed: int = 0,
    label: str = "",
) -> SensitivityCurve:
    """Mean reconstruction MSE after adding N(0, sigma) noise to the translation.

    ``images`` are symmetric-range N x 3 x H x W; each is translated by the
    generator of its own domain, perturbed (no clamping), mapped back and
    compared with the original in the same range.
    """
    if len(images) == 0:
        raise ValueError("empty image set")
    if len(sigmas) == 0:
        raise ValueError("need at least one sigma")
    domains = [DomainTag(d) for d in domains]
    if len(domains) != len(images):
        raise ValueError("one domain tag per image required")
    gen = torch.Generator().manual_seed(seed)
    translated = torch.empty_like(images)
    for dom in DomainTag:
        idx = torch.tensor([i for i, d in enumerate(domains) if d is dom], dtype=torch.long)
        if len(idx):
            translated[idx] = gan.generator(dom)(images[idx])
    sn = []
    for sigma in sigmas:
        noisy = translated + torch.randn(translated.shape, generator=gen, dtype=translated.dtype) * sigma
        rec = torch.empty_like(images)
        for dom in DomainTag:
            idx = torch.tensor([i for i, d in enumerate(domains) if d is dom], dtype=torch.long)
            if len(idx):
                rec[idx] = gan.generator(dom.other)(noisy[idx])
        per_image = ((rec - images) ** 2).reshape(len(images), -1).mean(1)
        sn.append(float(per_image.mean()))
    return SensitivityCurve(np.asarray(sigmas, dtype=np.float64), np.asarray(sn), label)


def curve_auc(curve: SensitivityCurve, normalized: bool = False) -> float:
    """Trapezoidal area under SN(sigma); ``normalized`` divides by the sigma span."""
    if len(curve.sigmas) < 2:
        raise ValueError("AUC needs at least two curve points")
    s, y = curve.sigmas, curve.sn
    area = float(np.sum((s[1:] - s[:-1]) * (y[1:] + y[:-1]) / 2.0))
    if normalized:
        area /= float(s[-1] - s[0])
    return area


# --------------------------------------------------------------------------- classification


def _as_indices(values) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, TissueClass):
            if v is TissueClass.UNLABELED:
                raise ValueError("truth labels must be one of the four tissue classes")
            out.append(CLASS_INDEX[v])
        elif isinstance(v, str):
            out.append(CLASS_INDEX[TissueClass(v)])
        elif hasattr(v, "index") and hasattr(v, "probs"):
            out.append(v.index)
        else:
            out.append(int(v))
    arr = np.asarray(out, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= len(CLASSES)):
        raise ValueError("class indices must lie in 0..3")
    return arr


def _pred_indices(preds) -> np.ndarray:
    arr = preds if isinstance(preds, np.ndarray) else None
    if arr is not None and arr.ndim == 2:
        return np.argmax(arr, axis=1)
    return _as_indices(preds)


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n: int = len(CLASSES)) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def mcc_from_confusion(cm: np.ndarray) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K); 0 when undefined."""
    cm = cm.astype(np.float64)
    s = cm.sum()
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    num = c * s - t @ p
    den = math.sqrt(s * s - p @ p) * math.sqrt(s * s - t @ t)
    return float(num / den) if den > 0 else 0.0


def kappa_from_confusion(cm: np.ndarray) -> float:
    """Cohen's kappa; 0 when chance agreement is total (single class everywhere)."""
    cm = cm.astype(np.float64)
    n = cm.sum()
    po = np.trace(cm) / n
    pe = float(cm.sum(axis=1) @ cm.sum(axis=0)) / (n * n)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


@dataclass
class MetricsReport:
    stratum: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    cohen_kappa: float
    confusion: np.ndarray
    per_class: dict = field(default_factory=dict)
    average: str = "macro"

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "cohen_kappa": self.cohen_kappa,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def classification_report(preds, truth, stratum: str = "ALL", average: str = "macro") -> MetricsReport:
    """Accuracy, precision, recall, F1, MCC and kappa over the four tissue classes.

    ``preds`` may be ClassPredictions, class indices/names, or an N x 4
    probability array. Precision/recall/F1 are averaged over classes present
    in ``truth`` (``average="weighted"`` weights them by support); a class with
    no predictions has precision 0.
    """
    if average not in ("macro", "weighted"):
        raise ValueError("average must be macro or weighted")
    p = _pred_indices(preds)
    t = _as_indices(truth)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(t)} labels")
    if len(t) == 0:
        raise ValueError("empty input")
    cm = confusion_matrix(t, p)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    per_class = {}
    present = []
    for i, cls in enumerate(CLASSES):
        tp = cm[i, i]
        prec = tp / predicted[i] if predicted[i] else 0.0
        rec = tp / support[i] if support[i] else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[cls.value] = {
            "precision": float(prec),
            "recall": float(rec),
            "f1": float(f1),
            "support": int(support[i]),
            "present": bool(support[i] > 0),
        }
        if support[i]:
            present.append(i)
    weights = support[present].astype(np.float64)
    weights = weights / weights.sum() if average == "weighted" else np.full(len(present), 1.0 / len(present))

    def avg(key):
        return float(sum(w * per_class[CLASSES[i].value][key] for w, i in zip(weights, present)))

    return MetricsReport(
        stratum=stratum,
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=avg("precision"),
        recall=avg("recall"),
        f1=avg("f1"),
        mcc=mcc_from_confusion(cm),
        cohen_kappa=kappa_from_confusion(cm),
        confusion=cm,
        per_class=per_class,
        average=average,
    )


def per_domain_report(preds, truth, domains: Sequence[DomainTag], average: str = "macro") -> dict[str, MetricsReport]:
    """Reports for ALL (computed over the union) and each non-empty domain stratum."""
    domains = [DomainTag(d) for d in domains]
    if not (len(domains) == len(truth) == len(preds)):
        raise ValueError("preds, truth and domains must have equal length")
    p = _pred_indices(preds)
    t = _as_indices(truth)
    out = {"ALL": classification_report(p, t, "ALL", average)}
    for dom in DomainTag:
        mask = np.array([d is dom for d in domains])
        if mask.any():
            out[dom.value] = classification_report(p[mask], t[mask], dom.value, average)
    return out


# --------------------------------------------------------------------------- significance


@dataclass
class SignificanceResult:
    u_statistic: float
    p_value: float
    method: str


EXACT_MAX_N = 10


def _exact_counts(doubled_ranks: np.ndarray, n_a: int) -> dict[int, int]:
    """Number of size-``n_a`` subsets per sum of doubled midranks."""
    total = int(doubled_ranks.sum())
    dp = np.zeros((n_a + 1, total + 1), dtype=np.float64)
    dp[0, 0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        dp[1:, r:] = dp[1:, r:] + dp[:-1, : total + 1 - r]
    row = dp[n_a]
    return {s: int(round(row[s])) for s in np.nonzero(row)[0]}


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float], exact_max_n: int = EXACT_MAX_N) -> SignificanceResult:
    """Two-sided Mann-Whitney U test; U is reported for ``sample_a``.

    Exact permutation distribution (tie-aware, midranks) when both samples
    have at most ``exact_max_n`` values, otherwise the normal approximation
    with tie and continuity correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = a.size, b.size
    ranks = sps.rankdata(np.concatenate([a, b]))
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2)
    mu = n_a * n_b / 2
    if n_a <= exact_max_n and n_b <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_counts(doubled, n_a)
        obs = int(doubled[:n_a].sum())
        centre = n_a * (n_a + n_b + 1)  # doubled expected rank sum
        dev = abs(obs - centre)
        extreme = sum(c for s, c in counts.items() if abs(s - centre) >= dev)
        p = extreme / math.comb(n_a + n_b, n_a)
        return SignificanceResult(u, min(1.0, float(p)), "exact")
    n = n_a + n_b
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return SignificanceResult(u, 1.0, "normal_approx")
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    p = 2.0 * sps.norm.sf(max(z, 0.0))
    return SignificanceResult(u, min(1.0, float(p)), "normal_approx")

