"""Cycle-consistency translation network with an SSIM similarity loss.

Two residual encoder-decoder generators (``g_ab``: WLI -> NBI, ``g_ba``:
NBI -> WLI) and two patch discriminators (``d_a`` judges WLI, ``d_b`` NBI).
Images on the GAN path live in the symmetric [-1, 1] range.

Generator objective::

    adv_ab + adv_ba + l1 * sim_a + l2 * sim_b + l3 * cyc_a + l4 * cyc_b

With ``lambda1 = lambda2 = 0`` this is a plain cycle GAN.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import DatasetManifest, DomainTag, ImageTensor, ValueRange, load_images
from .ssim_metrics import SsimParams, ssim_batch

log = logging.getLogger(__name__)

LOG_ADVERSARIAL = "log_adversarial"
LEAST_SQUARES = "least_squares"
GAN_LOSS_MODES = (LOG_ADVERSARIAL, LEAST_SQUARES)
EPS = 1e-7

HISTORY_FIELDS = ("epoch", "adv_ab", "adv_ba", "sim_a", "sim_b", "cyc_a", "cyc_b", "total_g", "total_d")


class DomainMismatchError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


# --------------------------------------------------------------------------- networks


@dataclass(frozen=True)
class ArchitectureSpec:
    in_channels: int = 3
    ngf: int = 64
    n_blocks: int = 9
    n_downsampling: int = 2
    ndf: int = 64
    n_disc_layers: int = 3
    norm: str = "instance"

    def __post_init__(self):
        for name in ("in_channels", "ngf", "ndf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_blocks < 0 or self.n_downsampling < 0 or self.n_disc_layers < 0:
            raise ValueError("block/layer counts must be non-negative")
        if self.norm not in ("instance", "none"):
            raise ValueError(f"norm must be 'instance' or 'none', got {self.norm!r}")

    def check_input(self, shape) -> None:
        """Raise if an (…, C, H, W) shape cannot pass through the generators."""
        c, h, w = shape[-3:]
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        f = 2**self.n_downsampling
        if h % f or w % f:
            raise ValueError(f"H and W must be divisible by {f}, got {h}x{w}")
        if min(h, w) // f < 2 or min(h, w) <= 3:
            raise ValueError(f"input {h}x{w} too small for {self.n_downsampling} downsampling steps")


def _norm(kind: str, channels: int) -> nn.Module:
    return nn.InstanceNorm2d(channels) if kind == "instance" else nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, norm: str):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(norm, channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(norm, channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """c7s1-ngf, stride-2 downsampling, residual blocks, transposed-conv upsampling, tanh."""

    def __init__(self, spec: ArchitectureSpec, source: DomainTag, target: DomainTag):
        super().__init__()
        self.source_domain = DomainTag(source)
        self.target_domain = DomainTag(target)
        self.spec = spec
        c, nf = spec.in_channels, spec.ngf
        layers: list[nn.Module] = [nn.ReflectionPad2d(3), nn.Conv2d(c, nf, 7), _norm(spec.norm, nf), nn.ReLU(inplace=True)]
        for _ in range(spec.n_downsampling):
            layers += [nn.Conv2d(nf, nf * 2, 3, stride=2, padding=1), _norm(spec.norm, nf * 2), nn.ReLU(inplace=True)]
            nf *= 2
        layers += [ResidualBlock(nf, spec.norm) for _ in range(spec.n_blocks)]
        for _ in range(spec.n_downsampling):
            layers += [
                nn.ConvTranspose2d(nf, nf // 2, 3, stride=2, padding=1, output_padding=1),
                _norm(spec.norm, nf // 2),
                nn.ReLU(inplace=True),
            ]
            nf //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(nf, c, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """PatchGAN realness map; sigmoid head when the log adversarial loss is active."""

    def __init__(self, spec: ArchitectureSpec, domain: DomainTag, probability_head: bool = True):
        super().__init__()
        self.domain = DomainTag(domain)
        self.probability_head = probability_head
        nf = spec.ndf
        layers: list[nn.Module] = [nn.Conv2d(spec.in_channels, nf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, spec.n_disc_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [nn.Conv2d(nf * prev, nf * mult, 4, stride=2, padding=1), _norm(spec.norm, nf * mult), nn.LeakyReLU(0.2, True)]
        if spec.n_disc_layers >= 1:
            prev, mult = mult, min(2**spec.n_disc_layers, 8)
            layers += [nn.Conv2d(nf * prev, nf * mult, 4, stride=1, padding=1), _norm(spec.norm, nf * mult), nn.LeakyReLU(0.2, True)]
        layers += [nn.Conv2d(nf * mult, 1, 4, stride=1, padding=1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        out = self.model(x)
        return torch.sigmoid(out) if self.probability_head else out


class IdentityGenerator(nn.Module):
    """Stub generator returning its input; used for loss identities and sanity checks."""

    def __init__(self, source: DomainTag, target: DomainTag):
        super().__init__()
        self.source_domain = DomainTag(source)
        self.target_domain = DomainTag(target)

    def forward(self, x):
        return x


class ConstantGenerator(IdentityGenerator):
    def __init__(self, source: DomainTag, target: DomainTag, value: float):
        super().__init__(source, target)
        self.value = value

    def forward(self, x):
        return torch.full_like(x, self.value)


class ConstantDiscriminator(nn.Module):
    """Stub discriminator emitting a fixed realness value, optionally different on a marked 'real' batch."""

    def __init__(self, domain: DomainTag, value: float | Callable[[torch.Tensor], torch.Tensor], probability_head: bool = True):
        super().__init__()
        self.domain = DomainTag(domain)
        self.value = value
        self.probability_head = probability_head

    def forward(self, x):
        if callable(self.value):
            return self.value(x)
        return torch.full((x.shape[0], 1, 2, 2), float(self.value), dtype=x.dtype)


class GanModel(nn.Module):
    def __init__(self, g_ab: nn.Module, g_ba: nn.Module, d_a: nn.Module, d_b: nn.Module, spec: ArchitectureSpec | None = None):
        super().__init__()
        self.g_ab, self.g_ba, self.d_a, self.d_b = g_ab, g_ba, d_a, d_b
        self.spec = spec

    def generator(self, source: DomainTag) -> nn.Module:
        return self.g_ab if DomainTag(source) is DomainTag.WLI else self.g_ba

    def discriminator(self, domain: DomainTag) -> nn.Module:
        return self.d_a if DomainTag(domain) is DomainTag.WLI else self.d_b

    def set_loss_mode(self, mode: str) -> None:
        if mode not in GAN_LOSS_MODES:
            raise ValueError(f"unknown gan_loss_mode {mode!r}")
        for d in (self.d_a, self.d_b):
            d.probability_head = mode == LOG_ADVERSARIAL


def _init_weights(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()


def init_gan(spec: ArchitectureSpec | None = None, seed: int = 0, gan_loss_mode: str = LOG_ADVERSARIAL) -> GanModel:
    """Build G_AB, G_BA, D_A, D_B with N(0, 0.02) weights drawn from ``seed``."""
    spec = spec or ArchitectureSpec()
    if gan_loss_mode not in GAN_LOSS_MODES:
        raise ValueError(f"unknown gan_loss_mode {gan_loss_mode!r}")
    head = gan_loss_mode == LOG_ADVERSARIAL
    model = GanModel(
        ResnetGenerator(spec, DomainTag.WLI, DomainTag.NBI),
        ResnetGenerator(spec, DomainTag.NBI, DomainTag.WLI),
        PatchDiscriminator(spec, DomainTag.WLI, head),
        PatchDiscriminator(spec, DomainTag.NBI, head),
        spec,
    )
    gen = torch.Generator().manual_seed(int(seed))
    for net in (model.g_ab, model.g_ba, model.d_a, model.d_b):
        _init_weights(net, gen)
    return model


def param_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------- losses


def _check_direction(g_pq, domain: DomainTag | None) -> None:
    src = getattr(g_pq, "source_domain", None)
    if domain is not None and src is not None and DomainTag(domain) is not src:
        raise DomainMismatchError(f"batch is {DomainTag(domain).value} but generator maps {src.value} -> {g_pq.target_domain.value}")


def cycle_loss(g_pq: nn.Module, g_qp: nn.Module, x_p: torch.Tensor, domain: DomainTag | None = None) -> torch.Tensor:
    """Mean absolute round-trip error ``|x_p - G_qp(G_pq(x_p))|`` over the batch."""
    _check_direction(g_pq, domain)
    if getattr(g_pq, "target_domain", None) is not None and getattr(g_qp, "source_domain", None) is not None:
        if g_pq.target_domain is not g_qp.source_domain:
            raise DomainMismatchError("generators do not compose into a round trip")
    return (x_p - g_qp(g_pq(x_p))).abs().mean()


def _log_value(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return torch.log(d_real.clamp(EPS, 1 - EPS)).mean() + torch.log((1 - d_fake).clamp(EPS, 1 - EPS)).mean()


def _ls_value(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return ((d_real - 1) ** 2).mean() + (d_fake**2).mean()


def _check_adv(generator, discriminator, real, source):
    if real.shape[0] == 0 or source.shape[0] == 0:
        raise ValueError("adversarial loss needs non-empty batches")
    tgt = getattr(generator, "target_domain", None)
    dom = getattr(discriminator, "domain", None)
    if tgt is not None and dom is not None and tgt is not dom:
        raise DomainMismatchError(f"generator targets {tgt.value} but discriminator judges {dom.value}")


def adversarial_loss(
    generator: nn.Module,
    discriminator: nn.Module,
    real: torch.Tensor,
    source: torch.Tensor,
    mode: str = LOG_ADVERSARIAL,
    fake: torch.Tensor | None = None,
) -> torch.Tensor:
    """Adversarial objective between ``generator`` and the discriminator of its target domain.

    ``real`` holds real images of the target domain, ``source`` the images the
    generator translates. In log mode this is
    ``E[log D(real)] + E[log(1 - D(G(source)))]`` (the discriminator maximises
    it, the generator minimises it) with probabilities clamped to
    ``[1e-7, 1 - 1e-7]``. In least-squares mode it is the discriminator loss
    ``E[(D(real) - 1)^2] + E[D(G(source))^2]``.
    """
    _check_adv(generator, discriminator, real, source)
    if fake is None:
        fake = generator(source)
    if mode == LOG_ADVERSARIAL:
        return _log_value(discriminator(real), discriminator(fake))
    if mode == LEAST_SQUARES:
        return _ls_value(discriminator(real), discriminator(fake))
    raise ValueError(f"unknown gan_loss_mode {mode!r}")


def generator_adversarial_term(generator, discriminator, real, source, mode=LOG_ADVERSARIAL, fake=None) -> torch.Tensor:
    """The adversarial term the generator minimises (log: the full value, LS: ``E[(D(G(x)) - 1)^2]``)."""
    if mode == LOG_ADVERSARIAL:
        _check_adv(generator, discriminator, real, source)
        if fake is None:
            fake = generator(source)
        with torch.no_grad():
            real_term = torch.log(discriminator(real).clamp(EPS, 1 - EPS)).mean()
        return real_term + torch.log((1 - discriminator(fake)).clamp(EPS, 1 - EPS)).mean()
    if mode == LEAST_SQUARES:
        _check_adv(generator, discriminator, real, source)
        if fake is None:
            fake = generator(source)
        return ((discriminator(fake) - 1) ** 2).mean()
    raise ValueError(f"unknown gan_loss_mode {mode!r}")


def discriminator_adversarial_term(discriminator, real, fake, mode=LOG_ADVERSARIAL) -> torch.Tensor:
    """What a discriminator minimises, given already-generated (detached) fakes."""
    fake = fake.detach()
    if mode == LOG_ADVERSARIAL:
        return -_log_value(discriminator(real), discriminator(fake))
    if mode == LEAST_SQUARES:
        return _ls_value(discriminator(real), discriminator(fake))
    raise ValueError(f"unknown gan_loss_mode {mode!r}")


def _to_unit(x: torch.Tensor) -> torch.Tensor:
    return (x + 1.0) / 2.0


def similarity_terms(
    g_ab: nn.Module,
    g_ba: nn.Module,
    x_a: torch.Tensor,
    x_b: torch.Tensor,
    params: SsimParams | None = None,
    fake_b: torch.Tensor | None = None,
    fake_a: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """``(1 - mean SSIM(x_A, G_AB(x_A)), 1 - mean SSIM(x_B, G_BA(x_B)))``.

    SSIM is taken on the unit-range view of the symmetric GAN tensors.
    """
    params = params or SsimParams()
    if fake_b is None:
        fake_b = g_ab(x_a)
    if fake_a is None:
        fake_a = g_ba(x_b)
    if fake_b.shape != x_a.shape or fake_a.shape != x_b.shape:
        raise ValueError("generator output shape differs from its input")
    sim_a = 1.0 - ssim_batch(_to_unit(x_a), _to_unit(fake_b), params).mean()
    sim_b = 1.0 - ssim_batch(_to_unit(x_b), _to_unit(fake_a), params).mean()
    return sim_a, sim_b


def similarity_loss(g_ab, g_ba, x_a, x_b, params: SsimParams | None = None) -> torch.Tensor:
    sim_a, sim_b = similarity_terms(g_ab, g_ba, x_a, x_b, params)
    return sim_a + sim_b


@dataclass
class GanTrainConfig:
    lambda1: float = 2.0
    lambda2: float = 2.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 150
    batch_size: int = 1
    gan_loss_mode: str = LOG_ADVERSARIAL
    seed: int = 0
    image_size: tuple[int, int] = (256, 256)
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    checkpoint_every: int = 0
    # epochs at the initial rate before a linear decay towards zero; None keeps it constant
    lr_decay_start: int | None = None

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gan_loss_mode not in GAN_LOSS_MODES:
            raise ValueError(f"unknown gan_loss_mode {self.gan_loss_mode!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.lr_decay_start is not None and not 0 <= self.lr_decay_start <= self.epochs:
            raise ValueError("lr_decay_start must lie in [0, epochs]")

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    @property
    def ssim_params(self) -> SsimParams:
        return SsimParams(self.ssim_k1, self.ssim_k2, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        schedule = "constant" if self.lr_decay_start is None else f"linear_decay_after_{self.lr_decay_start}"
        d["optimizer"] = {"name": "adam", "betas": [self.beta1, self.beta2], "schedule": schedule}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanTrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class LossBreakdown:
    adv_ab: torch.Tensor
    adv_ba: torch.Tensor
    sim_a: torch.Tensor
    sim_b: torch.Tensor
    cyc_a: torch.Tensor
    cyc_b: torch.Tensor
    weights: tuple[float, float, float, float]
    fake_a: torch.Tensor | None = field(default=None, repr=False)
    fake_b: torch.Tensor | None = field(default=None, repr=False)

    def weighted(self) -> dict[str, torch.Tensor]:
        l1, l2, l3, l4 = self.weights
        return {
            "adv_ab": self.adv_ab,
            "adv_ba": self.adv_ba,
            "sim_a": l1 * self.sim_a,
            "sim_b": l2 * self.sim_b,
            "cyc_a": l3 * self.cyc_a,
            "cyc_b": l4 * self.cyc_b,
        }

    @property
    def total_g(self) -> torch.Tensor:
        parts = self.weighted()
        total = parts["adv_ab"] + parts["adv_ba"]
        for k in ("sim_a", "sim_b", "cyc_a", "cyc_b"):
            total = total + parts[k]
        return total

    def as_floats(self) -> dict[str, float]:
        out = {k: float(getattr(self, k).detach()) for k in ("adv_ab", "adv_ba", "sim_a", "sim_b", "cyc_a", "cyc_b")}
        out["total_g"] = float(self.total_g.detach())
        out.update({f"lambda{i + 1}": w for i, w in enumerate(self.weights)})
        return out


def total_objective(model: GanModel, x_a: torch.Tensor, x_b: torch.Tensor, config: GanTrainConfig, include_similarity: bool = True) -> LossBreakdown:
    """Generator-side loss breakdown for one pair of batches.

    ``include_similarity=False`` drops the SSIM terms from the graph entirely
    (a plain cycle GAN build); with zero SSIM weights the gradients agree.
    """
    mode = config.gan_loss_mode
    fake_b = model.g_ab(x_a)
    fake_a = model.g_ba(x_b)
    adv_ab = generator_adversarial_term(model.g_ab, model.d_b, x_b, x_a, mode, fake=fake_b)
    adv_ba = generator_adversarial_term(model.g_ba, model.d_a, x_a, x_b, mode, fake=fake_a)
    if include_similarity:
        sim_a, sim_b = similarity_terms(model.g_ab, model.g_ba, x_a, x_b, config.ssim_params, fake_b=fake_b, fake_a=fake_a)
        weights = config.lambdas
    else:
        sim_a = sim_b = torch.zeros((), dtype=x_a.dtype)
        weights = (0.0, 0.0, config.lambda3, config.lambda4)
    cyc_a = (x_a - model.g_ba(fake_b)).abs().mean()
    cyc_b = (x_b - model.g_ab(fake_a)).abs().mean()
    return LossBreakdown(adv_ab, adv_ba, sim_a, sim_b, cyc_a, cyc_b, weights, fake_a=fake_a, fake_b=fake_b)


def discriminator_objective(model: GanModel, x_a, x_b, fake_a, fake_b, config: GanTrainConfig) -> torch.Tensor:
    mode = config.gan_loss_mode
    return discriminator_adversarial_term(model.d_a, x_a, fake_a, mode) + discriminator_adversarial_term(model.d_b, x_b, fake_b, mode)


# --------------------------------------------------------------------------- training


@dataclass
class LossHistory:
    epochs: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def column(self, key: str) -> list[float]:
        return [e[key] for e in self.epochs]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
            w.writeheader()
            for e in self.epochs:
                w.writerow(e)
        return path


def _requires_grad(nets, flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def fit_gan(
    model: GanModel,
    images_a: torch.Tensor,
    images_b: torch.Tensor,
    config: GanTrainConfig,
    ckpt_dir: str | Path | None = None,
    on_epoch: Callable[[int, dict], None] | None = None,
) -> tuple[GanModel, LossHistory]:
    """Alternate generator and discriminator Adam steps over unpaired batches.

    Each epoch runs ``ceil(max(nA, nB) / batch_size)`` steps; the two domains
    are shuffled independently with a generator seeded from ``config.seed``.
    """
    if len(images_a) == 0 or len(images_b) == 0:
        raise ValueError("GAN training needs images from both domains")
    if model.spec is not None:
        model.spec.check_input(images_a.shape)
        model.spec.check_input(images_b.shape)
    model.set_loss_mode(config.gan_loss_mode)
    gens = [model.g_ab, model.g_ba]
    discs = [model.d_a, model.d_b]
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam([p for g in gens for p in g.parameters()], lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam([p for d in discs for p in d.parameters()], lr=config.learning_rate, betas=betas)
    schedulers = []
    if config.lr_decay_start is not None:
        n_decay = config.epochs - config.lr_decay_start
        factor = lambda e: 1.0 - max(0, e + 1 - config.lr_decay_start) / (n_decay + 1)  # noqa: E731
        schedulers = [torch.optim.lr_scheduler.LambdaLR(o, factor) for o in (opt_g, opt_d)]
    rng = np.random.default_rng(config.seed)
    na, nb, bs = len(images_a), len(images_b), config.batch_size
    steps = -(-max(na, nb) // bs)
    history = LossHistory()
    ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else None
    if ckpt_dir is not None:
        write_gan_config(ckpt_dir, model, config)
    model.train()
    for epoch in range(1, config.epochs + 1):
        perm_a = np.concatenate([rng.permutation(na) for _ in range(-(-steps * bs // na))])
        perm_b = np.concatenate([rng.permutation(nb) for _ in range(-(-steps * bs // nb))])
        sums = {k: 0.0 for k in HISTORY_FIELDS[1:]}
        for step in range(steps):
            x_a = images_a[perm_a[step * bs : (step + 1) * bs]]
            x_b = images_b[perm_b[step * bs : (step + 1) * bs]]

            _requires_grad(discs, False)
            opt_g.zero_grad(set_to_none=True)
            parts = total_objective(model, x_a, x_b, config)
            total_g = parts.total_g
            total_g.backward()
            opt_g.step()

            _requires_grad(discs, True)
            opt_d.zero_grad(set_to_none=True)
            total_d = discriminator_objective(model, x_a, x_b, parts.fake_a, parts.fake_b, config)
            total_d.backward()
            opt_d.step()

            values = {k: float(getattr(parts, k).detach()) for k in ("adv_ab", "adv_ba", "sim_a", "sim_b", "cyc_a", "cyc_b")}
            values["total_g"] = float(total_g.detach())
            values["total_d"] = float(total_d.detach())
            if not all(np.isfinite(v) for v in values.values()):
                snapshot = {"epoch": epoch, "step": step, "losses": values, "config": config.to_dict()}
                if ckpt_dir is not None:
                    (ckpt_dir / "nonfinite_snapshot.json").write_text(json.dumps(snapshot, indent=2, default=str))
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch} step {step}: {values}", snapshot)
            for k, v in values.items():
                sums[k] += v
        for sched in schedulers:
            sched.step()
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        history.epochs.append(row)
        log.info("gan epoch %d: %s", epoch, {k: round(v, 4) for k, v in row.items() if k != "epoch"})
        if on_epoch is not None:
            on_epoch(epoch, row)
        if ckpt_dir is not None:
            history.to_csv(ckpt_dir / "history.csv")
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_gan(model, ckpt_dir, epoch)
    if ckpt_dir is not None:
        save_gan(model, ckpt_dir, config.epochs)
    model.eval()
    return model, history


def train_gan(
    model: GanModel,
    manifest: DatasetManifest,
    config: GanTrainConfig,
    ckpt_dir: str | Path | None = None,
) -> tuple[GanModel, LossHistory]:
    """Load both domains of ``manifest`` at ``config.image_size`` and run :func:`fit_gan`."""
    recs_a = [r for r in manifest.records if r.domain is DomainTag.WLI]
    recs_b = [r for r in manifest.records if r.domain is DomainTag.NBI]
    if not recs_a or not recs_b:
        raise ValueError("manifest must contain both WLI and NBI images")
    x_a = load_images(recs_a, config.image_size, ValueRange.SYMMETRIC)
    x_b = load_images(recs_b, config.image_size, ValueRange.SYMMETRIC)
    return fit_gan(model, x_a, x_b, config, ckpt_dir)


# --------------------------------------------------------------------------- checkpoints

_NETS = ("g_ab", "g_ba", "d_a", "d_b")


def write_gan_config(run_dir: str | Path, model: GanModel, config: GanTrainConfig) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = config.to_dict()
    doc["architecture"] = asdict(model.spec) if model.spec is not None else None
    path = run_dir / "config.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def save_gan(model: GanModel, run_dir: str | Path, epoch: int) -> Path:
    out = Path(run_dir) / f"epoch_{epoch}"
    out.mkdir(parents=True, exist_ok=True)
    for name in _NETS:
        torch.save(getattr(model, name).state_dict(), out / f"{name}.weights")
    return out


def load_gan(run_dir: str | Path, epoch: int | None = None) -> tuple[GanModel, GanTrainConfig]:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"no GAN config at {cfg_path}")
    doc = json.loads(cfg_path.read_text())
    config = GanTrainConfig.from_dict(doc)
    spec = ArchitectureSpec(**doc["architecture"])
    if epoch is None:
        epochs = sorted(int(p.name.split("_")[1]) for p in run_dir.glob("epoch_*") if p.is_dir())
        if not epochs:
            raise FileNotFoundError(f"no epoch checkpoints under {run_dir}")
        epoch = epochs[-1]
    model = init_gan(spec, config.seed, config.gan_loss_mode)
    for name in _NETS:
        path = run_dir / f"epoch_{epoch}" / f"{name}.weights"
        getattr(model, name).load_state_dict(torch.load(path, weights_only=True))
    model.eval()
    return model, config


def frozen_copy(model: GanModel) -> GanModel:
    m = copy.deepcopy(model)
    m.eval()
    _requires_grad([m], False)
    return m


# --------------------------------------------------------------------------- translation


@dataclass
class TranslationTriple:
    original: ImageTensor
    translated: ImageTensor
    reconstructed: ImageTensor
    origin_domain: DomainTag

    @property
    def translated_domain(self) -> DomainTag:
        return self.origin_domain.other

    @property
    def reconstructed_domain(self) -> DomainTag:
        return self.origin_domain

    def __post_init__(self):
        shapes = {self.original.shape, self.translated.shape, self.reconstructed.shape}
        ranges = {self.original.value_range, self.translated.value_range, self.reconstructed.value_range}
        if len(shapes) != 1 or len(ranges) != 1:
            raise ValueError("triple tensors must share shape and value range")


@torch.no_grad()
def translate_batch(model: GanModel, x: torch.Tensor, origin: DomainTag, chunk: int = 64) -> tuple[torch.Tensor, torch.Tensor]:
    """Translate an N x 3 x H x W symmetric-range batch; returns (translated, reconstructed)."""
    origin = DomainTag(origin)
    if model.spec is not None:
        model.spec.check_input(x.shape)
    fwd, back = (model.g_ab, model.g_ba) if origin is DomainTag.WLI else (model.g_ba, model.g_ab)
    was_training = model.training
    model.eval()
    trans, rec = [], []
    for i in range(0, len(x), chunk):
        t = fwd(x[i : i + chunk])
        trans.append(t)
        rec.append(back(t))
    model.train(was_training)
    if not trans:
        return x.clone(), x.clone()
    return torch.cat(trans), torch.cat(rec)


def translate_triple(model: GanModel, x: ImageTensor, origin: DomainTag) -> TranslationTriple:
    origin = DomainTag(origin)
    sym = x.to_range(ValueRange.SYMMETRIC)
    t, r = translate_batch(model, sym.to_chw()[None], origin)
    vr = ValueRange.SYMMETRIC
    triple = TranslationTriple(sym, ImageTensor.from_chw(t[0], vr), ImageTensor.from_chw(r[0], vr), origin)
    if x.value_range is not vr:
        triple = TranslationTriple(
            x, triple.translated.to_range(x.value_range), triple.reconstructed.to_range(x.value_range), origin
        )
    return triple
