"""SSIM, covariance and MSE shared by the GAN loss and the evaluation code.

SSIM here uses *global* image statistics per channel,

    F(x, y) = (2 mu_x mu_y + c1)(2 cov_xy + c2) / ((mu_x^2 + mu_y^2 + c1)(var_x + var_y + c2))

with unbiased (m - 1) normalisation for the variances and covariance, averaged
over the RGB channels. :func:`ssim_windowed` is the usual Gaussian-window SSIM,
provided as an extension and not used by the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .dataio import ImageTensor, ValueRange


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM stabilisers c1, c2 must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @classmethod
    def for_range(cls, value_range: ValueRange, k1: float = 0.01, k2: float = 0.03) -> "SsimParams":
        return cls(k1, k2, ValueRange(value_range).width)


def covariance(x, y) -> float:
    """Unbiased covariance of two equally sized pixel planes."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"pixel count mismatch: {x.size} vs {y.size}")
    m = x.size
    if m < 2:
        raise ValueError("covariance needs at least 2 pixels")
    return float(np.dot(x - x.mean(), y - y.mean()) / (m - 1))


def _unwrap_pair(x, y, params: SsimParams | None):
    if isinstance(x, ImageTensor) or isinstance(y, ImageTensor):
        if not (isinstance(x, ImageTensor) and isinstance(y, ImageTensor)):
            raise TypeError("pass two ImageTensors or two arrays")
        if x.value_range is not y.value_range:
            raise ValueError(f"value range mismatch: {x.value_range.value} vs {y.value_range.value}")
        if params is None:
            params = SsimParams.for_range(x.value_range)
        x, y = x.data, y.data
    elif params is None:
        params = SsimParams()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y, params


def ssim(x, y, params: SsimParams | None = None) -> float:
    """Global-statistics SSIM of two H x W x C images, averaged over channels.

    Accepts :class:`ImageTensor` pairs (the range must agree and sets the
    dynamic range when ``params`` is omitted) or raw arrays.
    """
    x, y, params = _unwrap_pair(x, y, params)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    x = x.reshape(-1, x.shape[-1])
    y = y.reshape(-1, y.shape[-1])
    m = x.shape[0]
    if m < 2:
        raise ValueError("SSIM needs at least 2 pixels per channel")
    mx, my = x.mean(0), y.mean(0)
    dx, dy = x - mx, y - my
    vx = (dx * dx).sum(0) / (m - 1)
    vy = (dy * dy).sum(0) / (m - 1)
    cxy = (dx * dy).sum(0) / (m - 1)
    c1, c2 = params.c1, params.c2
    per_channel = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(per_channel.mean())


def mse(x, y) -> float:
    if isinstance(x, ImageTensor):
        x = x.data
    if isinstance(y, ImageTensor):
        y = y.data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def ssim_batch(x: torch.Tensor, y: torch.Tensor, params: SsimParams) -> torch.Tensor:
    """Differentiable global SSIM for N x C x H x W batches; returns shape (N,)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    n, c = x.shape[:2]
    xf = x.reshape(n, c, -1)
    yf = y.reshape(n, c, -1)
    m = xf.shape[-1]
    if m < 2:
        raise ValueError("SSIM needs at least 2 pixels per channel")
    mx, my = xf.mean(-1), yf.mean(-1)
    dx, dy = xf - mx[..., None], yf - my[..., None]
    vx = (dx * dx).sum(-1) / (m - 1)
    vy = (dy * dy).sum(-1) / (m - 1)
    cxy = (dx * dy).sum(-1) / (m - 1)
    num = (2 * mx * my + params.c1) * (2 * cxy + params.c2)
    den = (mx**2 + my**2 + params.c1) * (vx + vy + params.c2)
    return (num / den).mean(-1)


def mse_batch(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-sample MSE of N x ... batches; returns shape (N,)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).reshape(x.shape[0], -1).mean(-1)


def _gaussian_window(size: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim_windowed(x, y, params: SsimParams | None = None, window: int = 11, sigma: float = 1.5) -> float:
    """Sliding Gaussian-window SSIM (extension; not part of the training loss)."""
    x, y, params = _unwrap_pair(x, y, params)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    win = min(window, x.shape[0], x.shape[1])
    tx = torch.from_numpy(x.transpose(2, 0, 1))[None]
    ty = torch.from_numpy(y.transpose(2, 0, 1))[None]
    c = tx.shape[1]
    kernel = _gaussian_window(win, sigma).expand(c, 1, win, win)

    def blur(t):
        return F.conv2d(t, kernel, groups=c)

    mx, my = blur(tx), blur(ty)
    vx = blur(tx * tx) - mx**2
    vy = blur(ty * ty) - my**2
    cxy = blur(tx * ty) - mx * my
    smap = ((2 * mx * my + params.c1) * (2 * cxy + params.c2)) / ((mx**2 + my**2 + params.c1) * (vx + vy + params.c2))
    return float(smap.mean())
