"""Image quality metrics and perceptual metric plugins."""
from __future__ import annotations

import csv
import importlib
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import ConfigError, DimensionMismatchError
from .losses import PerceptualMetric

if TYPE_CHECKING:
    from collections.abc import Iterable
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5: an 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03
ABSENT = "absent"


class Metrics(NamedTuple):
    """Quality of one rendered image against its reference."""

    psnr: float
    ssim: float
    lpips: float | None = None


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[FloatArray, FloatArray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        msg = f"Images differ in shape: {a.shape} vs {b.shape}."
        raise DimensionMismatchError(msg)
    return a, b


def psnr(a: ArrayLike, b: ArrayLike) -> float:
    """Peak signal-to-noise ratio of [0, 1] images in dB, capped at 99."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _ssim_channel(x: FloatArray, y: FloatArray) -> float:
    c1, c2 = SSIM_K1**2, SSIM_K2**2

    def blur(image: FloatArray) -> FloatArray:
        return gaussian_filter(image, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    if min(ssim_map.shape) > 2 * pad:
        ssim_map = ssim_map[pad:-pad, pad:-pad]
    return float(ssim_map.mean())


def ssim(a: ArrayLike, b: ArrayLike) -> float:
    """Structural similarity with a Gaussian window, averaged over channels.

    The border where the window leaves the image is excluded.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:  # noqa: PLR2004
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[-1])]))


def compute_metrics(rendered: ArrayLike, reference: ArrayLike, perceptual: PerceptualMetric | None = None) -> Metrics:
    """PSNR, SSIM and, with a plugin, a perceptual distance."""
    rendered, reference = _pair(rendered, reference)
    lpips = None if perceptual is None else float(perceptual.value(rendered, reference))
    return Metrics(psnr(rendered, reference), ssim(rendered, reference), lpips)


def load_metric_plugin(target: str) -> PerceptualMetric:
    """Instantiate ``module:factory``; the factory must return a perceptual metric."""
    module_name, _, attr = target.partition(":")
    if not module_name or not attr:
        msg = f"Perceptual plugin must look like 'module:factory', got {target!r}."
        raise ConfigError(msg)
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        msg = f"Cannot load perceptual plugin {target!r}: {exc}"
        raise ConfigError(msg) from exc
    metric = factory()
    if not isinstance(metric, PerceptualMetric):
        msg = f"{target} did not return an object with value() and gradient()."
        raise ConfigError(msg)
    return metric


def write_metrics_csv(path: Path, rows: Iterable[tuple[str, Metrics]]) -> Path:
    """One row per view; the lpips column reads ``absent`` without a plugin."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "psnr", "ssim", "lpips"])
        for name, m in rows:
            writer.writerow([name, f"{m.psnr:.6f}", f"{m.ssim:.6f}", ABSENT if m.lpips is None else f"{m.lpips:.6f}"])
    return path


__all__ = ["Metrics", "compute_metrics", "load_metric_plugin", "psnr", "ssim", "write_metrics_csv"]
