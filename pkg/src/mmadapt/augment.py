"""Training-time augmentation.

One geometric transform (random resize, horizontal flip, pad-if-needed,
random crop) is applied identically to rgb, aux and label so pixel
correspondence is preserved; photometric distortion and Gaussian blur touch
the RGB raster only. Labels are resized nearest-neighbor and padded with the
ignore index. All randomness comes from the seed, so a fixed
(sample, seed) pair is bit-reproducible regardless of worker layout.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .config import AugmentConfig
from .data import SampleRecord

_BRIGHTNESS_DELTA = 32.0 / 255.0
_CONTRAST_RANGE = (0.5, 1.5)
_SATURATION_RANGE = (0.5, 1.5)
_HUE_DELTA = 18.0 / 360.0
_BLUR_KERNEL = 5
_BLUR_SIGMA = (0.1, 2.0)


def _resize_image(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    t = torch.from_numpy(arr).permute(2, 0, 1)[None].float()
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


def _resize_label(label: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    t = torch.from_numpy(label)[None, None].float()
    out = F.interpolate(t, size=size, mode="nearest-exact")
    return out[0, 0].round().long().numpy()


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.maximum(delta, 1e-12)
    h = np.where(
        maxc == r, ((g - b) / safe) % 6.0,
        np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta == 0, 0.0, h / 6.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack([v, t, p], axis=-1), np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1), np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1), np.stack([v, p, q], axis=-1),
    ]
    out = np.zeros_like(hsv)
    for idx, choice in enumerate(choices):
        out[i == idx] = choice[i == idx]
    return out


def _photometric(rgb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    ops = list(rng.permutation(4))
    for op in ops:
        if op == 0:
            rgb = rgb + rng.uniform(-_BRIGHTNESS_DELTA, _BRIGHTNESS_DELTA)
        elif op == 1:
            rgb = rgb * rng.uniform(*_CONTRAST_RANGE)
        elif op == 2:
            hsv = rgb_to_hsv(np.clip(rgb, 0.0, 1.0))
            hsv[..., 1] = np.clip(hsv[..., 1] * rng.uniform(*_SATURATION_RANGE), 0.0, 1.0)
            rgb = hsv_to_rgb(hsv)
        else:
            hsv = rgb_to_hsv(np.clip(rgb, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + rng.uniform(-_HUE_DELTA, _HUE_DELTA)) % 1.0
            rgb = hsv_to_rgb(hsv)
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def _gaussian_blur(rgb: np.ndarray, sigma: float) -> np.ndarray:
    half = _BLUR_KERNEL // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel = (kernel / kernel.sum()).astype(np.float32)
    t = torch.from_numpy(rgb).permute(2, 0, 1)[None]
    k = torch.from_numpy(kernel)
    t = F.pad(t, (half, half, half, half), mode="reflect")
    t = F.conv2d(t, k.view(1, 1, 1, -1).expand(3, 1, 1, -1), groups=3)
    t = F.conv2d(t, k.view(1, 1, -1, 1).expand(3, 1, -1, 1), groups=3)
    return t[0].permute(1, 2, 0).numpy()


def augment(sample: SampleRecord, cfg: AugmentConfig, seed: int | list[int],
            ignore_index: int = 255) -> SampleRecord:
    """Return an augmented copy; identical seeds give bit-identical outputs."""
    rng = np.random.default_rng(seed)
    rgb, aux, label = sample.rgb, sample.aux, sample.label
    h, w = label.shape

    ratio = rng.uniform(*cfg.resize_range)
    new_h, new_w = max(1, round(h * ratio)), max(1, round(w * ratio))
    if (new_h, new_w) != (h, w):
        rgb = _resize_image(rgb, (new_h, new_w))
        aux = _resize_image(aux, (new_h, new_w))
        label = _resize_label(label, (new_h, new_w))

    if rng.random() < cfg.hflip_prob:
        rgb = rgb[:, ::-1].copy()
        aux = aux[:, ::-1].copy()
        label = label[:, ::-1].copy()

    if cfg.photometric:
        rgb = _photometric(rgb, rng)
    if rng.random() < cfg.blur_prob:
        rgb = _gaussian_blur(rgb, rng.uniform(*_BLUR_SIGMA))

    crop = cfg.crop_size
    pad_h, pad_w = max(0, crop - label.shape[0]), max(0, crop - label.shape[1])
    if pad_h or pad_w:
        rgb = np.pad(rgb, ((0, pad_h), (0, pad_w), (0, 0)))
        aux = np.pad(aux, ((0, pad_h), (0, pad_w), (0, 0)))
        label = np.pad(label, ((0, pad_h), (0, pad_w)), constant_values=ignore_index)
    if crop > label.shape[0] or crop > label.shape[1]:
        raise RuntimeError("crop exceeds padded image; padding must have been applied first")
    y0 = int(rng.integers(0, label.shape[0] - crop + 1))
    x0 = int(rng.integers(0, label.shape[1] - crop + 1))
    rgb = np.ascontiguousarray(rgb[y0 : y0 + crop, x0 : x0 + crop]).astype(np.float32)
    aux = np.ascontiguousarray(aux[y0 : y0 + crop, x0 : x0 + crop]).astype(np.float32)
    label = np.ascontiguousarray(label[y0 : y0 + crop, x0 : x0 + crop])
    return SampleRecord(id=sample.id, rgb=rgb, aux=aux, label=label, condition=sample.condition)
