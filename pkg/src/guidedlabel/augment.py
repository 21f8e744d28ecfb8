"""Stochastic image augmentation: affine (rotation/scale/shear), elastic
distortion by a Gaussian-smoothed random displacement field, horizontal
mirroring, and center crop/pad back to a target size.

All warps use bilinear interpolation with background fill 0 and are applied
about the image center. Shear is parameterized in pixels: a shear of s px
displaces the outermost row/column by s. Composition order is fixed
(affine, elastic, mirror, crop) for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates


@dataclass(frozen=True)
class ImageSample:
    """A (height, width, channels) float image in [0, 1] with a stable id."""
    pixels: np.ndarray
    id: int


@dataclass(frozen=True)
class AugmentPolicy:
    rotation_range_deg: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    shear_range_px: float = 0.0
    elastic: tuple[float, float] | None = None  # (alpha, sigma)
    mirror_horizontal: bool = False
    target_size: tuple[int, int] = (28, 28)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError("scale_range must satisfy 0 < min <= max")
        if self.rotation_range_deg < 0 or self.shear_range_px < 0:
            raise ValueError("rotation and shear ranges must be >= 0")
        if self.elastic is not None and self.elastic[1] <= 0:
            raise ValueError("elastic sigma must be > 0")


def mnist_policy() -> AugmentPolicy:
    """Rotation +/-25 deg, scale 0.8-1.2, shear +/-20 px on both axes,
    elastic distortion, crop back to 28x28."""
    return AugmentPolicy(rotation_range_deg=25.0, scale_range=(0.8, 1.2),
                         shear_range_px=20.0, elastic=(8.0, 4.0),
                         mirror_horizontal=False, target_size=(28, 28))


def cifar_policy() -> AugmentPolicy:
    """Random horizontal mirror, rotation +/-25 deg, scale 0.8-1.2, crop to 32x32."""
    return AugmentPolicy(rotation_range_deg=25.0, scale_range=(0.8, 1.2),
                         shear_range_px=0.0, elastic=None,
                         mirror_horizontal=True, target_size=(32, 32))


def identity_policy(target_size=(28, 28)) -> AugmentPolicy:
    return AugmentPolicy(target_size=target_size)


def _warp(pixels: np.ndarray, src_rows: np.ndarray, src_cols: np.ndarray) -> np.ndarray:
    """Bilinear resample at per-pixel source coordinates; out-of-bounds reads 0."""
    out = np.empty_like(pixels, dtype=np.float64)
    coords = np.stack([src_rows, src_cols])
    for ch in range(pixels.shape[2]):
        out[:, :, ch] = map_coordinates(pixels[:, :, ch].astype(np.float64),
                                        coords, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype)


def affine(image: ImageSample, rotation_deg: float, scale: float,
           shear_x_px: float, shear_y_px: float) -> ImageSample:
    """Rotate/scale/shear about the image center.

    Shear offsets are in pixels at the image edge: shear_x_px shifts the top
    and bottom rows horizontally by -/+ that amount (and analogously for
    shear_y_px on columns).
    """
    if scale <= 0:
        raise ValueError("scale must be > 0")
    h, w, _ = image.pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(rotation_deg)
    # Forward transform in (x, y) = (col, row) coordinates, about the center.
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    kx = shear_x_px / max(cy, 1e-12)  # x displacement per unit y
    ky = shear_y_px / max(cx, 1e-12)  # y displacement per unit x
    # Two sequential unit shears, not one combined matrix: each has
    # determinant 1, so the transform never goes singular even at large
    # pixel offsets (a combined [[1,kx],[ky,1]] collapses when kx*ky -> 1).
    shear_x = np.array([[1.0, kx], [0.0, 1.0]])
    shear_y = np.array([[1.0, 0.0], [ky, 1.0]])
    m = rot @ (scale * np.eye(2)) @ shear_x @ shear_y
    m_inv = np.linalg.inv(m)

    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dx = cols - cx
    dy = rows - cy
    src_x = m_inv[0, 0] * dx + m_inv[0, 1] * dy + cx
    src_y = m_inv[1, 0] * dx + m_inv[1, 1] * dy + cy
    return ImageSample(_warp(image.pixels, src_y, src_x), image.id)


def elastic_field(shape: tuple[int, int], alpha: float, sigma: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis displacement fields: Gaussian-smoothed U(-1, 1) noise scaled by alpha."""
    drow = gaussian_filter(rng.uniform(-1, 1, size=shape), sigma) * alpha
    dcol = gaussian_filter(rng.uniform(-1, 1, size=shape), sigma) * alpha
    return drow, dcol


def elastic_distort(image: ImageSample, alpha: float, sigma: float,
                    rng: np.random.Generator) -> ImageSample:
    """Elastic warp by a smoothed random displacement field; identity when
    alpha == 0."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    h, w, _ = image.pixels.shape
    drow, dcol = elastic_field((h, w), alpha, sigma, rng)
    if alpha == 0:
        return image
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ImageSample(_warp(image.pixels, rows + drow, cols + dcol), image.id)


def mirror_h(image: ImageSample) -> ImageSample:
    """Left-right flip (mirror across the vertical axis); an involution."""
    return ImageSample(image.pixels[:, ::-1, :].copy(), image.id)


def center_crop_pad(pixels: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Center-crop or zero-pad to (height, width), keeping channels."""
    th, tw = target_size
    h, w, c = pixels.shape
    out = np.zeros((th, tw, c), dtype=pixels.dtype)
    sr = max((h - th) // 2, 0)
    sc = max((w - tw) // 2, 0)
    dr = max((th - h) // 2, 0)
    dc = max((tw - w) // 2, 0)
    ch = min(h, th)
    cw = min(w, tw)
    out[dr:dr + ch, dc:dc + cw, :] = pixels[sr:sr + ch, sc:sc + cw, :]
    return out


def augment(image: ImageSample, policy: AugmentPolicy,
            rng: np.random.Generator) -> ImageSample:
    """Draw one random augmentation under the policy.

    Sampling order is fixed (rotation, scale, shear x, shear y, mirror coin,
    elastic noise) so a seeded rng reproduces the draw exactly.
    """
    rot = rng.uniform(-policy.rotation_range_deg, policy.rotation_range_deg)
    scale = rng.uniform(policy.scale_range[0], policy.scale_range[1])
    shx = rng.uniform(-policy.shear_range_px, policy.shear_range_px)
    shy = rng.uniform(-policy.shear_range_px, policy.shear_range_px)
    do_mirror = policy.mirror_horizontal and rng.random() < 0.5

    out = affine(image, rot, scale, shx, shy)
    if policy.elastic is not None:
        out = elastic_distort(out, policy.elastic[0], policy.elastic[1], rng)
    if do_mirror:
        out = mirror_h(out)
    return ImageSample(center_crop_pad(out.pixels, policy.target_size), image.id)


def contact_sheet(image: ImageSample, policy: AugmentPolicy, n: int,
                  seed: int, path) -> None:
    """Write a lossless PNG grid of n augmentations for human inspection."""
    from PIL import Image as PILImage

    from .seeds import rng_for

    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    th, tw = policy.target_size
    c = image.pixels.shape[2]
    pad = 2
    grid = np.zeros((rows * (th + pad) + pad, cols * (tw + pad) + pad, c),
                    dtype=np.float32)
    for i in range(n):
        tile = augment(image, policy, rng_for(seed, "sheet", i)).pixels
        r, col = divmod(i, cols)
        y = pad + r * (th + pad)
        x = pad + col * (tw + pad)
        grid[y:y + th, x:x + tw, :] = tile
    arr = (np.clip(grid, 0, 1) * 255).round().astype(np.uint8)
    if c == 1:
        img = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        img = PILImage.fromarray(arr, mode="RGB")
    img.save(path, format="PNG")
