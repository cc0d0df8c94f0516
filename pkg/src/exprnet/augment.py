"""Seeded image augmentation: appearance, geometry/pose, occlusion/noise.

Every stage takes a uint8 ``(h, w, 3)`` image, a config, and a generator,
and returns a new image of the same shape. ``apply_pipeline`` derives the
generator from ``(master_seed, sample_index)`` alone, so results do not
depend on worker count or call order.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ConfigError
from .image import check_image, to_uint8
from .rng import Rng, substream

PROB_FIELDS = ("brightness_contrast_prob", "jitter_prob", "blur_prob", "shadow_prob",
               "jpeg_prob", "geometric_prob", "pose_prob", "hflip_prob", "vflip_prob",
               "saltpepper_prob", "erase_prob")


@dataclass
class AugmentConfig:
    brightness_contrast_prob: float = 0.5
    brightness_range: float = 0.2
    contrast_range: float = 0.2
    jitter_prob: float = 0.5
    hue_delta: float = 0.05
    sat_delta: float = 0.2
    bright_delta: float = 0.2
    blur_prob: float = 0.2
    blur_kernel_choices: tuple = (5, 7, 9)
    shadow_prob: float = 0.5
    shadow_factor: float = 0.7
    jpeg_prob: float = 0.5
    jpeg_quality: int = 30
    geometric_prob: float = 0.5
    rotation_max_deg: float = 30.0
    translate_frac: float = 0.1
    scale_range: tuple = (0.8, 1.2)
    pose_prob: float = 0.5
    pose_max_frac: float = 0.05
    hflip_prob: float = 0.5
    vflip_prob: float = 0.1
    saltpepper_prob: float = 0.5
    saltpepper_density: float = 0.05
    erase_prob: float = 0.2
    erase_area_range: tuple = (0.02, 0.20)
    erase_aspect_range: tuple = (0.3, 3.3)
    master_seed: int = 0

    def __post_init__(self):
        self.blur_kernel_choices = tuple(int(k) for k in self.blur_kernel_choices)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.erase_area_range = tuple(float(v) for v in self.erase_area_range)
        self.erase_aspect_range = tuple(float(v) for v in self.erase_aspect_range)
        for name in PROB_FIELDS + ("saltpepper_density",):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if any(k < 1 or k % 2 == 0 for k in self.blur_kernel_choices):
            raise ConfigError("blur kernel sizes must be odd and positive")
        if min(self.scale_range) <= 0:
            raise ConfigError("scale_range must be positive")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError("jpeg_quality must lie in [1, 100]")

    @classmethod
    def disabled(cls, **overrides) -> "AugmentConfig":
        """Config with every stage probability set to zero."""
        return cls(**{**{name: 0.0 for name in PROB_FIELDS}, "saltpepper_density": 0.0, **overrides})

    def replace(self, **changes) -> "AugmentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}


def _log(ops, name):
    if ops is not None:
        ops.append(name)


# -- appearance ------------------------------------------------------------

def brightness_contrast(img, brightness: float, contrast: float) -> np.ndarray:
    x = img.astype(np.float64)
    mean = x.mean()
    return to_uint8(((x - mean) * contrast + mean) * brightness)


def rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    delta = v - rgb.min(axis=-1)
    s = np.where(v > 0, delta / np.where(v > 0, v, 1), 0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(v == r, ((g - b) / safe) % 6,
                 np.where(v == g, (b - r) / safe + 2, (r - g) / safe + 4))
    h = np.where(delta > 0, h / 6, 0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6)
    f = h * 6 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def color_jitter(img, hue_shift: float, sat_factor: float, value_factor: float) -> np.ndarray:
    hsv = rgb_to_hsv(img.astype(np.float64) / 255)
    hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * sat_factor, 0, 1)
    hsv[..., 2] = np.clip(hsv[..., 2] * value_factor, 0, 1)
    return to_uint8(hsv_to_rgb(hsv) * 255)


def blur_sigma(kernel: int) -> float:
    return 0.3 * ((kernel - 1) / 2 - 1) + 0.8


def gaussian_blur(img, kernel: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding."""
    r = kernel // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / blur_sigma(kernel)) ** 2)
    taps /= taps.sum()
    x = np.pad(img.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="reflect")
    h, w = img.shape[:2]
    rows = sum(taps[k] * x[k:k + h] for k in range(kernel))
    out = sum(taps[k] * rows[:, k:k + w] for k in range(kernel))
    return to_uint8(out)


def polygon_mask(shape, vertices) -> np.ndarray:
    """Even-odd fill of a polygon over pixel centres."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > ys) != (y2 > ys)
        x_at = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xs < x_at)
    return inside


def shadow_region(shape, rng: Rng) -> np.ndarray:
    """Quadrilateral spanning from a random image edge to two interior points."""
    h, w = shape
    edge = rng.integers(0, 4)
    a, b = sorted(rng.uniform(0, 1, 2))
    if edge == 0:
        p1, p2 = (a * w, 0.0), (b * w, 0.0)
    elif edge == 1:
        p1, p2 = (w, a * h), (w, b * h)
    elif edge == 2:
        p1, p2 = (b * w, h), (a * w, h)
    else:
        p1, p2 = (0.0, b * h), (0.0, a * h)
    q = rng.uniform(0, 1, 4)
    q1, q2 = (q[0] * w, q[1] * h), (q[2] * w, q[3] * h)
    return polygon_mask(shape, [p1, p2, q2, q1])


def add_shadow(img, mask: np.ndarray, factor: float) -> np.ndarray:
    out = img.astype(np.float64)
    out[mask] *= factor
    return to_uint8(out)


_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def quant_table(quality: int) -> np.ndarray:
    """Luminance quantization table scaled by the IJG quality rule."""
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((_LUMA_TABLE * scale + 50) / 100), 1, 255)


def jpeg_degrade(img, quality: int = 30) -> np.ndarray:
    """Blockwise DCT quantization round trip; simulates JPEG loss without
    entropy coding or chroma subsampling."""
    check_image(img)
    h, w = img.shape[:2]
    ph, pw = -h % 8, -w % 8
    x = np.pad(img.astype(np.float64), ((0, ph), (0, pw), (0, 0)), mode="edge") - 128
    H, W = x.shape[:2]
    blocks = x.reshape(H // 8, 8, W // 8, 8, 3).transpose(0, 2, 4, 1, 3)
    q = quant_table(quality)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.floor(coef / q + 0.5) * q
    back = idctn(coef, axes=(-2, -1), norm="ortho")
    out = back.transpose(0, 3, 1, 4, 2).reshape(H, W, 3)[:h, :w] + 128
    return to_uint8(out)


def appearance_stage(img, cfg: AugmentConfig, rng: Rng, ops: Optional[list] = None) -> np.ndarray:
    out = check_image(img).copy()
    if rng.random() < cfg.brightness_contrast_prob:
        b = rng.uniform(1 - cfg.brightness_range, 1 + cfg.brightness_range)
        c = rng.uniform(1 - cfg.contrast_range, 1 + cfg.contrast_range)
        out = brightness_contrast(out, b, c)
        _log(ops, "brightness_contrast")
    if rng.random() < cfg.jitter_prob:
        d = rng.uniform(-1, 1, 3)
        out = color_jitter(out, d[0] * cfg.hue_delta, 1 + d[1] * cfg.sat_delta,
                           1 + d[2] * cfg.bright_delta)
        _log(ops, "color_jitter")
    if rng.random() < cfg.blur_prob:
        k = rng.choice(cfg.blur_kernel_choices)
        out = gaussian_blur(out, k)
        _log(ops, f"blur{k}")
    if rng.random() < cfg.shadow_prob:
        out = add_shadow(out, shadow_region(out.shape[:2], rng), cfg.shadow_factor)
        _log(ops, "shadow")
    if rng.random() < cfg.jpeg_prob:
        out = jpeg_degrade(out, cfg.jpeg_quality)
        _log(ops, f"jpeg{cfg.jpeg_quality}")
    return out


# -- geometry --------------------------------------------------------------

def affine_matrix(shape, angle_deg=0.0, translate=(0.0, 0.0), scale=1.0) -> np.ndarray:
    """3x3 forward map on (x, y, 1): rotate counter-clockwise (as displayed)
    and scale about the image centre, then shift by ``translate`` pixels."""
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    t = math.radians(angle_deg)
    c, s = math.cos(t) * scale, math.sin(t) * scale
    return np.array([
        [c, s, cx - c * cx - s * cy + translate[0]],
        [-s, c, cy + s * cx - c * cy + translate[1]],
        [0.0, 0.0, 1.0],
    ])


def perspective_matrix(shape, displacements) -> np.ndarray:
    """Homography moving the four corners by ``displacements`` (4x2 pixels)."""
    h, w = shape
    src = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    dst = src + np.asarray(displacements, dtype=np.float64)
    A, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs += [u, v]
    m = np.linalg.solve(np.array(A), np.array(rhs))
    return np.append(m, 1.0).reshape(3, 3)


def warp(img, forward: np.ndarray) -> np.ndarray:
    """Resample through a 3x3 forward map; bilinear, black outside."""
    h, w = img.shape[:2]
    inv = np.linalg.inv(forward)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = inv @ np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    sx, sy = pts[0] / pts[2], pts[1] / pts[2]
    x0, y0 = np.floor(sx).astype(np.int64), np.floor(sy).astype(np.int64)
    fx, fy = (sx - x0)[:, None], (sy - y0)[:, None]
    src = img.astype(np.float64)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = np.zeros((h * w, img.shape[2]))
        vals[ok] = src[yy[ok], xx[ok]]
        return vals

    out = ((1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1))
           + fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1)))
    return to_uint8(out.reshape(img.shape))


def affine_warp(img, angle_deg=0.0, translate=(0.0, 0.0), scale=1.0) -> np.ndarray:
    check_image(img)
    return warp(img, affine_matrix(img.shape[:2], angle_deg, translate, scale))


def hflip(img):
    return np.ascontiguousarray(img[:, ::-1])


def vflip(img):
    return np.ascontiguousarray(img[::-1])


def geometric_stage(img, cfg: AugmentConfig, rng: Rng, ops: Optional[list] = None) -> np.ndarray:
    out = check_image(img).copy()
    h, w = out.shape[:2]
    forward = None
    if rng.random() < cfg.geometric_prob:
        angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
        t = rng.uniform(-cfg.translate_frac, cfg.translate_frac, 2) * (w, h)
        s = rng.uniform(*cfg.scale_range)
        forward = affine_matrix((h, w), angle, tuple(t), s)
        _log(ops, "affine")
    if rng.random() < cfg.pose_prob:
        disp = rng.uniform(-cfg.pose_max_frac, cfg.pose_max_frac, (4, 2)) * (w, h)
        pose = perspective_matrix((h, w), disp)
        forward = pose if forward is None else pose @ forward
        _log(ops, "pose")
    if forward is not None:
        out = warp(out, forward)
    if rng.random() < cfg.hflip_prob:
        out = hflip(out)
        _log(ops, "hflip")
    if rng.random() < cfg.vflip_prob:
        out = vflip(out)
        _log(ops, "vflip")
    return out


# -- occlusion and noise ---------------------------------------------------

def salt_and_pepper(img, density: float, rng: Rng):
    """Replace each pixel with probability ``density`` by white or black.

    Returns ``(image, replaced mask)``.
    """
    h, w = img.shape[:2]
    hit = rng.random((h, w)) < density
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    out[hit & salt] = 255
    out[hit & ~salt] = 0
    return out, hit


def erase_rect(shape, rng: Rng, area_range=(0.02, 0.2), aspect_range=(0.3, 3.3)):
    """Random ``(top, left, height, width)`` lying inside an ``(h, w)`` image."""
    h, w = shape
    area = rng.uniform(*area_range) * h * w
    aspect = rng.uniform(*aspect_range)
    eh = int(min(h, max(1, round(math.sqrt(area * aspect)))))
    ew = int(min(w, max(1, round(math.sqrt(area / aspect)))))
    top = rng.integers(0, h - eh + 1)
    left = rng.integers(0, w - ew + 1)
    return top, left, eh, ew


def occlusion_stage(img, cfg: AugmentConfig, rng: Rng, ops: Optional[list] = None) -> np.ndarray:
    out = check_image(img).copy()
    if cfg.saltpepper_density > 0 and rng.random() < cfg.saltpepper_prob:
        out, _ = salt_and_pepper(out, cfg.saltpepper_density, rng)
        _log(ops, "salt_pepper")
    if rng.random() < cfg.erase_prob:
        top, left, eh, ew = erase_rect(out.shape[:2], rng, cfg.erase_area_range,
                                       cfg.erase_aspect_range)
        out[top:top + eh, left:left + ew] = rng.integers(0, 256, (eh, ew, 3)).astype(np.uint8)
        _log(ops, "erase")
    return out


def apply_pipeline(img, cfg: AugmentConfig, sample_index: int, ops: Optional[list] = None):
    """Appearance, then geometry, then occlusion, on the substream for
    ``sample_index``."""
    rng = substream(cfg.master_seed, sample_index)
    out = appearance_stage(img, cfg, rng, ops)
    out = geometric_stage(out, cfg, rng, ops)
    return occlusion_stage(out, cfg, rng, ops)
