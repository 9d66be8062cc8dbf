"""Mask/image files, synthetic scenes and mask-safe augmentations.

Masks are 8-bit single-channel PNGs holding literal class indices
(0 background, 1 negative, 2 suction). Images are RGB PNGs, loaded as
float32 (3, H, W) arrays scaled to [0, 1].
"""

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND, NEGATIVE, SUCTION = 0, 1, 2
IMAGE_DIR = "images"
MASK_DIR = "masks"


class DataError(Exception):
    """Unreadable or inconsistent dataset files."""


def save_mask(path, mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise ValueError("mask values must fit in 8 bits")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def parse_label_map(spec):
    """``"0:0,128:1,255:2"`` -> {0: 0, 128: 1, 255: 2}."""
    if not spec:
        return None
    out = {}
    for item in str(spec).split(","):
        src, _, dst = item.partition(":")
        out[int(src)] = int(dst)
    return out


def load_mask(path, label_map=None):
    """Read a class-index mask; ``label_map`` translates stored gray levels to classes."""
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("L") if im.mode not in ("L", "P") else im)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read mask {path}: {e}") from e
    if arr.ndim != 2:
        raise DataError(f"{path}: mask is not single-channel")
    if label_map:
        out = np.zeros(arr.shape, dtype=np.uint8)
        seen = np.zeros(arr.shape, dtype=bool)
        for src, dst in label_map.items():
            hit = arr == src
            out[hit] = dst
            seen |= hit
        if not seen.all():
            stray = sorted(set(np.unique(arr[~seen]).tolist()))[:5]
            raise DataError(f"{path}: gray levels {stray} missing from the label map")
        return out
    return arr.astype(np.uint8)


def save_image(path, image):
    """``image`` is (3, H, W) in [0, 1]."""
    arr = np.clip(np.asarray(image).transpose(1, 2, 0) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return arr.transpose(2, 0, 1) / np.float32(255.0)


def load_dataset(root, label_map=None):
    """Pairs from ``root/images/*.png`` and ``root/masks/*.png`` with matching names."""
    root = Path(root)
    img_dir, mask_dir = root / IMAGE_DIR, root / MASK_DIR
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{root}: expected '{IMAGE_DIR}/' and '{MASK_DIR}/' subdirectories")
    names = sorted(p.name for p in img_dir.glob("*.png"))
    if not names:
        raise DataError(f"{img_dir}: no PNG images")
    samples = []
    for name in names:
        mpath = mask_dir / name
        if not mpath.exists():
            raise DataError(f"{mpath}: mask missing for image {name}")
        image = load_image(img_dir / name)
        mask = load_mask(mpath, label_map)
        if mask.shape != image.shape[1:]:
            raise DataError(f"{name}: image {image.shape[1:]} and mask {mask.shape} differ in size")
        samples.append((name, image, mask))
    return samples


# -- synthetic scenes ---------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    count: int = 4
    height: int = 48
    width: int = 64
    min_objects: int = 1
    max_objects: int = 3
    border: int = 2
    fraction: tuple = (0.10, 0.30)  # target suction-pixel fraction range

    def __post_init__(self):
        if self.count < 0 or self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ValueError("invalid object/count range")
        lo, hi = self.fraction
        if not 0 <= lo <= hi < 1:
            raise ValueError(f"fraction range {self.fraction} must satisfy 0 <= lo <= hi < 1")


def _background(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    base = rng.uniform(0.15, 0.55, size=3).astype(np.float32)
    fy, fx = rng.uniform(0.15, 0.6, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.06 * np.sin(fy * yy + fx * xx + phase)
    noise = rng.normal(0, 0.03, size=(3, h, w)).astype(np.float32)
    return np.clip(base[:, None, None] + wave[None] + noise, 0, 1)


def _shape_masks(kind, ih, iw, border):
    """Outer and interior boolean masks inside the object's bounding box."""
    oh, ow = ih + 2 * border, iw + 2 * border
    if kind == "rect":
        outer = np.ones((oh, ow), bool)
        inner = np.zeros((oh, ow), bool)
        inner[border:border + ih, border:border + iw] = True
        return outer, inner
    yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    cy, cx = (oh - 1) / 2, (ow - 1) / 2
    outer = ((yy - cy) / (oh / 2)) ** 2 + ((xx - cx) / (ow / 2)) ** 2 <= 1
    inner = ((yy - cy) / (ih / 2)) ** 2 + ((xx - cx) / (iw / 2)) ** 2 <= 1
    return outer, inner


def render_scene(rng, spec):
    """One (image (3,H,W) float32, mask (H,W) uint8) pair."""
    h, w, b = spec.height, spec.width, spec.border
    image = _background(rng, h, w)
    mask = np.zeros((h, w), np.uint8)
    occupied = np.zeros((h, w), bool)
    n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    target = rng.uniform(*spec.fraction) * h * w
    for _ in range(n_obj):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        area = target / n_obj
        if kind == "ellipse":
            area *= 4 / math.pi
        aspect = rng.uniform(0.6, 1.6)
        for shrink in (1.0, 0.8, 0.6, 0.45, 0.3):
            ih = max(1, int(round(math.sqrt(area * aspect) * shrink)))
            iw = max(1, int(round(math.sqrt(area / aspect) * shrink)))
            oh, ow = ih + 2 * b, iw + 2 * b
            if oh > h or ow > w:
                continue
            spot = None
            for _try in range(40):
                y0 = int(rng.integers(0, h - oh + 1))
                x0 = int(rng.integers(0, w - ow + 1))
                ys = slice(max(0, y0 - 1), y0 + oh + 1)
                xs = slice(max(0, x0 - 1), x0 + ow + 1)
                if not occupied[ys, xs].any():
                    spot = (y0, x0)
                    break
            if spot is None:
                continue
            y0, x0 = spot
            outer, inner = _shape_masks(kind, ih, iw, b)
            region = (slice(y0, y0 + oh), slice(x0, x0 + ow))
            color = rng.uniform(0.5, 1.0, size=3).astype(np.float32)
            if rng.random() < 0.5:
                color = color[rng.permutation(3)]
            edge = color * 0.35
            patch = image[:, region[0], region[1]]
            shade = 1 + rng.normal(0, 0.02, size=outer.shape).astype(np.float32)
            patch[:, outer] = edge[:, None]
            patch[:, inner] = (color[:, None] * shade[inner][None]).clip(0, 1)
            m = mask[region]
            m[outer] = NEGATIVE
            m[inner] = SUCTION
            occupied[region] |= outer
            break
    return image.astype(np.float32), mask


def synth_dataset(spec, seed, out_dir=None):
    """Render ``spec.count`` scenes; write them under ``out_dir`` when given."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(spec.count):
        image, mask = render_scene(rng, spec)
        samples.append((f"synth_{i:04d}.png", image, mask))
    if out_dir is not None:
        out = Path(out_dir)
        (out / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
        (out / MASK_DIR).mkdir(parents=True, exist_ok=True)
        for name, image, mask in samples:
            save_image(out / IMAGE_DIR / name, image)
            save_mask(out / MASK_DIR / name, mask)
    return samples


# -- augmentation -------------------------------------------------------------

AUGMENTATIONS = ("hflip", "shift", "rotate90")


def augment(image, mask, rng, kinds):
    """Apply the same random spatial transform to ``image`` (C,H,W) and ``mask`` (H,W).

    rotate90 turns square inputs by a random multiple of 90 degrees and
    non-square ones by 0 or 180 so the extents never change. Shift moves
    content by up to 1/8 of each side and fills with background.
    """
    for kind in kinds:
        if kind == "hflip":
            if rng.random() < 0.5:
                image, mask = image[:, :, ::-1], mask[:, ::-1]
        elif kind == "rotate90":
            H, W = mask.shape
            turns = int(rng.integers(0, 4)) if H == W else 2 * int(rng.integers(0, 2))
            image = np.rot90(image, turns, axes=(1, 2))
            mask = np.rot90(mask, turns)
        elif kind == "shift":
            H, W = mask.shape
            dy = int(rng.integers(-(H // 8), H // 8 + 1))
            dx = int(rng.integers(-(W // 8), W // 8 + 1))
            image = _shift(image, dy, dx, axes=(1, 2))
            mask = _shift(mask, dy, dx, axes=(0, 1))
        else:
            raise ValueError(f"unknown augmentation {kind!r}; choose from {AUGMENTATIONS}")
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def _shift(arr, dy, dx, axes):
    out = np.zeros_like(arr)
    ay, ax = axes
    H, W = arr.shape[ay], arr.shape[ax]
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[ay] = slice(max(0, -dy), H - max(0, dy))
    dst[ay] = slice(max(0, dy), H - max(0, -dy))
    src[ax] = slice(max(0, -dx), W - max(0, dx))
    dst[ax] = slice(max(0, dx), W - max(0, -dx))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def worker_count(default=1):
    """Worker cap from RGANET_THREADS."""
    raw = os.environ.get("RGANET_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default
