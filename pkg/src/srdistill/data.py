"""Dataset loading, LR synthesis, and augmented patch sampling.

Images travel as float32 numpy arrays in [0, 1], channel-first:
a single image is [3, H, W], a batch is [N, 3, H, W]. LR inputs are
always synthesized from the HR source with the package's own bicubic
downscaler, so the LR/HR correspondence is exact by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, EmptyDirectory, ImageTooSmall, ShapeError
from .resample import bicubic_resize

VALID_SCALES = (2, 3, 4)

# The 8 dihedral augmentations. Composition order is fixed:
# horizontal flip, then vertical flip, then one 90-degree rotation.
AUG_CODES = (
    "none",
    "hflip",
    "vflip",
    "hflip+vflip",
    "rot90",
    "hflip+rot90",
    "vflip+rot90",
    "hflip+vflip+rot90",
)


@dataclass
class ImageSet:
    """An ordered collection of HR images with stable string ids."""

    ids: list[str]
    images: list[np.ndarray]  # each [3, H, W] float32 in [0, 1]
    source_dir: str = ""

    def __post_init__(self):
        if len(self.ids) != len(self.images):
            raise ShapeError("ids and images length mismatch")

    def __len__(self) -> int:
        return len(self.images)

    def items(self):
        return list(zip(self.ids, self.images))

    @classmethod
    def from_arrays(cls, images, ids=None, source_dir="memory"):
        """Build a set from in-memory arrays (synthetic corpora, tests)."""
        imgs = []
        for im in images:
            a = np.asarray(im, dtype=np.float32)
            if a.ndim != 3 or a.shape[0] != 3:
                raise ShapeError(f"expected [3,H,W] images, got {a.shape}")
            imgs.append(a)
        if ids is None:
            ids = [f"img{i:03d}" for i in range(len(imgs))]
        return cls(ids=list(ids), images=imgs, source_dir=source_dir)


@dataclass
class PatchBatch:
    """One training batch of aligned LR/HR crops."""

    lr: np.ndarray  # [N, 3, p, p] float32
    hr: np.ndarray  # [N, 3, p*scale, p*scale] float32
    sample_ids: list[str] = field(default_factory=list)
    aug: list[str] = field(default_factory=list)


def load_image_set(directory) -> ImageSet:
    """Load every decodable .png under ``directory`` (sorted by filename).

    8-bit RGB is read as-is; grayscale is promoted to RGB by channel
    replication. Files that fail to decode are skipped with a warning.
    Raises EmptyDirectory when nothing decodable remains.
    """
    root = Path(directory)
    if not root.is_dir():
        raise EmptyDirectory(f"not a directory: {root}")
    names = sorted(p.name for p in root.iterdir()
                   if p.is_file() and p.suffix.lower() == ".png")
    ids, images = [], []
    for name in names:
        path = root / name
        try:
            with Image.open(path) as im:
                rgb = im.convert("RGB")
                arr = np.asarray(rgb, dtype=np.float32) / 255.0
        except Exception as exc:  # decode failures skip, they do not abort
            warnings.warn(f"skipping undecodable image {path}: {exc}",
                          RuntimeWarning, stacklevel=2)
            continue
        images.append(np.ascontiguousarray(arr.transpose(2, 0, 1)))
        ids.append(path.stem)
    if not images:
        raise EmptyDirectory(f"no decodable .png images in {root}")
    return ImageSet(ids=ids, images=images, source_dir=str(root))


def _check_scale(scale: int):
    if scale not in VALID_SCALES:
        raise ConfigError(f"scale must be one of {VALID_SCALES}, got {scale!r}")


def synth_lr(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic-downscale an HR batch [N, C, H, W] by ``scale``.

    H and W must be divisible by scale. Output is float32 clamped to [0, 1].
    """
    _check_scale(scale)
    hr = np.asarray(hr)
    if hr.ndim != 4:
        raise ShapeError(f"synth_lr expects [N,C,H,W], got shape {hr.shape}")
    n, c, h, w = hr.shape
    if h % scale or w % scale:
        raise ShapeError(f"HR size {h}x{w} not divisible by scale {scale}")
    out = bicubic_resize(hr, h // scale, w // scale)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def upscale_bicubic(lr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic-upscale an LR batch [N, C, h, w] by ``scale`` (float32, clamped)."""
    _check_scale(scale)
    lr = np.asarray(lr)
    if lr.ndim != 4:
        raise ShapeError(f"upscale_bicubic expects [N,C,h,w], got shape {lr.shape}")
    n, c, h, w = lr.shape
    out = bicubic_resize(lr, h * scale, w * scale)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_augmentation(x: np.ndarray, code: str) -> np.ndarray:
    """Apply one of AUG_CODES to the trailing two axes."""
    if code not in AUG_CODES:
        raise ConfigError(f"unknown augmentation code {code!r}")
    ops = code.split("+") if code != "none" else []
    if "hflip" in ops:
        x = x[..., ::-1]
    if "vflip" in ops:
        x = x[..., ::-1, :]
    if "rot90" in ops:
        x = np.rot90(x, 1, axes=(-2, -1))
    return np.ascontiguousarray(x)


def invert_augmentation(x: np.ndarray, code: str) -> np.ndarray:
    """Exact inverse of apply_augmentation with the same code."""
    if code not in AUG_CODES:
        raise ConfigError(f"unknown augmentation code {code!r}")
    ops = code.split("+") if code != "none" else []
    if "rot90" in ops:
        x = np.rot90(x, -1, axes=(-2, -1))
    if "vflip" in ops:
        x = x[..., ::-1, :]
    if "hflip" in ops:
        x = x[..., ::-1]
    return np.ascontiguousarray(x)


def sample_batch(image_set: ImageSet, patch: int, scale: int, batch: int,
                 seed: int) -> PatchBatch:
    """Draw ``batch`` augmented LR/HR patch pairs, reproducibly from ``seed``.

    ``patch`` is the LR patch side; HR crops are patch*scale on a
    scale-aligned grid, and the LR patch is synthesized from the HR crop.
    Every sample draws, in order: image index, crop row, crop col,
    augmentation code.
    """
    _check_scale(scale)
    if patch < 8:
        raise ConfigError(f"patch must be >= 8, got {patch}")
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    if len(image_set) == 0:
        raise EmptyDirectory("image set is empty")
    hr_side = patch * scale
    for img_id, img in image_set.items():
        if img.shape[-2] < hr_side or img.shape[-1] < hr_side:
            raise ImageTooSmall(
                f"image {img_id!r} is {img.shape[-2]}x{img.shape[-1]}, "
                f"needs at least {hr_side}x{hr_side} for patch={patch} scale={scale}")

    rng = np.random.default_rng(seed)
    lr_list, hr_list, ids, augs = [], [], [], []
    for _ in range(batch):
        k = int(rng.integers(len(image_set)))
        img = image_set.images[k]
        max_y = img.shape[-2] // scale - patch
        max_x = img.shape[-1] // scale - patch
        y0 = int(rng.integers(max_y + 1)) * scale
        x0 = int(rng.integers(max_x + 1)) * scale
        code = AUG_CODES[int(rng.integers(len(AUG_CODES)))]
        hr_crop = img[:, y0:y0 + hr_side, x0:x0 + hr_side]
        lr_crop = synth_lr(hr_crop[None], scale)[0]
        hr_list.append(apply_augmentation(hr_crop, code))
        lr_list.append(apply_augmentation(lr_crop, code))
        ids.append(image_set.ids[k])
        augs.append(code)
    return PatchBatch(
        lr=np.stack(lr_list).astype(np.float32),
        hr=np.stack(hr_list).astype(np.float32),
        sample_ids=ids,
        aug=augs,
    )
