"""Y-channel PSNR evaluation and teacher-vs-student statistics.

PSNR is measured on the luma channel (8-bit studio-swing weights scaled
to [0,1]) after shaving a border, in float64, capped at 100 dB so
identical inputs stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import ImageSet, sample_batch, synth_lr, upscale_bicubic
from .errors import ConfigError, ShapeError

Y_WEIGHTS = (65.738 / 256.0, 129.057 / 256.0, 25.064 / 256.0)
Y_OFFSET = 16.0 / 256.0
PSNR_CAP = 100.0


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    """[3,H,W] RGB in [0,1] -> [H,W] luma in [16/256, 235/256], float64."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"rgb_to_y expects [3,H,W], got {rgb.shape}")
    return (Y_WEIGHTS[0] * rgb[0] + Y_WEIGHTS[1] * rgb[1]
            + Y_WEIGHTS[2] * rgb[2] + Y_OFFSET)


def y_psnr(sr: np.ndarray, gt: np.ndarray, scale: int,
           shave: int | None = None) -> float:
    """PSNR in dB between the luma of ``sr`` and ``gt`` ([3,H,W], [0,1]).

    ``shave`` pixels are trimmed from every border first (default: the
    scale factor). Internal arithmetic is float64; the result is capped
    at 100 dB.
    """
    sr = np.asarray(sr)
    gt = np.asarray(gt)
    if sr.shape != gt.shape:
        raise ShapeError(f"sr shape {sr.shape} != gt shape {gt.shape}")
    if shave is None:
        shave = int(scale)
    if shave < 0:
        raise ConfigError(f"shave must be >= 0, got {shave}")
    y_sr = rgb_to_y(sr)
    y_gt = rgb_to_y(gt)
    if shave > 0:
        if y_sr.shape[0] <= 2 * shave or y_sr.shape[1] <= 2 * shave:
            raise ShapeError(
                f"image {y_sr.shape} too small to shave {shave} px per side")
        y_sr = y_sr[shave:-shave, shave:-shave]
        y_gt = y_gt[shave:-shave, shave:-shave]
    mse = float(np.mean((y_sr - y_gt) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


class GroundTruthOracle:
    """Stand-in 'model' that returns the ground truth itself (upper bound)."""


class BicubicUpscaler:
    """Stand-in 'model' that bicubic-upscales the LR input (lower baseline)."""

    def __init__(self, scale: int):
        self.scale = int(scale)


def _infer_single(model, lr: np.ndarray, hr: np.ndarray,
                  scale: int) -> np.ndarray:
    """Run one [3,h,w] LR image through a model/stub -> [3,H,W] float32."""
    if isinstance(model, GroundTruthOracle):
        return np.asarray(hr, dtype=np.float32).copy()
    if isinstance(model, BicubicUpscaler):
        return upscale_bicubic(lr[None].astype(np.float32), model.scale)[0]
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(np.ascontiguousarray(lr[None], dtype=np.float32)))
    return out.clamp(0.0, 1.0).numpy()[0]


@dataclass
class EvalReport:
    dataset_id: str
    scale: int
    per_image: list = field(default_factory=list)  # (image id, psnr dB)
    mean_psnr: float = 0.0

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def to_records(self) -> list:
        recs = [{"image": i, "psnr": round(p, 6), "scale": self.scale,
                 "dataset": self.dataset_id} for i, p in self.per_image]
        recs.append({"image": "__mean__", "psnr": round(self.mean_psnr, 6),
                     "scale": self.scale, "dataset": self.dataset_id,
                     "n_images": self.n_images})
        return recs

    def format_table(self) -> str:
        width = max([len(i) for i, _ in self.per_image] + [4])
        lines = [f"dataset: {self.dataset_id}  scale: x{self.scale}",
                 f"{'id'.ljust(width)}  psnr_db"]
        for img_id, p in self.per_image:
            lines.append(f"{img_id.ljust(width)}  {p:8.4f}")
        lines.append(f"{'mean'.ljust(width)}  {self.mean_psnr:8.4f}")
        return "\n".join(lines)


def evaluate(model, image_set: ImageSet, scale: int,
             shave: int | None = None, dump_dir=None) -> EvalReport:
    """Score a model on every image of a set; optionally dump SR PNGs.

    HR images are cropped to the largest scale-divisible size, the LR
    input is synthesized from that crop, and Y-PSNR is averaged across
    images.
    """
    if len(image_set) == 0:
        raise ConfigError("evaluate needs a non-empty image set")
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
    per_image = []
    for img_id, hr in image_set.items():
        h = hr.shape[-2] - hr.shape[-2] % scale
        w = hr.shape[-1] - hr.shape[-1] % scale
        hr_c = np.ascontiguousarray(hr[:, :h, :w])
        lr = synth_lr(hr_c[None], scale)[0]
        sr = _infer_single(model, lr, hr_c, scale)
        per_image.append((img_id, y_psnr(sr, hr_c, scale, shave)))
        if dump_dir is not None:
            from PIL import Image
            arr = np.clip(np.rint(sr * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr.transpose(1, 2, 0)).save(
                dump_dir / f"{img_id}_x{scale}.png")
    report = EvalReport(dataset_id=image_set.source_dir or "memory", scale=scale,
                        per_image=per_image)
    report.mean_psnr = float(np.mean([p for _, p in per_image]))
    return report


def teacher_worse_rate(teacher, student, image_set: ImageSet, patch: int,
                       scale: int, n_samples: int = 256,
                       seed: int = 0) -> float:
    """Fraction of sampled training patches where the teacher's L1 error is
    strictly worse than the student's (i.e. the adaptive gate would drop
    the teacher). Both arguments accept real networks or the eval stubs."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    batch = sample_batch(image_set, patch, scale, n_samples, seed)
    worse = 0
    chunk = 32
    for lo in range(0, n_samples, chunk):
        lr = batch.lr[lo:lo + chunk]
        hr = batch.hr[lo:lo + chunk]
        err = []
        for model in (teacher, student):
            sr = np.stack([_infer_single(model, lr[i], hr[i], scale)
                           for i in range(lr.shape[0])])
            err.append(np.abs(sr.astype(np.float64)
                              - hr.astype(np.float64)).sum(axis=(1, 2, 3)))
        worse += int(np.sum(err[1] < err[0]))  # student strictly better
    return worse / float(n_samples)
