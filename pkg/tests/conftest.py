import numpy as np
import pytest

from srdistill import ImageSet


def make_image_set(n=4, h=40, w=40, seed=0, source="memory"):
    """Plain random-noise HR images (fast, structureless)."""
    rng = np.random.default_rng(seed)
    imgs = [rng.random((3, h, w), dtype=np.float32) for _ in range(n)]
    return ImageSet.from_arrays(imgs, source_dir=source)


def synth_corpus(n, size=64, seed=0):
    """Texture-dense RGB images: oriented square-wave fields plus long edges.

    Every region carries structure that plain interpolation blurs, so
    model capacity pays off and tiny-scale distillation is measurable.
    """
    root = np.random.default_rng(seed)
    images = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(n):
        rng = np.random.default_rng(root.integers(2**63))
        field = np.zeros((size, size))
        for _ in range(rng.integers(2, 5)):
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(3.0, 9.0)
            phase = rng.uniform(0, period)
            coord = np.cos(theta) * xx + np.sin(theta) * yy
            duty = rng.uniform(0.35, 0.65)
            bars = ((coord + phase) % period) < (period * duty)
            field += rng.uniform(0.3, 0.8) * bars
        for _ in range(rng.integers(1, 4)):
            theta = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(0.25 * size, 0.75 * size)
            sgn = np.cos(theta) * xx + np.sin(theta) * yy - off
            field += rng.uniform(-0.8, 0.8) * (sgn > 0)
        field -= field.min()
        field /= max(field.max(), 1e-9)
        img = np.zeros((3, size, size), dtype=np.float32)
        for c in range(3):
            lo, hi = sorted(rng.uniform(0.02, 0.98, 2))
            img[c] = (lo + (hi - lo) * field).astype(np.float32)
        images.append(img)
    return ImageSet.from_arrays(images, source_dir=f"synth{seed}")


@pytest.fixture
def png_dir(tmp_path):
    """Factory: write n random RGB PNGs into a fresh directory."""
    from PIL import Image

    def build(n=4, h=48, w=48, seed=0, name="imgs"):
        d = tmp_path / name
        d.mkdir(exist_ok=True)
        rng = np.random.default_rng(seed)
        for i in range(n):
            arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(d / f"im{i:02d}.png")
        return d

    return build
