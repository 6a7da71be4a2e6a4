#!/usr/bin/env python3
"""Generate the JPEG test corpus under crates/mlpcm/tests/data/.

Three sets, all seeded and reproducible:

  corpus/   round-trip grid: 6 sizes (8x8 .. 512x512, odd dims included)
            x {4:4:4, 4:2:0} x quality {35, 55, 75, 95}   (48 files)
  train/    220 natural-texture images, 128x128, 4:2:0, quality 75
  holdout/  12 images, 192x192, 4:2:0, quality 75 (evaluation + CLI tests)

Content is synthetic "natural-ish" texture: multi-octave smooth noise plus a
gradient and a few hard-edged shapes, with low-energy chroma. That gives JPEG
files whose coefficient statistics resemble photographs (sparse AC, smooth
DC) without shipping third-party image data.

Run from the repository root:  python3 tools/gen_corpus.py
"""

import pathlib

import numpy as np
from PIL import Image

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "crates" / "mlpcm" / "tests" / "data"

CORPUS_SIZES = [(8, 8), (9, 17), (33, 57), (64, 48), (129, 96), (512, 512)]
CORPUS_QPS = [35, 55, 75, 95]
SUBSAMPLINGS = {"444": 0, "420": 2}  # PIL subsampling codes


def octave_noise(rng, h, w):
    """Sum of bicubically upsampled noise octaves, unit-ish scale."""
    out = np.zeros((h, w), np.float64)
    for cell, amp in [(64, 1.0), (32, 0.55), (16, 0.3), (8, 0.18), (4, 0.08)]:
        gh = max(2, -(-h // cell) + 1)
        gw = max(2, -(-w // cell) + 1)
        grid = rng.standard_normal((gh, gw))
        up = Image.fromarray(grid.astype(np.float32), mode="F").resize(
            (w, h), Image.BICUBIC
        )
        out += amp * np.asarray(up, np.float64)
    return out


def shapes(rng, h, w):
    """A few rectangles and discs: hard edges so AC bands get real energy."""
    canvas = np.zeros((h, w), np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(2, 6)):
        level = rng.uniform(-1.2, 1.2)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            y1 = min(h, y0 + int(rng.integers(2, max(3, h // 2))))
            x1 = min(w, x0 + int(rng.integers(2, max(3, w // 2))))
            canvas[y0:y1, x0:x1] += level
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(2, max(3.0, min(h, w) / 3))
            canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] += level
    return canvas


def rgb_image(seed, h, w):
    rng = np.random.default_rng(seed)
    luma = octave_noise(rng, h, w) + shapes(rng, h, w)
    gy, gx = rng.uniform(-0.4, 0.4, 2)
    yy, xx = np.mgrid[0:h, 0:w]
    if h > 1:
        luma += gy * (yy / max(1, h - 1) - 0.5)
    if w > 1:
        luma += gx * (xx / max(1, w - 1) - 0.5)
    luma = 128.0 + 42.0 * luma / max(1e-6, np.std(luma))
    # Chroma: gentle low-frequency casts around neutral, like photographs.
    cast_r = 14.0 * octave_noise(rng, h, w)
    cast_b = 14.0 * octave_noise(rng, h, w)
    r = luma + cast_r
    g = luma - 0.3 * cast_r - 0.3 * cast_b
    b = luma + cast_b
    arr = np.stack([r, g, b], axis=-1).clip(0, 255).round().astype(np.uint8)
    return Image.fromarray(arr, "RGB")


def save_jpeg(img, path, quality, subsampling):
    img.save(path, "JPEG", quality=quality, subsampling=subsampling)


def gen_corpus():
    out = DATA / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for si, (h, w) in enumerate(CORPUS_SIZES):
        for sub_name, sub_code in SUBSAMPLINGS.items():
            for qp in CORPUS_QPS:
                img = rgb_image(1000 + n, h, w)
                name = f"c{n:02d}_{w}x{h}_{sub_name}_q{qp}.jpg"
                save_jpeg(img, out / name, qp, sub_code)
                n += 1
    print(f"corpus/: {n} files")


def gen_set(name, count, side, quality, seed0):
    out = DATA / name
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        img = rgb_image(seed0 + i, side, side)
        save_jpeg(img, out / f"{name}{i:03d}.jpg", quality, 2)
    print(f"{name}/: {count} files at {side}x{side}")


def main():
    gen_corpus()
    gen_set("train", 220, 128, 75, 20000)
    gen_set("holdout", 12, 192, 75, 30000)


if __name__ == "__main__":
    main()
