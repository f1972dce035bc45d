"""Render the synthetic chest phantoms bundled under crates/lungline/tests/data.

The images are drawn from geometric primitives and seeded noise, so they
carry no patient data. Output is deterministic for a given seed.

    python tools/make_phantoms.py crates/lungline/tests/data
"""

import argparse
import pathlib

import numpy as np
from PIL import Image

SIZE = 256


def ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def phantom(kind, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    img = np.full((SIZE, SIZE), 40.0)
    img[ellipse(yy, xx, 140, 128, 120, 110)] = 170.0  # soft tissue
    lungs = ellipse(yy, xx, 125, 80, 80, 38) | ellipse(yy, xx, 125, 176, 80, 38)
    img[lungs] = 60.0
    img[ellipse(yy, xx, 160, 140, 40, 30)] = 190.0  # heart
    img[(np.abs(xx - 128) < 8) & (yy > 30)] = 210.0  # spine
    for k in range(6):  # ribs
        band = np.abs(yy - (70 + 22 * k) - 0.002 * (xx - 128) ** 2) < 3
        img[band & lungs] += 45.0

    if kind == "covid":
        # Peripheral, lower-zone ground-glass patches.
        for cy, cx in [(170, 55), (180, 200), (150, 48), (160, 208)]:
            blob = np.exp(-(((yy - cy) / 18) ** 2 + ((xx - cx) / 14) ** 2))
            img += 90.0 * blob * lungs
    elif kind == "viral_pneumonia":
        # Diffuse bilateral streaks around the hila.
        streaks = np.sin(xx / 3.0 + yy / 7.0) ** 2 * np.exp(-((xx - 128) / 60) ** 2)
        img += 70.0 * streaks * lungs

    img += rng.normal(0.0, 6.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=2021)
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, kind in enumerate(["covid", "normal", "viral_pneumonia"]):
        path = args.out_dir / f"phantom_{kind}.png"
        Image.fromarray(phantom(kind, args.seed + i), mode="L").save(path, optimize=False)
        print(path)


if __name__ == "__main__":
    main()
