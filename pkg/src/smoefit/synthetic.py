"""Procedural grayscale scenes used by the demos and the test batteries."""

import math

import numpy as np

from .model import GrayImage


def constant(side, value=0.5):
    return GrayImage(np.full((side, side), float(value)))


def vertical_step(side=32, left=0.2, right=0.8, split=None):
    """Two flat half-planes separated at a column boundary."""
    split = side // 2 if split is None else split
    img = np.full((side, side), float(left))
    img[:, split:] = float(right)
    return GrayImage(img)


def horizontal_ramp(side=32, lo=0.0, hi=1.0):
    row = np.linspace(lo, hi, side)
    return GrayImage(np.tile(row, (side, 1)))


def stripes(side=32, count=2, lo=0.1, hi=0.9, vertical=True):
    """Alternating flat bands; `count` is the number of band boundaries + 1."""
    values = np.linspace(lo, hi, count)
    idx = np.minimum((np.arange(side) * count) // side, count - 1)
    band = values[idx]
    img = np.tile(band, (side, 1)) if vertical else np.tile(band[:, None], (1, side))
    return GrayImage(img)


def checkerboard(side=32, cells=4, lo=0.15, hi=0.85):
    r = np.arange(side) * cells // side
    grid = (r[:, None] + r[None, :]) % 2
    return GrayImage(np.where(grid == 0, lo, hi))


def blob(side=32, center=(0.5, 0.5), sigma=0.2, lo=0.1, hi=0.9):
    ys, xs = np.mgrid[0:side, 0:side]
    xs = (xs + 0.5) / side - center[0]
    ys = (ys + 0.5) / side - center[1]
    g = np.exp(-(xs ** 2 + ys ** 2) / (2 * sigma ** 2))
    return GrayImage(lo + (hi - lo) * g)


def noise(side=32, amplitude=0.5, base=0.5, seed=0):
    rng = np.random.default_rng(seed)
    img = base + amplitude * (rng.random((side, side)) - 0.5) * 2.0
    return GrayImage(np.clip(img, 0.0, 1.0))


def cbb_battery(side=32, seed=0):
    """Twenty blocks of graded complexity, simplest first.

    Returns a list of (name, image) ordered by increasing reconstruction
    difficulty: flats, smooth gradients, isolated structures, stepped
    bands, checkerboards, and finally broadband noise.
    """
    blocks = [
        ("flat_mid", constant(side, 0.5)),
        ("flat_dark", constant(side, 0.2)),
        ("ramp_soft", horizontal_ramp(side, 0.4, 0.6)),
        ("ramp_full", horizontal_ramp(side, 0.0, 1.0)),
        ("blob_wide", blob(side, sigma=0.35)),
        ("blob_tight", blob(side, sigma=0.12)),
        ("step_low", vertical_step(side, 0.4, 0.6)),
        ("step_high", vertical_step(side, 0.1, 0.9)),
        ("stripes_3", stripes(side, 3)),
        ("stripes_4", stripes(side, 4)),
        ("stripes_5", stripes(side, 5)),
        ("stripes_6h", stripes(side, 6, vertical=False)),
        ("checker_2", checkerboard(side, 2)),
        ("checker_3", checkerboard(side, 3)),
        ("checker_4", checkerboard(side, 4)),
        ("noise_010", noise(side, 0.10, seed=seed + 1)),
        ("noise_020", noise(side, 0.20, seed=seed + 2)),
        ("noise_030", noise(side, 0.30, seed=seed + 3)),
        ("noise_040", noise(side, 0.40, seed=seed + 4)),
        ("noise_050", noise(side, 0.50, seed=seed + 5)),
    ]
    return blocks


def structured_scene(side=128, regions=28, seed=5):
    """Edges, ramps and flats: a mosaic of flat polygonal cells with strong
    borders, plus a smooth ramp band, a dark disc and a bright triangle.

    Cell intensities cycle through five well-separated levels so adjacent
    cells contrast strongly; cell sizes land in the few-tens-of-pixels
    range at the default side, the regime segment-wise fitting is built
    for.
    """
    rng = np.random.default_rng(seed)
    # Jittered grid seeds keep cell sizes roughly uniform.
    g = int(math.ceil(math.sqrt(regions)))
    gxs, gys = np.meshgrid(np.arange(g), np.arange(g))
    cx = (gxs.ravel() + 0.5) / g
    cy = (gys.ravel() + 0.5) / g
    pts = np.column_stack([cx, cy])[:regions]
    pts = pts + rng.uniform(-0.4 / g, 0.4 / g, pts.shape)
    levels = np.array([0.12, 0.32, 0.52, 0.72, 0.92])
    # Five-coloring of the seed grid keeps adjacent cells well contrasted.
    color = (gxs.ravel() + 2 * gys.ravel()) % 5
    values = levels[color[:regions]]
    shade = rng.uniform(-0.2, 0.2, (regions, 2))
    ys, xs = np.mgrid[0:side, 0:side]
    x = (xs + 0.5) / side
    y = (ys + 0.5) / side
    d2 = (x[..., None] - pts[None, None, :, 0]) ** 2 \
        + (y[..., None] - pts[None, None, :, 1]) ** 2
    cell = np.argmin(d2, axis=2)
    # Gentle per-cell linear shading so interiors are not exactly flat.
    img = values[cell] \
        + shade[cell, 0] * (x - pts[cell, 0]) \
        + shade[cell, 1] * (y - pts[cell, 1])
    band = y < 0.14                               # smooth ramp strip on top
    img[band] = 0.1 + 0.8 * x[band]
    disc = (x - 0.22) ** 2 + (y - 0.48) ** 2 < 0.075 ** 2
    img[disc] = 0.02
    tri = (y > 0.72) & (y - 0.72 > 1.8 * np.abs(x - 0.76))
    img[tri] = 0.98
    return GrayImage(np.clip(img, 0.0, 1.0))


def flat_mosaic(side=128, grid=4, lo=0.05, hi=0.95):
    """Grid of flat tiles with distinct intensities (grid*grid segments)."""
    values = np.linspace(lo, hi, grid * grid)
    # Shuffle deterministically so neighbors contrast strongly.
    order = np.argsort(np.sin(np.arange(grid * grid) * 12.9898))
    img = np.empty((side, side))
    cell = side // grid
    for gy in range(grid):
        for gx in range(grid):
            v = values[order[gy * grid + gx]]
            r0 = gy * cell
            c0 = gx * cell
            r1 = side if gy == grid - 1 else r0 + cell
            c1 = side if gx == grid - 1 else c0 + cell
            img[r0:r1, c0:c1] = v
    return GrayImage(img)
