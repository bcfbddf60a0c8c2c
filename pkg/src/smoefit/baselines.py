"""Comparison initializers: regular grid, block-wise K-Means, and static
segmentation placement. All three emit radial kernels with one shared
bandwidth and uniform gate weights."""

import math
from dataclasses import dataclass

import numpy as np

from .model import MixtureModel, ModelMode, domain_for_image


@dataclass(frozen=True)
class BaselineParams:
    target_l: int
    block_px: int = 16
    kernels_per_segment: int | None = None
    bandwidth_px: float | None = None
    seed: int = 0
    intensity_feature_weight: float = 1.0
    uniform_budget: bool = False

    def __post_init__(self):
        if self.target_l < 1:
            raise ValueError("target_l must be >= 1")
        if self.block_px < 4:
            raise ValueError("block_px must be >= 4")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def default_bandwidth_px(width, height, kernel_count):
    """Half the square-cell grid spacing for the given kernel budget."""
    return 0.5 * math.sqrt(width * height / kernel_count)


def grid_shape(target_l, width, height):
    """Aspect-matched grid (g_cols, g_rows) with g_cols * g_rows >= target_l."""
    g_cols = max(1, math.ceil(math.sqrt(target_l * width / height)))
    g_rows = max(1, math.ceil(target_l / g_cols))
    return g_cols, g_rows


def _radial_model(image, mus_px, ms, bandwidth_px):
    w = image.width
    sigma = bandwidth_px / w
    L = mus_px.shape[0]
    mus = mus_px / w
    bs = np.tile([1.0 / sigma, 0.0, 1.0 / sigma], (L, 1))
    pis = np.full(L, 1.0 / L)
    return MixtureModel(mus, bs, pis, np.asarray(ms, dtype=np.float64),
                        ModelMode.SMOE_GATING,
                        domain_for_image(image.width, image.height))


def _intensity_at(image, mus_px):
    cols = np.clip(np.floor(mus_px[:, 0]), 0, image.width - 1).astype(np.int64)
    rows = np.clip(np.floor(mus_px[:, 1]), 0, image.height - 1).astype(np.int64)
    return image.data[rows, cols]


def grid_init(image, params):
    """Regular grid of radial kernels at cell midpoints, experts sampled
    from the image, truncated to the first target_l raster positions."""
    w, h = image.width, image.height
    L = params.target_l
    g_cols, g_rows = grid_shape(L, w, h)
    xs = (np.arange(g_cols) + 0.5) * (w / g_cols)
    ys = (np.arange(g_rows) + 0.5) * (h / g_rows)
    grid_x = np.tile(xs, g_rows)[:L]
    grid_y = np.repeat(ys, g_cols)[:L]
    mus_px = np.column_stack([grid_x, grid_y])
    bw = params.bandwidth_px if params.bandwidth_px is not None \
        else default_bandwidth_px(w, h, L)
    return _radial_model(image, mus_px, _intensity_at(image, mus_px), bw)


def _block_grid(width, height, block_px):
    """(r0, r1, c0, c1) tiles in raster order; edge tiles may be smaller."""
    tiles = []
    for r0 in range(0, height, block_px):
        for c0 in range(0, width, block_px):
            tiles.append((r0, min(r0 + block_px, height),
                          c0, min(c0 + block_px, width)))
    return tiles


def _budget_kernels(variances, target_l, uniform):
    """One kernel per block plus a variance-proportional share of the rest,
    rounded by largest remainder."""
    n = len(variances)
    base = np.ones(n, dtype=np.int64)
    extra = target_l - n
    if extra <= 0:
        return base
    var = np.asarray(variances, dtype=np.float64)
    total = var.sum()
    if uniform or total <= 0.0:
        quota = np.full(n, extra / n)
    else:
        quota = extra * var / total
    floor = np.floor(quota).astype(np.int64)
    rem = extra - int(floor.sum())
    frac = quota - floor
    # Largest remainders win; ties resolve to the lower block index.
    order = np.lexsort((np.arange(n), -frac))
    bonus = np.zeros(n, dtype=np.int64)
    bonus[order[:rem]] = 1
    return base + floor + bonus


def _kmeans_pp(points, k, rng):
    """Standard D^2-weighted seeding."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=d2 / total)
        centers[i] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(points, centers, max_iter=20):
    k = centers.shape[0]
    assign = None
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                # Revive on the point farthest from its current center.
                far = int(np.argmax(np.min(d2, axis=1)))
                centers[j] = points[far]
            else:
                centers[j] = members.mean(axis=0)
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def kmeans_init(image, params):
    """Block-wise K-Means placement: each tile gets a variance-proportional
    kernel budget (floor one) and clusters (x, y, intensity) features."""
    w, h = image.width, image.height
    tiles = _block_grid(w, h, params.block_px)
    variances = [float(np.var(image.data[r0:r1, c0:c1]))
                 for r0, r1, c0, c1 in tiles]
    budgets = _budget_kernels(variances, params.target_l, params.uniform_budget)
    mus_px = []
    ms = []
    for bi, ((r0, r1, c0, c1), k_b) in enumerate(zip(tiles, budgets)):
        patch = image.data[r0:r1, c0:c1]
        if variances[bi] <= 0.0:
            mus_px.append([(c0 + c1) / 2.0, (r0 + r1) / 2.0])
            ms.append(float(patch[0, 0]))
            continue
        rows, cols = np.mgrid[r0:r1, c0:c1]
        feats = np.column_stack([
            (cols.ravel() + 0.5) / w,
            (rows.ravel() + 0.5) / w,
            patch.ravel() * params.intensity_feature_weight,
        ])
        k_b = min(int(k_b), feats.shape[0])
        rng = np.random.default_rng([params.seed, bi])
        centers = _kmeans_pp(feats, k_b, rng)
        assign = _lloyd(feats, centers)
        for j in range(k_b):
            members = assign == j
            if not members.any():
                continue
            mus_px.append([feats[members, 0].mean() * w,
                           feats[members, 1].mean() * w])
            ms.append(float(patch.ravel()[members].mean()))
    mus_px = np.asarray(mus_px)
    bw = params.bandwidth_px if params.bandwidth_px is not None \
        else default_bandwidth_px(w, h, len(ms))
    return _radial_model(image, mus_px, ms, bw)


def s_smoe_init(image, segmap, params):
    """Static segmentation placement: a fixed number of kernels at
    uniform-random member pixels of every segment."""
    w, h = image.width, image.height
    n_seg = segmap.segment_count
    kps = params.kernels_per_segment
    if kps is None:
        kps = max(1, round(params.target_l / n_seg))
    rng = np.random.default_rng(params.seed)
    mus_px = []
    ms = []
    for info in segmap.segments:
        rows, cols = np.nonzero(segmap.labels == info.id)
        picks = rng.integers(0, len(rows), kps)
        for p in picks:
            mus_px.append([cols[p] + 0.5, rows[p] + 0.5])
            ms.append(float(image.data[rows[p], cols[p]]))
    mus_px = np.asarray(mus_px)
    bw = params.bandwidth_px if params.bandwidth_px is not None \
        else default_bandwidth_px(w, h, len(ms))
    return _radial_model(image, mus_px, ms, bw)
