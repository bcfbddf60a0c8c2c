"""Per-segment corona bounding blocks and adaptive local optimization.

Each segment is cropped to a square box (max bounding-box side plus a
margin of context pixels), rescaled to a standard side, and fitted with a
small gating model whose kernel count doubles at checkpoint epochs until
a target PSNR is reached or the epoch budget runs out. Negative-weight
kernels are pruned from the returned snapshot.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllBlocksFailedError, EmptyModelError
from .metrics import psnr_from_mse
from .model import GrayImage, MixtureModel, ModelDomain, ModelMode
from .optim import OptimizeConfig, _Loop, compute_loss, prune_negative

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdjustParams:
    """Adaptive adjustment knobs: initial kernel count, total epoch budget,
    doubling checkpoint interval, target quality, and the hard kernel cap."""

    l0: int = 10
    epochs: int = 300
    checkpoint: int = 100
    target_psnr: float = 30.0
    l_max: int = 160
    lam: float = 1e-4
    seed: int = 0
    prune_every: int = 1
    intensity_experts: bool = True
    fresh_doubling: bool = False
    jitter_sigma: float = 0.05
    warm_moments: bool = False
    lr_mu: float = 1e-3
    lr_b: float = 1e-2
    lr_pi: float = 1e-3
    lr_m: float = 1e-3

    def __post_init__(self):
        if self.l0 < 1:
            raise ValueError("l0 must be >= 1")
        if self.checkpoint > self.epochs:
            raise ValueError("checkpoint must not exceed the epoch budget")
        if self.l_max < self.l0:
            raise ValueError("l_max must be >= l0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class CoronaBlock:
    """Square margin-padded crop of one segment, rescaled to cbb_side."""

    segment_id: int
    origin_px: tuple
    box_side_px: int
    margin_px: int
    image32: GrayImage
    mask32: np.ndarray
    scale: float  # source pixels per block pixel (box_side_px / cbb_side)

    @property
    def cbb_side(self):
        return self.image32.width

    def global_scale(self, image_width):
        """Linear factor mapping the block unit square into the global
        width-normalized domain."""
        return self.box_side_px / image_width

    def global_origin(self, image_width):
        return np.array([self.origin_px[1] / image_width,
                         self.origin_px[0] / image_width])


@dataclass
class LocalModel:
    block: CoronaBlock
    model: MixtureModel
    achieved_psnr: float
    epochs_used: int
    doublings: int
    pruned: int = 0
    warnings: list = field(default_factory=list)


def _area_weights(n, m):
    """Row-resampling matrix (m x n) of exact box overlaps, scale n/m > 1."""
    a = n / m
    w = np.zeros((m, n))
    for i in range(m):
        lo = i * a
        hi = (i + 1) * a
        k0 = int(math.floor(lo))
        k1 = min(n, int(math.ceil(hi)))
        for k in range(k0, k1):
            w[i, k] = (min(hi, k + 1) - max(lo, k)) / a
    return w


def _bilinear_weights(n, m):
    """Row-resampling matrix (m x n) of clamped linear interpolation."""
    a = n / m
    w = np.zeros((m, n))
    for i in range(m):
        s = (i + 0.5) * a - 0.5
        k0 = int(math.floor(s))
        frac = s - k0
        lo = min(max(k0, 0), n - 1)
        hi = min(max(k0 + 1, 0), n - 1)
        w[i, lo] += 1.0 - frac
        w[i, hi] += frac
    return w


def _resample_square(src, out_side):
    n = src.shape[0]
    if n == out_side:
        return src.copy()
    w = _area_weights(n, out_side) if n > out_side else _bilinear_weights(n, out_side)
    return w @ src @ w.T


def _nearest_mask(src, out_side):
    n = src.shape[0]
    if n == out_side:
        return src.copy()
    idx = np.clip(np.floor((np.arange(out_side) + 0.5) * (n / out_side)), 0,
                  n - 1).astype(np.int64)
    return src[np.ix_(idx, idx)]


def crop_block(image, segmap, segment_id, margin_px=5, cbb_side=32):
    """Build the corona bounding block for one segment.

    The square box covers the segment bounding box plus the margin,
    shifted to stay inside the image (side shrinks only when it exceeds an
    image dimension). Content downscales by area averaging and upscales
    bilinearly; the membership mask resamples by nearest neighbor.
    """
    info = None
    for s in segmap.segments:
        if s.id == segment_id:
            info = s
            break
    if info is None:
        raise KeyError(f"segment id {segment_id} not found")
    h, w = image.height, image.width
    side = max(info.bbox_height, info.bbox_width) + 2 * margin_px
    side = min(side, w, h)
    r0 = (info.min_row + info.max_row + 1 - side) // 2
    c0 = (info.min_col + info.max_col + 1 - side) // 2
    r0 = min(max(r0, 0), h - side)
    c0 = min(max(c0, 0), w - side)
    crop = image.data[r0:r0 + side, c0:c0 + side]
    mask_src = segmap.labels[r0:r0 + side, c0:c0 + side] == segment_id
    img32 = np.clip(_resample_square(crop, cbb_side), 0.0, 1.0)
    mask32 = _nearest_mask(mask_src, cbb_side)
    if not mask32.any():
        # Thin segments can vanish under nearest sampling; keep the block
        # pixel closest to the member centroid so the mask is never empty.
        rows, cols = np.nonzero(mask_src)
        a = side / cbb_side
        rc = min(max(int((rows.mean() + 0.5) / a), 0), cbb_side - 1)
        cc = min(max(int((cols.mean() + 0.5) / a), 0), cbb_side - 1)
        mask32 = mask32.copy()
        mask32[rc, cc] = True
    mask32.flags.writeable = False
    return CoronaBlock(segment_id=segment_id, origin_px=(int(r0), int(c0)),
                       box_side_px=int(side), margin_px=int(margin_px),
                       image32=GrayImage(img32), mask32=mask32,
                       scale=side / cbb_side)


def _sample_intensity(image, mus):
    side_x = image.width
    side_y = image.height
    cols = np.clip(np.floor(mus[:, 0] * side_x), 0, side_x - 1).astype(np.int64)
    rows = np.clip(np.floor(mus[:, 1] * side_y), 0, side_y - 1).astype(np.int64)
    return image.data[rows, cols]


def adjust_kernels(block, params=None):
    """Adaptive kernel adjustment of one corona block.

    Starts from l0 randomly placed isotropic kernels with uniform gate
    weights, optimizes the regularized loss over all block pixels, returns
    early once the PSNR target is beaten, and doubles the kernel set at
    checkpoint epochs (capped at l_max). On budget exhaustion the best
    recorded snapshot is pruned of negative-weight kernels; the result is
    never empty.
    """
    p = params if params is not None else AdjustParams()
    rng = np.random.default_rng(p.seed)
    side = block.cbb_side
    domain = ModelDomain(side, side, float(side))
    L = p.l0
    mus = rng.uniform(0.0, 1.0, (L, 2))
    sigma0 = 0.5 / math.sqrt(L)
    bs = np.tile([1.0 / sigma0, 0.0, 1.0 / sigma0], (L, 1))
    if p.intensity_experts:
        ms = _sample_intensity(block.image32, mus).copy()
    else:
        ms = rng.uniform(0.0, 1.0, L)
    pis = np.full(L, 1.0 / L)
    cfg = OptimizeConfig(lam=p.lam, max_epochs=p.epochs, record_best=True,
                         lr_mu=p.lr_mu, lr_b=p.lr_b, lr_pi=p.lr_pi,
                         lr_m=p.lr_m, seed=p.seed)
    px, py = domain.pixel_centers()
    tgt = np.ascontiguousarray(block.image32.data.ravel())
    loop = _Loop(ModelMode.SMOE_GATING, domain, px, py, tgt,
                 mus, bs, pis, ms, cfg)
    doublings = 0
    reason = "epochs"
    while loop.epoch < p.epochs:
        next_stop = min(((loop.epoch // p.checkpoint) + 1) * p.checkpoint,
                        p.epochs)
        reason = loop.run(next_stop - loop.epoch, target_psnr=p.target_psnr,
                          prune_every=p.prune_every)
        if reason == "target_psnr":
            break
        if loop.epoch % p.checkpoint == 0 and loop.epoch < p.epochs:
            # Capacity follows the nominal doubling schedule even when
            # in-run pruning thinned the current set.
            target = min(p.l0 * 2 ** (doublings + 1), p.l_max)
            added = loop.double_kernels(rng, target,
                                        jitter_sigma=p.jitter_sigma,
                                        fresh_random=p.fresh_doubling,
                                        warm_moments=p.warm_moments)
            if added > 0:
                doublings += 1
    warnings = list(loop.trace.warnings)
    if reason == "target_psnr":
        model = loop.current_model()
        achieved = psnr_from_mse(loop.current_report().mse)
        pruned = 0
    else:
        best, _, _ = loop.best_model()
        try:
            model, pruned = prune_negative(best)
        except EmptyModelError:
            j = int(np.argmax(best.pis))
            model = MixtureModel(best.mus[j:j + 1], best.bs[j:j + 1],
                                 best.pis[j:j + 1], best.ms[j:j + 1],
                                 best.mode, best.domain)
            pruned = best.kernel_count - 1
            warnings.append("pruning removed every kernel; "
                            "kept the highest-weight one")
        achieved = psnr_from_mse(compute_loss(model, block.image32).mse)
    return LocalModel(block=block, model=model, achieved_psnr=achieved,
                      epochs_used=loop.epoch, doublings=doublings,
                      pruned=pruned, warnings=warnings)


def run_all_blocks(image, segmap, params=None, workers=1, margin_px=5,
                   cbb_side=32, adjust_fn=None):
    """Crop and adjust every segment; results come back in segment-id order.

    Each task is seeded as params.seed XOR segment id, so the outcome does
    not depend on the worker count. Per-block failures are logged and
    skipped; if every block fails, AllBlocksFailedError is raised.
    """
    p = params if params is not None else AdjustParams()
    fn = adjust_fn if adjust_fn is not None else adjust_kernels
    seg_ids = [s.id for s in segmap.segments]
    tasks = []
    for sid in seg_ids:
        block = crop_block(image, segmap, sid, margin_px=margin_px,
                           cbb_side=cbb_side)
        tasks.append((sid, block, replace(p, seed=p.seed ^ sid)))
    results = {}
    failures = []

    def run_one(task):
        sid, block, task_params = task
        return sid, fn(block, task_params)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, t) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    sid, res = fut.result()
                    results[sid] = res
                except Exception as err:  # noqa: BLE001 - collected per block
                    failures.append((t[0], err))
                    log.warning("segment %d failed: %r", t[0], err)
    else:
        for t in tasks:
            try:
                sid, res = run_one(t)
                results[sid] = res
            except Exception as err:  # noqa: BLE001 - collected per block
                failures.append((t[0], err))
                log.warning("segment %d failed: %r", t[0], err)
    if not results:
        raise AllBlocksFailedError(failures)
    return [results[sid] for sid in seg_ids if sid in results]
