"""Fusing local block models into one global initialization.

Kernels whose center falls outside their segment mask are redundant once
neighbors contribute their own boundary support, so they are dropped.
Survivors are mapped into the width-normalized global domain: centers by
the block's affine placement, and the Cholesky factor by B / sqrt(s)
where s is the covariance scaling factor of the linear map.
"""

from dataclasses import dataclass, replace

import numpy as np

from .model import Kernel, MixtureModel, ModelMode, domain_for_image


@dataclass(frozen=True)
class SegmentExportStats:
    segment_id: int
    kept: int
    dropped_outside: int
    dropped_negative: int


@dataclass(frozen=True)
class ExportStats:
    per_segment: tuple
    l_init: int

    def to_dict(self):
        return {
            "l_init": self.l_init,
            "per_segment": [
                {"segment_id": s.segment_id, "kept": s.kept,
                 "dropped_outside": s.dropped_outside,
                 "dropped_negative": s.dropped_negative}
                for s in self.per_segment
            ],
        }


def _mask_lookup(mask, mus):
    side = mask.shape[0]
    cols = np.clip(np.floor(mus[:, 0] * side), 0, side - 1).astype(np.int64)
    rows = np.clip(np.floor(mus[:, 1] * side), 0, side - 1).astype(np.int64)
    return mask[rows, cols]


def drop_outside(local):
    """Remove kernels centered on mask-false pixels of the block.

    If nothing would survive, the kernel closest to the mask centroid is
    kept instead and a warning is recorded on the returned LocalModel.
    """
    mask = local.block.mask32
    model = local.model
    keep = _mask_lookup(mask, model.mus)
    if keep.all():
        return local
    warnings = list(local.warnings)
    if not keep.any():
        side = mask.shape[0]
        rows, cols = np.nonzero(mask)
        centroid = np.array([(cols.mean() + 0.5) / side,
                             (rows.mean() + 0.5) / side])
        dist = np.sum((model.mus - centroid) ** 2, axis=1)
        keep = np.zeros_like(keep)
        keep[int(np.argmin(dist))] = True
        warnings.append("every kernel center fell outside the segment mask; "
                        "kept the one nearest the mask centroid")
    pruned = MixtureModel(model.mus[keep], model.bs[keep], model.pis[keep],
                          model.ms[keep], model.mode, model.domain)
    return replace(local, model=pruned, warnings=warnings)


def upscale_kernel(kernel, scale, origin):
    """Map a kernel from block coordinates into the global domain.

    The center maps affinely (origin + scale * mu); the covariance scales
    by s = scale**2, which is B_s = B / sqrt(s). Gate weight and expert
    value carry over unchanged.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    origin = np.asarray(origin, dtype=np.float64).reshape(2)
    return Kernel(mu=origin + scale * kernel.mu, b=kernel.b / scale,
                  pi=kernel.pi, m=kernel.m)


def aggregate(local_models, image_width, image_height, area_reweight=False):
    """Assemble exported kernels from every block, in segment-id order.

    Gate weights carry over unchanged by default (gates are invariant to a
    shared scale, and the local stage calibrated relative weights);
    `area_reweight` scales each block's weights by its relative segment
    area for experimentation.
    """
    ordered = sorted(local_models, key=lambda lm: lm.block.segment_id)
    if not ordered:
        raise ValueError("nothing to aggregate")
    mus_all = []
    bs_all = []
    pis_all = []
    ms_all = []
    stats = []
    areas = []
    for lm in ordered:
        block = lm.block
        areas.append(float(np.count_nonzero(block.mask32)) * block.scale ** 2)
    mean_area = float(np.mean(areas)) if areas else 1.0
    for lm, area in zip(ordered, areas):
        block = lm.block
        pre = lm.model.kernel_count
        kept_local = drop_outside(lm)
        model = kept_local.model
        scale = block.global_scale(image_width)
        origin = block.global_origin(image_width)
        mus_all.append(origin[None, :] + scale * model.mus)
        bs_all.append(model.bs / scale)
        pis = model.pis.copy()
        if area_reweight and mean_area > 0:
            pis = pis * (area / mean_area)
        pis_all.append(pis)
        ms_all.append(model.ms.copy())
        stats.append(SegmentExportStats(
            segment_id=block.segment_id, kept=model.kernel_count,
            dropped_outside=pre - model.kernel_count,
            dropped_negative=lm.pruned))
    merged = MixtureModel(
        np.vstack(mus_all), np.vstack(bs_all), np.concatenate(pis_all),
        np.concatenate(ms_all), ModelMode.SMOE_GATING,
        domain_for_image(image_width, image_height))
    return merged, ExportStats(per_segment=tuple(stats),
                               l_init=merged.kernel_count)
