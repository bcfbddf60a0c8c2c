"""Edge-aware superpixel segmentation by density-reachable region growing.

Growth rule: seeds are taken in raster order from still-unlabeled pixels;
a BFS frontier admits an 8-adjacent pixel when its intensity (0..255
scale) differs from the region's running mean by at most d_th, updating
the mean as members join. Segments smaller than a merge floor are folded
into the adjacent segment with the closest mean intensity. Labels are
densely renumbered in raster order of first occurrence.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class SegmentParams:
    d_th: float = 40.0
    min_segment_px: int = 16

    def __post_init__(self):
        if not 0.0 < self.d_th <= 255.0:
            raise ValueError("d_th must lie in (0, 255]")
        if self.min_segment_px < 1:
            raise ValueError("min_segment_px must be >= 1")


@dataclass(frozen=True)
class SegmentInfo:
    id: int
    pixel_count: int
    min_row: int
    min_col: int
    max_row: int
    max_col: int

    @property
    def bbox_height(self):
        return self.max_row - self.min_row + 1

    @property
    def bbox_width(self):
        return self.max_col - self.min_col + 1


class SegmentMap:
    """Per-pixel labels plus per-segment sizes and tight bounding boxes."""

    __slots__ = ("labels", "segments")

    def __init__(self, labels, segments):
        labels = np.ascontiguousarray(labels, dtype=np.int32)
        labels.flags.writeable = False
        self.labels = labels
        self.segments = list(segments)

    @property
    def segment_count(self):
        return len(self.segments)

    def member_mask(self, segment_id):
        return self.labels == segment_id


# Fixed neighbor order; the reference loop in the tests mirrors it.
_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1),
                     (0, 1), (1, -1), (1, 0), (1, 1))


@njit(cache=True, nogil=True)
def _grow_regions(img255, d_th, labels):
    h, w = img255.shape
    queue = np.empty(h * w, dtype=np.int64)
    seg = 0
    for sr in range(h):
        for sc in range(w):
            if labels[sr, sc] >= 0:
                continue
            labels[sr, sc] = seg
            total = img255[sr, sc]
            count = 1
            queue[0] = sr * w + sc
            head = 0
            tail = 1
            while head < tail:
                p = queue[head]
                head += 1
                pr = p // w
                pc = p % w
                for k in range(8):
                    if k == 0:
                        nr, nc = pr - 1, pc - 1
                    elif k == 1:
                        nr, nc = pr - 1, pc
                    elif k == 2:
                        nr, nc = pr - 1, pc + 1
                    elif k == 3:
                        nr, nc = pr, pc - 1
                    elif k == 4:
                        nr, nc = pr, pc + 1
                    elif k == 5:
                        nr, nc = pr + 1, pc - 1
                    elif k == 6:
                        nr, nc = pr + 1, pc
                    else:
                        nr, nc = pr + 1, pc + 1
                    if nr < 0 or nr >= h or nc < 0 or nc >= w:
                        continue
                    if labels[nr, nc] >= 0:
                        continue
                    if abs(img255[nr, nc] - total / count) <= d_th:
                        labels[nr, nc] = seg
                        total += img255[nr, nc]
                        count += 1
                        queue[tail] = nr * w + nc
                        tail += 1
            seg += 1
    return seg


def _adjacency_pairs(labels):
    """Unique 8-neighborhood label pairs (a != b)."""
    pairs = []
    shifts = ((0, 1), (1, 0), (1, 1), (1, -1))
    for dr, dc in shifts:
        a = labels[max(0, -dr):labels.shape[0] - max(0, dr),
                   max(0, -dc):labels.shape[1] - max(0, dc)]
        b = labels[max(0, dr):labels.shape[0] + min(0, dr),
                   max(0, dc):labels.shape[1] + min(0, dc)]
        diff = a != b
        if diff.any():
            pairs.append(np.column_stack([a[diff], b[diff]]))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    stacked = np.vstack(pairs).astype(np.int64)
    lo = np.minimum(stacked[:, 0], stacked[:, 1])
    hi = np.maximum(stacked[:, 0], stacked[:, 1])
    return np.unique(np.column_stack([lo, hi]), axis=0)


def _merge_small(labels, img, n_seg, min_px):
    """Union undersized segments into their closest-mean neighbor."""
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n_seg).astype(np.int64)
    sums = np.bincount(flat, weights=img.ravel(), minlength=n_seg)
    adj = [set() for _ in range(n_seg)]
    for a, b in _adjacency_pairs(labels):
        adj[a].add(int(b))
        adj[b].add(int(a))
    parent = np.arange(n_seg)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    while True:
        small = [s for s in range(n_seg)
                 if parent[s] == s and counts[s] < min_px and adj[s]]
        if not small:
            break
        small.sort(key=lambda s: (counts[s], s))
        s = small[0]
        mean_s = sums[s] / counts[s]
        best = None
        for t in sorted(adj[s]):
            d = abs(sums[t] / counts[t] - mean_s)
            if best is None or d < best[0]:
                best = (d, t)
        t = best[1]
        parent[s] = t
        counts[t] += counts[s]
        sums[t] += sums[s]
        counts[s] = 0
        for u in adj[s]:
            adj[u].discard(s)
            if u != t:
                adj[u].add(t)
                adj[t].add(u)
        adj[t].discard(t)
        adj[s] = set()
    roots = np.array([find(s) for s in range(n_seg)])
    return roots[labels]


def _renumber_raster(labels):
    """Dense ids 0..N-1 in raster order of first occurrence."""
    flat = labels.ravel()
    values, first_idx = np.unique(flat, return_index=True)
    order = np.argsort(first_idx, kind="stable")
    mapping = np.empty(int(values.max()) + 1, dtype=np.int32)
    mapping[values[order]] = np.arange(len(values), dtype=np.int32)
    return mapping[labels], len(values)


def segment(image, params=None):
    """Segment a grayscale image; every pixel gets a label, segments are
    8-connected, and the merge floor removes fragments."""
    p = params if params is not None else SegmentParams()
    img = image.data
    img255 = np.ascontiguousarray(img * 255.0)
    labels = np.full(img.shape, -1, dtype=np.int32)
    n_seg = _grow_regions(img255, float(p.d_th), labels)
    merged = _merge_small(labels, img, n_seg, p.min_segment_px)
    final, n_final = _renumber_raster(merged)
    flat = final.ravel()
    counts = np.bincount(flat, minlength=n_final)
    h, w = final.shape
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    min_r = np.full(n_final, h, dtype=np.int64)
    max_r = np.full(n_final, -1, dtype=np.int64)
    min_c = np.full(n_final, w, dtype=np.int64)
    max_c = np.full(n_final, -1, dtype=np.int64)
    np.minimum.at(min_r, flat, rows)
    np.maximum.at(max_r, flat, rows)
    np.minimum.at(min_c, flat, cols)
    np.maximum.at(max_c, flat, cols)
    segments = [SegmentInfo(i, int(counts[i]), int(min_r[i]), int(min_c[i]),
                            int(max_r[i]), int(max_c[i]))
                for i in range(n_final)]
    return SegmentMap(final, segments)


@dataclass(frozen=True)
class SizeStats:
    """Distribution of per-segment max bounding-box side, in pixels."""

    min: float
    max: float
    mean: float
    q1: float
    median: float
    q3: float


def segment_size_stats(segmap):
    sides = np.array([max(s.bbox_height, s.bbox_width)
                      for s in segmap.segments], dtype=np.float64)
    q1, med, q3 = np.percentile(sides, [25, 50, 75])
    return SizeStats(min=float(sides.min()), max=float(sides.max()),
                     mean=float(sides.mean()), q1=float(q1),
                     median=float(med), q3=float(q3))


def save_label_map(segmap, path):
    """Write labels as a 16-bit grayscale PNG for inspection."""
    from PIL import Image

    if segmap.segment_count > 65535:
        raise ValueError("too many segments for a 16-bit label map")
    arr = segmap.labels.astype(np.uint16)
    Image.fromarray(arr, mode="I;16").save(path)
