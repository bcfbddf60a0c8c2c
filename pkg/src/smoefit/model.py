"""Model types and continuous-domain evaluation.

Two regression modes share one kernel parameterization. In gating mode
the prediction is a softmax-weighted blend of constant experts; in RBF
mode it is a plain weighted sum of Gaussian kernel responses. Kernels
store the lower-triangular Cholesky factor B of the inverse covariance,
so positive definiteness never has to be enforced during optimization.

Coordinate convention: the continuous domain is pixel coordinates divided
by a single per-model scale (the image width for full-image models), so
x spans (0, 1) and y spans (0, height/width). Pixel (row r, col c)
samples the model at ((c + 0.5) / scale, (r + 0.5) / scale).
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateGateError

GATE_DENOM_GUARD = _kernels.GATE_DENOM_GUARD


class ModelMode(enum.Enum):
    SMOE_GATING = "smoe"
    RBF_SUM = "rbf"


class GrayImage:
    """Immutable grayscale raster with intensities in [0, 1].

    Wraps a read-only float64 array of shape (height, width), row-major.
    """

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a 2-D raster, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        self._pixels = arr

    @property
    def data(self):
        return self._pixels

    @property
    def width(self):
        return self._pixels.shape[1]

    @property
    def height(self):
        return self._pixels.shape[0]

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class ModelDomain:
    """Continuous-domain descriptor: raster dimensions and the shared
    pixels-per-unit scale."""

    image_width: int
    image_height: int
    coord_scale: float

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("domain dimensions must be >= 1")
        if not self.coord_scale > 0:
            raise ValueError("coord_scale must be positive")

    @property
    def extent(self):
        """(x_max, y_max) of the continuous domain."""
        return (self.image_width / self.coord_scale,
                self.image_height / self.coord_scale)

    def pixel_centers(self, out_width=None, out_height=None):
        """Flat (px, py) coordinate arrays for a raster covering the domain.

        Defaults to the domain's own raster; other dimensions resample the
        same continuous extent (pixel (r, c) maps to the center of its cell).
        """
        w = self.image_width if out_width is None else int(out_width)
        h = self.image_height if out_height is None else int(out_height)
        if w < 1 or h < 1:
            raise ValueError("output dimensions must be >= 1")
        ex, ey = self.extent
        xs = (np.arange(w) + 0.5) * (ex / w)
        ys = (np.arange(h) + 0.5) * (ey / h)
        px = np.tile(xs, h)
        py = np.repeat(ys, w)
        return px, py


def domain_for_image(width, height):
    """Full-image domain normalized by the image width."""
    return ModelDomain(width, height, float(width))


@dataclass
class Kernel:
    """One expert/gate unit: center, Cholesky factor of the inverse
    covariance (b11, b21, b22; b12 is zero by construction), gate weight
    and expert constant."""

    mu: np.ndarray
    b: np.ndarray
    pi: float
    m: float

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64).reshape(2)
        self.b = np.array(self.b, dtype=np.float64).reshape(3)
        self.pi = float(self.pi)
        self.m = float(self.m)
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.b))
                and np.isfinite(self.pi) and np.isfinite(self.m)):
            raise ValueError("kernel parameters must be finite")

    @property
    def b_matrix(self):
        """Lower-triangular 2x2 factor B."""
        return np.array([[self.b[0], 0.0], [self.b[1], self.b[2]]])

    @property
    def sigma_inv(self):
        """Inverse covariance B^T B."""
        bm = self.b_matrix
        return bm.T @ bm


class MixtureModel:
    """Ordered kernel collection plus domain and evaluation mode.

    Parameters are held as packed read-only arrays; `kernels` materializes
    them as Kernel objects. Instances are immutable, so evaluation is safe
    from any number of threads.
    """

    __slots__ = ("mus", "bs", "pis", "ms", "mode", "domain")

    def __init__(self, mus, bs, pis, ms, mode, domain):
        mus = np.ascontiguousarray(mus, dtype=np.float64)
        bs = np.ascontiguousarray(bs, dtype=np.float64)
        pis = np.ascontiguousarray(pis, dtype=np.float64)
        ms = np.ascontiguousarray(ms, dtype=np.float64)
        L = mus.shape[0]
        if L < 1:
            raise ValueError("a model needs at least one kernel")
        if mus.shape != (L, 2) or bs.shape != (L, 3) or pis.shape != (L,) or ms.shape != (L,):
            raise ValueError("inconsistent parameter array shapes")
        for arr in (mus, bs, pis, ms):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")
            arr.flags.writeable = False
        self.mus = mus
        self.bs = bs
        self.pis = pis
        self.ms = ms
        self.mode = ModelMode(mode)
        if not isinstance(domain, ModelDomain):
            raise TypeError("domain must be a ModelDomain")
        self.domain = domain

    @classmethod
    def from_kernels(cls, kernels, mode, domain):
        kernels = list(kernels)
        if not kernels:
            raise ValueError("a model needs at least one kernel")
        mus = np.stack([k.mu for k in kernels])
        bs = np.stack([k.b for k in kernels])
        pis = np.array([k.pi for k in kernels])
        ms = np.array([k.m for k in kernels])
        return cls(mus, bs, pis, ms, mode, domain)

    @property
    def kernel_count(self):
        return self.mus.shape[0]

    @property
    def kernels(self):
        return [Kernel(self.mus[j].copy(), self.bs[j].copy(),
                       self.pis[j], self.ms[j])
                for j in range(self.kernel_count)]

    def with_arrays(self, mus=None, bs=None, pis=None, ms=None):
        return MixtureModel(
            self.mus if mus is None else mus,
            self.bs if bs is None else bs,
            self.pis if pis is None else pis,
            self.ms if ms is None else ms,
            self.mode, self.domain,
        )

    def __repr__(self):
        return (f"MixtureModel(L={self.kernel_count}, mode={self.mode.value}, "
                f"domain={self.domain.image_width}x{self.domain.image_height}"
                f"/{self.domain.coord_scale:g})")


def _check_point(x):
    x = np.asarray(x, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    return x


def kernel_response(kernel, x):
    """Gaussian response exp(-0.5 d^T B^T B d) with d = x - mu; in (0, 1]."""
    x = _check_point(x)
    d = x - kernel.mu
    u = kernel.b_matrix @ d
    return float(np.exp(-0.5 * float(u @ u)))


def eval_gates(model, x):
    """Softmax gate values at a point; length-L array summing to one.

    Uses max-exponent subtraction for stability. Raises
    DegenerateGateError when the (stabilized) denominator magnitude falls
    below 1e-12.
    """
    if model.mode is not ModelMode.SMOE_GATING:
        raise ValueError("gates are defined for gating-mode models only")
    x = _check_point(x)
    d = np.array([x[0] - model.mus[:, 0], x[1] - model.mus[:, 1]])
    u0 = model.bs[:, 0] * d[0]
    u1 = model.bs[:, 1] * d[0] + model.bs[:, 2] * d[1]
    e = -0.5 * (u0 * u0 + u1 * u1)
    kt = np.exp(e - e.max())
    den = float(np.dot(model.pis, kt))
    if abs(den) < GATE_DENOM_GUARD:
        raise DegenerateGateError(x)
    return model.pis * kt / den


def eval_points(model, px, py, workers_hint=True):
    """Evaluate the regression at flat coordinate arrays (unclamped)."""
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    if px.shape != py.shape or px.ndim != 1:
        raise ValueError("px and py must be equal-length 1-D arrays")
    if not (np.all(np.isfinite(px)) and np.all(np.isfinite(py))):
        raise ValueError("evaluation points must be finite")
    n = px.shape[0]
    ypred = np.empty(n)
    if model.mode is ModelMode.SMOE_GATING:
        denom = np.empty(n)
        bounds = _kernels.chunk_bounds(n)
        if len(bounds) > 2 and workers_hint:
            _kernels._smoe_eval_parallel(px, py, model.mus, model.bs,
                                         model.pis, model.ms, bounds, ypred, denom)
        else:
            _kernels._smoe_eval_range(px, py, model.mus, model.bs,
                                      model.pis, model.ms, 0, n, ypred, denom)
        bad = np.abs(denom) < GATE_DENOM_GUARD
        if bad.any():
            i = int(np.argmax(bad))
            raise DegenerateGateError((px[i], py[i]), pixel_index=i)
    else:
        bounds = _kernels.chunk_bounds(n)
        if len(bounds) > 2 and workers_hint:
            _kernels._rbf_eval_parallel(px, py, model.mus, model.bs,
                                        model.ms, bounds, ypred)
        else:
            _kernels._rbf_eval_range(px, py, model.mus, model.bs,
                                     model.ms, 0, n, ypred)
    return ypred


def eval_point(model, x):
    """Regression value at one point. Not clamped to [0, 1]."""
    x = _check_point(x)
    if model.mode is ModelMode.SMOE_GATING:
        gates = eval_gates(model, x)
        return float(np.dot(model.ms, gates))
    d0 = x[0] - model.mus[:, 0]
    d1 = x[1] - model.mus[:, 1]
    u0 = model.bs[:, 0] * d0
    u1 = model.bs[:, 1] * d0 + model.bs[:, 2] * d1
    return float(np.dot(model.ms, np.exp(-0.5 * (u0 * u0 + u1 * u1))))


def render(model, out_width, out_height):
    """Sample the model on an out_width x out_height raster covering its
    domain; clamps to [0, 1] (the only place clamping happens)."""
    out_width = int(out_width)
    out_height = int(out_height)
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be >= 1")
    px, py = model.domain.pixel_centers(out_width, out_height)
    values = eval_points(model, px, py)
    return GrayImage(np.clip(values, 0.0, 1.0).reshape(out_height, out_width))


def image_sample_coords(image, domain):
    """Flat pixel-center coordinates of an image raster in a domain.

    The image dimensions must match the domain raster (fitting always
    happens on the native grid).
    """
    if (image.width, image.height) != (domain.image_width, domain.image_height):
        raise ValueError("image dimensions do not match the model domain")
    return domain.pixel_centers()
