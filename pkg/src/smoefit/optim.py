"""L1-regularized MSE loss, analytic gradients, Adam, pruning, and the
optimization loop shared by the local and global fitting stages.

The loss over a sample set S is mean squared error plus a signed L1
pressure on the gate weights, total = mse + lam * sum(pi). Combined with
non-negative initialization and removal of kernels whose weight falls
below zero, the signed term shrinks and then eliminates redundant
kernels. An absolute-value variant is available behind `l1_absolute`.
"""

import csv
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateGateError, EmptyModelError
from .metrics import psnr_from_mse
from .model import MixtureModel, ModelMode, eval_points, image_sample_coords

TRACE_CSV_FIELDS = ("epoch", "total_loss", "mse", "l1", "psnr_db",
                    "kernel_count", "elapsed_s")


@dataclass(frozen=True)
class LossReport:
    total: float
    mse: float
    l1: float
    sample_count: int


@dataclass
class ParamGradients:
    """Per-kernel partials, same order as the model's kernel list."""

    d_mu: np.ndarray
    d_b: np.ndarray
    d_pi: np.ndarray
    d_m: np.ndarray

    def flatten(self):
        return np.concatenate([self.d_mu.ravel(), self.d_b.ravel(),
                               self.d_pi, self.d_m])


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators with per-group learning rates."""

    m_mu: np.ndarray
    v_mu: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    m_pi: np.ndarray
    v_pi: np.ndarray
    m_m: np.ndarray
    v_m: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_mu: float = 1e-3
    lr_b: float = 1e-2
    lr_pi: float = 1e-3
    lr_m: float = 1e-3

    @classmethod
    def for_kernel_count(cls, L, **hyper):
        return cls(
            m_mu=np.zeros((L, 2)), v_mu=np.zeros((L, 2)),
            m_b=np.zeros((L, 3)), v_b=np.zeros((L, 3)),
            m_pi=np.zeros(L), v_pi=np.zeros(L),
            m_m=np.zeros(L), v_m=np.zeros(L),
            **hyper,
        )

    def copy(self):
        return AdamState(
            self.m_mu.copy(), self.v_mu.copy(), self.m_b.copy(), self.v_b.copy(),
            self.m_pi.copy(), self.v_pi.copy(), self.m_m.copy(), self.v_m.copy(),
            step=self.step, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            lr_mu=self.lr_mu, lr_b=self.lr_b, lr_pi=self.lr_pi, lr_m=self.lr_m,
        )


@dataclass
class OptimizeConfig:
    """Knobs for the optimization loop.

    `loss_delta_stop` is evaluated on a moving average of the last
    `delta_window` per-epoch loss decreases, which makes the threshold
    rule robust to Adam's epoch-to-epoch noise. `prune_every` > 0 removes
    negative-weight kernels every that many epochs during the run (the
    global stage uses this; 0 leaves the kernel set fixed).
    """

    lam: float = 1e-4
    max_epochs: int = 300
    loss_delta_stop: float = 1e-6
    delta_window: int = 10
    target_psnr: float | None = None
    record_best: bool = True
    seed: int = 0
    l1_absolute: bool = False
    prune_every: int = 0
    lr_mu: float = 1e-3
    lr_b: float = 1e-2
    lr_pi: float = 1e-3
    lr_m: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.loss_delta_stop > 0:
            raise ValueError("loss_delta_stop must be positive")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    total: float
    mse: float
    l1: float
    psnr_db: float
    kernel_count: int
    elapsed_s: float


@dataclass
class OptimizeTrace:
    rows: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = -1
    warnings: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_CSV_FIELDS)
            for r in self.rows:
                writer.writerow([r.epoch, repr(r.total), repr(r.mse), repr(r.l1),
                                 repr(r.psnr_db), r.kernel_count, f"{r.elapsed_s:.6f}"])


def _select_samples(domain, image, region):
    px, py = image_sample_coords(image, domain)
    tgt = image.data.ravel()
    if region is not None:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != (image.height, image.width):
            raise ValueError("region mask shape does not match the image")
        flat = mask.ravel()
        if not flat.any():
            raise ValueError("region selects no pixels")
        px = np.ascontiguousarray(px[flat])
        py = np.ascontiguousarray(py[flat])
        tgt = tgt[flat]
    return px, py, np.ascontiguousarray(tgt)


def _eval_loss_grads(px, py, tgt, mus, bs, pis, ms, mode, lam, l1_absolute):
    """Fused loss + analytic gradients of the regularized objective."""
    n = px.shape[0]
    bounds = _kernels.chunk_bounds(n)
    if mode is ModelMode.SMOE_GATING:
        if bounds.shape[0] == 2:
            d_mu = np.zeros_like(mus)
            d_b = np.zeros_like(bs)
            d_pi = np.zeros_like(pis)
            d_m = np.zeros_like(ms)
            sq, mad, mix = _kernels._smoe_grad_range(
                px, py, tgt, mus, bs, pis, ms, 0, n, d_mu, d_b, d_pi, d_m)
        else:
            sqs, d_mus, d_bs, d_pis, d_ms, mads, mixs = _kernels._smoe_grad_parallel(
                px, py, tgt, mus, bs, pis, ms, bounds)
            c = int(np.argmin(mads))
            mad, mix = float(mads[c]), int(mixs[c])
            sq = float(np.sum(sqs))
            d_mu = np.sum(d_mus, axis=0)
            d_b = np.sum(d_bs, axis=0)
            d_pi = np.sum(d_pis, axis=0)
            d_m = np.sum(d_ms, axis=0)
        if mad < _kernels.GATE_DENOM_GUARD:
            raise DegenerateGateError((px[mix], py[mix]), pixel_index=mix)
    else:
        if bounds.shape[0] == 2:
            d_mu = np.zeros_like(mus)
            d_b = np.zeros_like(bs)
            d_m = np.zeros_like(ms)
            sq = _kernels._rbf_grad_range(
                px, py, tgt, mus, bs, ms, 0, n, d_mu, d_b, d_m)
        else:
            sqs, d_mus, d_bs, d_ms = _kernels._rbf_grad_parallel(
                px, py, tgt, mus, bs, ms, bounds)
            sq = float(np.sum(sqs))
            d_mu = np.sum(d_mus, axis=0)
            d_b = np.sum(d_bs, axis=0)
            d_m = np.sum(d_ms, axis=0)
        d_pi = np.zeros_like(pis)
    inv = 1.0 / n
    d_mu *= inv
    d_b *= inv
    d_pi *= inv
    d_m *= inv
    if lam != 0.0:
        d_pi += lam * np.sign(pis) if l1_absolute else lam
    mse = float(sq) * inv
    l1 = lam * float(np.sum(np.abs(pis) if l1_absolute else pis))
    report = LossReport(total=mse + l1, mse=mse, l1=l1, sample_count=n)
    return report, ParamGradients(d_mu, d_b, d_pi, d_m)


def compute_loss(model, image, region=None, lam=0.0, l1_absolute=False):
    """Regularized loss of a model against an image (optionally masked)."""
    px, py, tgt = _select_samples(model.domain, image, region)
    ypred = eval_points(model, px, py)
    resid = ypred - tgt
    mse = float(np.dot(resid, resid)) / resid.shape[0]
    l1 = lam * float(np.sum(np.abs(model.pis) if l1_absolute else model.pis))
    return LossReport(total=mse + l1, mse=mse, l1=l1, sample_count=resid.shape[0])


def compute_gradients(model, image, region=None, lam=0.0, l1_absolute=False):
    """Loss report plus exact analytic gradients for every kernel."""
    px, py, tgt = _select_samples(model.domain, image, region)
    return _eval_loss_grads(px, py, tgt, model.mus, model.bs, model.pis,
                            model.ms, model.mode, lam, l1_absolute)


def adam_step(state, model, grads):
    """One bias-corrected Adam update; returns (new model, new state)."""
    L = model.kernel_count
    if (grads.d_mu.shape != (L, 2) or grads.d_b.shape != (L, 3)
            or grads.d_pi.shape != (L,) or grads.d_m.shape != (L,)
            or state.m_mu.shape != (L, 2)):
        raise ValueError("gradient/state shapes do not match the model")
    new_state = state.copy()
    new_state.step += 1
    mus = model.mus.copy()
    bs = model.bs.copy()
    pis = model.pis.copy()
    ms = model.ms.copy()
    _apply_adam(new_state, mus, bs, pis, ms, grads)
    return model.with_arrays(mus, bs, pis, ms), new_state


def _apply_adam(state, mus, bs, pis, ms, grads):
    t = state.step
    _kernels._adam_update(mus.ravel(), grads.d_mu.ravel(),
                          state.m_mu.ravel(), state.v_mu.ravel(),
                          state.lr_mu, state.beta1, state.beta2, state.eps, t)
    _kernels._adam_update(bs.ravel(), grads.d_b.ravel(),
                          state.m_b.ravel(), state.v_b.ravel(),
                          state.lr_b, state.beta1, state.beta2, state.eps, t)
    _kernels._adam_update(pis, grads.d_pi, state.m_pi, state.v_pi,
                          state.lr_pi, state.beta1, state.beta2, state.eps, t)
    _kernels._adam_update(ms, grads.d_m, state.m_m, state.v_m,
                          state.lr_m, state.beta1, state.beta2, state.eps, t)


def prune_negative(model):
    """Remove kernels with pi < 0, preserving order. Raises EmptyModelError
    if nothing would survive."""
    keep = model.pis >= 0.0
    removed = int(np.sum(~keep))
    if removed == 0:
        return model, 0
    if not keep.any():
        raise EmptyModelError(f"all {model.kernel_count} kernels have pi < 0")
    pruned = MixtureModel(model.mus[keep], model.bs[keep], model.pis[keep],
                          model.ms[keep], model.mode, model.domain)
    return pruned, removed


class _Loop:
    """Step-then-evaluate epoch engine with best-snapshot tracking.

    Holds mutable working copies of the kernel arrays plus Adam moments.
    Keeps `_report`/`_grads` in sync with the current parameters; topology
    changes (prune, double) refresh them with an uncounted evaluation and
    restart the loss-delta window.
    """

    def __init__(self, mode, domain, px, py, tgt, mus, bs, pis, ms, config,
                 trace=None, clock0=None, on_epoch=None):
        self.mode = mode
        self.domain = domain
        self.px, self.py, self.tgt = px, py, tgt
        self.mus = np.ascontiguousarray(mus, dtype=np.float64).copy()
        self.bs = np.ascontiguousarray(bs, dtype=np.float64).copy()
        self.pis = np.ascontiguousarray(pis, dtype=np.float64).copy()
        self.ms = np.ascontiguousarray(ms, dtype=np.float64).copy()
        self.cfg = config
        self.adam = AdamState.for_kernel_count(
            self.mus.shape[0], beta1=config.beta1, beta2=config.beta2,
            eps=config.eps, lr_mu=config.lr_mu, lr_b=config.lr_b,
            lr_pi=config.lr_pi, lr_m=config.lr_m)
        self.trace = trace if trace is not None else OptimizeTrace()
        self.on_epoch = on_epoch
        self.epoch = 0
        self._t0 = time.perf_counter() if clock0 is None else clock0
        self._deltas = deque(maxlen=config.delta_window)
        self._prev_total = None
        self.best = None  # (epoch, LossReport, mus, bs, pis, ms)
        self._report, self._grads = self._evaluate()
        self._record(self._report)
        self._prev_total = self._report.total

    @property
    def kernel_count(self):
        return self.mus.shape[0]

    def _evaluate(self):
        return _eval_loss_grads(self.px, self.py, self.tgt,
                                self.mus, self.bs, self.pis, self.ms,
                                self.mode, self.cfg.lam, self.cfg.l1_absolute)

    def _record(self, report):
        row = EpochRecord(
            epoch=self.epoch, total=report.total, mse=report.mse, l1=report.l1,
            psnr_db=psnr_from_mse(report.mse), kernel_count=self.kernel_count,
            elapsed_s=time.perf_counter() - self._t0)
        self.trace.rows.append(row)
        if self.on_epoch is not None:
            self.on_epoch(row)
        if self.cfg.record_best and (self.best is None
                                     or report.total < self.best[1].total):
            self.best = (self.epoch, report, self.mus.copy(), self.bs.copy(),
                         self.pis.copy(), self.ms.copy())

    def run(self, n_epochs, target_psnr=None, delta_stop=None, prune_every=0):
        """Advance up to n_epochs; returns the stop reason."""
        if target_psnr is not None and psnr_from_mse(self._report.mse) > target_psnr:
            return "target_psnr"
        for _ in range(n_epochs):
            self.adam.step += 1
            _apply_adam(self.adam, self.mus, self.bs, self.pis, self.ms,
                        self._grads)
            self._report, self._grads = self._evaluate()
            self.epoch += 1
            self._record(self._report)
            if self._prev_total is not None:
                self._deltas.append(self._prev_total - self._report.total)
            self._prev_total = self._report.total
            if target_psnr is not None and psnr_from_mse(self._report.mse) > target_psnr:
                return "target_psnr"
            if (delta_stop is not None and self._deltas
                    and float(np.mean(self._deltas)) < delta_stop):
                return "loss_delta"
            if prune_every > 0 and self.epoch % prune_every == 0:
                self.prune_inloop()
        return "epochs"

    def _refresh_after_topology_change(self):
        self._report, self._grads = self._evaluate()
        self._deltas.clear()
        self._prev_total = self._report.total

    def prune_inloop(self):
        """Drop pi < 0 kernels mid-run; never empties the model."""
        keep = self.pis >= 0.0
        removed = int(np.sum(~keep))
        if removed == 0:
            return 0
        if not keep.any():
            keep = np.zeros_like(keep)
            keep[int(np.argmax(self.pis))] = True
            removed = self.kernel_count - 1
            self.trace.warnings.append(
                f"epoch {self.epoch}: pruning would remove every kernel; "
                "kept the highest-weight one")
        self.mus = np.ascontiguousarray(self.mus[keep])
        self.bs = np.ascontiguousarray(self.bs[keep])
        self.pis = np.ascontiguousarray(self.pis[keep])
        self.ms = np.ascontiguousarray(self.ms[keep])
        for name in ("m_mu", "v_mu", "m_b", "v_b", "m_pi", "v_pi", "m_m", "v_m"):
            setattr(self.adam, name,
                    np.ascontiguousarray(getattr(self.adam, name)[keep]))
        # Snapshots across different kernel sets are not comparable (the
        # signed L1 term jumps when negative weights leave), so best
        # tracking restarts within the new topology.
        self.best = None
        self._refresh_after_topology_change()
        self._record_rebaseline()
        return removed

    def _record_rebaseline(self):
        if self.cfg.record_best and self.best is None:
            self.best = (self.epoch, self._report, self.mus.copy(),
                         self.bs.copy(), self.pis.copy(), self.ms.copy())

    def double_kernels(self, rng, target, jitter_sigma=0.05, fresh_random=False,
                       warm_moments=False):
        """Grow the kernel set to `target` kernels; returns the number added.

        New kernels duplicate the existing ones round-robin; each source
        kernel's gate weight is split evenly across itself and its copies
        so the total gate mass is unchanged. Duplicate centers are
        jittered (or re-randomized with `fresh_random`).
        """
        L = self.kernel_count
        add = target - L
        if add <= 0:
            return 0
        ex, ey = self.domain.extent
        src = np.arange(add) % L
        copies = np.bincount(src, minlength=L).astype(np.float64)
        self.pis /= copies + 1.0
        new_pis = self.pis[src].copy()
        if fresh_random:
            new_mus = np.column_stack([rng.uniform(0, ex, add),
                                       rng.uniform(0, ey, add)])
            sigma0 = 0.5 / math.sqrt(target)
            new_bs = np.tile([1.0 / sigma0, 0.0, 1.0 / sigma0], (add, 1))
            new_ms = rng.uniform(0.0, 1.0, add)
        else:
            new_mus = self.mus[src] + rng.normal(0.0, jitter_sigma, (add, 2))
            new_mus[:, 0] = np.clip(new_mus[:, 0], 0.0, ex)
            new_mus[:, 1] = np.clip(new_mus[:, 1], 0.0, ey)
            new_bs = self.bs[src].copy()
            new_ms = self.ms[src].copy()
        self.mus = np.ascontiguousarray(np.vstack([self.mus, new_mus]))
        self.bs = np.ascontiguousarray(np.vstack([self.bs, new_bs]))
        self.pis = np.ascontiguousarray(np.concatenate([self.pis, new_pis]))
        self.ms = np.ascontiguousarray(np.concatenate([self.ms, new_ms]))
        if warm_moments:
            for name in ("m_mu", "v_mu", "m_b", "v_b", "m_pi", "v_pi",
                         "m_m", "v_m"):
                old = getattr(self.adam, name)
                setattr(self.adam, name,
                        np.ascontiguousarray(np.concatenate([old, old[src]])))
        else:
            hyper = dict(beta1=self.adam.beta1, beta2=self.adam.beta2,
                         eps=self.adam.eps, lr_mu=self.adam.lr_mu,
                         lr_b=self.adam.lr_b, lr_pi=self.adam.lr_pi,
                         lr_m=self.adam.lr_m)
            self.adam = AdamState.for_kernel_count(target, **hyper)
        self._refresh_after_topology_change()
        return add

    def current_model(self):
        return MixtureModel(self.mus.copy(), self.bs.copy(), self.pis.copy(),
                            self.ms.copy(), self.mode, self.domain)

    def current_report(self):
        return self._report

    def best_model(self):
        if self.best is None:
            return self.current_model(), self._report, self.epoch
        epoch, report, mus, bs, pis, ms = self.best
        return (MixtureModel(mus.copy(), bs.copy(), pis.copy(), ms.copy(),
                             self.mode, self.domain), report, epoch)


def optimize(model, image, region=None, config=None, on_epoch=None):
    """Run the loop until target PSNR, loss-delta stagnation, or the epoch
    cap; returns (best recorded model, trace)."""
    cfg = config if config is not None else OptimizeConfig()
    px, py, tgt = _select_samples(model.domain, image, region)
    loop = _Loop(model.mode, model.domain, px, py, tgt,
                 model.mus, model.bs, model.pis, model.ms, cfg,
                 on_epoch=on_epoch)
    try:
        reason = loop.run(cfg.max_epochs, target_psnr=cfg.target_psnr,
                          delta_stop=cfg.loss_delta_stop,
                          prune_every=cfg.prune_every)
    except DegenerateGateError as err:
        loop.trace.stop_reason = "error"
        err.trace = loop.trace
        raise
    loop.trace.stop_reason = "max_epochs" if reason == "epochs" else reason
    best, report, best_epoch = loop.best_model()
    loop.trace.best_epoch = best_epoch
    if not cfg.record_best:
        best = loop.current_model()
        loop.trace.best_epoch = loop.epoch
    return best, loop.trace
