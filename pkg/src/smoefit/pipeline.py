"""End-to-end fitting: initialization, global optimization with
sparsification, reconstruction, and artifact emission."""

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineParams, grid_init, kmeans_init, s_smoe_init
from .errors import EmptyModelError
from .export import aggregate
from .images import load_gray_image, save_gray_image
from .local_init import AdjustParams, run_all_blocks
from .metrics import SSIM_WINDOW, psnr, ssim
from .model import MixtureModel, ModelMode, render
from .modelfile import save_model
from .optim import OptimizeConfig, optimize, prune_negative
from .segment import SegmentParams, segment

INIT_METHODS = ("grid", "kmeans", "s-smoe", "as-smoe")


@dataclass
class RunConfig:
    input_path: str | None = None
    init: str = "as-smoe"
    mode: str = "smoe"
    d_th: float = 40.0
    min_segment_px: int = 16
    margin_px: int = 5
    cbb_side: int = 32
    adjust: AdjustParams = field(default_factory=AdjustParams)
    opt: OptimizeConfig = field(default_factory=lambda: OptimizeConfig(
        max_epochs=20000, prune_every=10))
    baseline: BaselineParams = field(default_factory=lambda: BaselineParams(
        target_l=500))
    workers: int = 1
    seed: int = 0
    out_dir: str = "."

    def __post_init__(self):
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")
        if self.mode not in ("smoe", "rbf"):
            raise ValueError("mode must be 'smoe' or 'rbf'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class FitResult:
    model: MixtureModel
    recon: object
    metrics: dict
    trace: object
    paths: dict


@dataclass
class InitResult:
    model: MixtureModel
    recon: object
    metrics: dict
    paths: dict


class _StageTimer:
    def __init__(self):
        self.seconds = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + (
                time.perf_counter() - t0)


def _as_mode(model, mode_name):
    mode = ModelMode.SMOE_GATING if mode_name == "smoe" else ModelMode.RBF_SUM
    if model.mode is mode:
        return model
    return MixtureModel(model.mus, model.bs, model.pis, model.ms, mode,
                        model.domain)


def build_initialization(config, image, timer=None):
    """Run the configured initializer; returns (model, info dict)."""
    timer = timer if timer is not None else _StageTimer()
    info = {"init": config.init, "blocks_failed": 0, "warnings": []}
    segmap = None
    if config.init in ("s-smoe", "as-smoe"):
        with timer.stage("segment"):
            segmap = segment(image, SegmentParams(
                d_th=config.d_th, min_segment_px=config.min_segment_px))
        info["segment_count"] = segmap.segment_count
    if config.init == "as-smoe":
        adjust = replace(config.adjust, seed=config.seed)
        with timer.stage("local_init"):
            locals_ = run_all_blocks(image, segmap, adjust,
                                     workers=config.workers,
                                     margin_px=config.margin_px,
                                     cbb_side=config.cbb_side)
        info["blocks_failed"] = segmap.segment_count - len(locals_)
        for lm in locals_:
            for w in lm.warnings:
                info["warnings"].append(f"segment {lm.block.segment_id}: {w}")
        with timer.stage("export"):
            model, stats = aggregate(locals_, image.width, image.height)
        info["export_stats"] = stats
        info["local_models"] = locals_
    else:
        baseline = replace(config.baseline, seed=config.seed)
        with timer.stage("baseline_init"):
            if config.init == "grid":
                model = grid_init(image, baseline)
            elif config.init == "kmeans":
                model = kmeans_init(image, baseline)
            else:
                model = s_smoe_init(image, segmap, baseline)
    info["l_init"] = model.kernel_count
    return _as_mode(model, config.mode), info


def _quality(image, recon):
    score = {"psnr_db": psnr(image, recon)}
    if min(image.width, image.height) >= SSIM_WINDOW:
        score["ssim"] = ssim(image, recon)
    else:
        score["ssim"] = None
    return score


def _init_seconds(seconds):
    return sum(seconds.get(k, 0.0)
               for k in ("segment", "local_init", "export", "baseline_init"))


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def init_only(config, image=None):
    """Initialization-quality protocol: emit the initial model, its
    rendering, and the quality scores before any global optimization."""
    timer = _StageTimer()
    t_start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if image is None:
        with timer.stage("io"):
            image = load_gray_image(config.input_path)
    model, info = build_initialization(config, image, timer)
    with timer.stage("reconstruct"):
        recon = render(model, image.width, image.height)
        score = _quality(image, recon)
    paths = {
        "model": out / "init_model.json",
        "recon": out / "init_recon.png",
        "metrics": out / "init_metrics.json",
    }
    metrics = {
        "input": config.input_path or "in-memory",
        "init": config.init,
        "mode": config.mode,
        "d_th": config.d_th,
        "l_init": info["l_init"],
        "psnr_db": score["psnr_db"],
        "ssim": score["ssim"],
        "segment_count": info.get("segment_count"),
        "blocks_failed": info["blocks_failed"],
        "warnings": info["warnings"],
    }
    with timer.stage("io"):
        save_model(model, paths["model"])
        save_gray_image(recon, paths["recon"])
        if "export_stats" in info:
            paths["export_stats"] = out / "export_stats.json"
            _write_json(paths["export_stats"], info["export_stats"].to_dict())
        metrics["seconds"] = dict(timer.seconds)
        metrics["seconds"]["init_total"] = _init_seconds(timer.seconds)
        metrics["seconds"]["total"] = time.perf_counter() - t_start
        _write_json(paths["metrics"], metrics)
    return InitResult(model=model, recon=recon, metrics=metrics, paths=paths)


def fit(config, image=None):
    """Full pipeline: initialize, globally optimize with the loss-delta
    stopping rule, prune, reconstruct, and write artifacts."""
    timer = _StageTimer()
    t_start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if image is None:
        with timer.stage("io"):
            image = load_gray_image(config.input_path)
    init_model, info = build_initialization(config, image, timer)
    opt_cfg = replace(config.opt, seed=config.seed)
    if config.mode == "rbf":
        # Gate weights do not enter the RBF regression, so L1 pressure and
        # weight-sign pruning are not meaningful there.
        opt_cfg = replace(opt_cfg, lam=0.0, prune_every=0)
    warnings = list(info["warnings"])
    with timer.stage("global_opt"):
        opt_model, trace = optimize(init_model, image, config=opt_cfg)
        try:
            final_model, removed = prune_negative(opt_model)
        except EmptyModelError:
            j = int(np.argmax(opt_model.pis))
            final_model = MixtureModel(
                opt_model.mus[j:j + 1], opt_model.bs[j:j + 1],
                opt_model.pis[j:j + 1], opt_model.ms[j:j + 1],
                opt_model.mode, opt_model.domain)
            removed = opt_model.kernel_count - 1
            warnings.append("final pruning removed every kernel; "
                            "kept the highest-weight one")
    warnings.extend(trace.warnings)
    with timer.stage("reconstruct"):
        recon = render(final_model, image.width, image.height)
        score = _quality(image, recon)
    paths = {
        "model": out / "model.json",
        "recon": out / "recon.png",
        "trace": out / "trace.csv",
        "metrics": out / "metrics.json",
    }
    metrics = {
        "input": config.input_path or "in-memory",
        "init": config.init,
        "mode": config.mode,
        "d_th": config.d_th,
        "l_init": info["l_init"],
        "l_opt": final_model.kernel_count,
        "pruned_final": removed,
        "psnr_db": score["psnr_db"],
        "ssim": score["ssim"],
        "stop_reason": trace.stop_reason,
        "epochs": trace.rows[-1].epoch if trace.rows else 0,
        "segment_count": info.get("segment_count"),
        "blocks_failed": info["blocks_failed"],
        "warnings": warnings,
    }
    with timer.stage("io"):
        save_model(final_model, paths["model"])
        save_gray_image(recon, paths["recon"])
        trace.write_csv(paths["trace"])
        if "export_stats" in info:
            paths["export_stats"] = out / "export_stats.json"
            _write_json(paths["export_stats"], info["export_stats"].to_dict())
        metrics["seconds"] = dict(timer.seconds)
        metrics["seconds"]["init_total"] = _init_seconds(timer.seconds)
        metrics["seconds"]["total"] = time.perf_counter() - t_start
        _write_json(paths["metrics"], metrics)
    return FitResult(model=final_model, recon=recon, metrics=metrics,
                     trace=trace, paths=paths)


def compare(config, inputs, methods, csv_path):
    """Run fit per (input, method) cell and tabulate the results.

    Returns (rows, all_ok); failed cells carry an error column and leave
    the numeric fields blank.
    """
    import csv as _csv

    if len(methods) < 2:
        raise ValueError("compare needs at least two init methods")
    rows = []
    all_ok = True
    for input_path in inputs:
        for method in methods:
            stem = Path(input_path).stem
            cell_dir = Path(config.out_dir) / f"{stem}_{method}"
            cell = replace(config, input_path=str(input_path), init=method,
                           out_dir=str(cell_dir))
            row = {"image": stem, "method": method, "d_th": config.d_th,
                   "l_init": "", "l_opt": "", "psnr": "", "ssim": "",
                   "seconds_init": "", "seconds_global": "", "error": ""}
            try:
                res = fit(cell)
                row.update({
                    "l_init": res.metrics["l_init"],
                    "l_opt": res.metrics["l_opt"],
                    "psnr": f"{res.metrics['psnr_db']:.4f}",
                    "ssim": ("" if res.metrics["ssim"] is None
                             else f"{res.metrics['ssim']:.6f}"),
                    "seconds_init": f"{res.metrics['seconds']['init_total']:.4f}",
                    "seconds_global": f"{res.metrics['seconds']['global_opt']:.4f}",
                })
            except Exception as err:  # noqa: BLE001 - tabulated per cell
                row["error"] = repr(err)
                all_ok = False
            rows.append(row)
    fieldnames = ["image", "method", "d_th", "l_init", "l_opt", "psnr",
                  "ssim", "seconds_init", "seconds_global", "error"]
    with open(csv_path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return rows, all_ok
