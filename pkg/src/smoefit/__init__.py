"""smoefit: sparse steered mixture-of-experts and steered RBF regression
for grayscale images, with adaptive segmentation-based initialization.

The model is a continuous function over the image plane, so a fitted
model renders at any resolution. Fitting runs in two stages: per-segment
local optimization on standardized corona blocks (with adaptive kernel
doubling and sparsification), then export of the surviving kernels into a
single global model that a final optimization refines.
"""

from .baselines import (BaselineParams, default_bandwidth_px, grid_init,
                        grid_shape, kmeans_init, s_smoe_init)
from .errors import (AllBlocksFailedError, DegenerateGateError,
                     EmptyModelError, ModelFileError, SmoefitError)
from .export import ExportStats, aggregate, drop_outside, upscale_kernel
from .images import load_gray_image, save_gray_image
from .local_init import (AdjustParams, CoronaBlock, LocalModel, adjust_kernels,
                         crop_block, run_all_blocks)
from .metrics import QualityScore, psnr, psnr_from_mse, quality, ssim
from .model import (GrayImage, Kernel, MixtureModel, ModelDomain, ModelMode,
                    domain_for_image, eval_gates, eval_point, eval_points,
                    kernel_response, render)
from .modelfile import load_model, save_model
from .optim import (AdamState, LossReport, OptimizeConfig, OptimizeTrace,
                    ParamGradients, adam_step, compute_gradients, compute_loss,
                    optimize, prune_negative)
from .pipeline import (FitResult, InitResult, RunConfig, compare, fit,
                       init_only)
from .segment import (SegmentMap, SegmentParams, SizeStats, save_label_map,
                      segment, segment_size_stats)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AdjustParams", "AllBlocksFailedError", "BaselineParams",
    "CoronaBlock", "DegenerateGateError", "EmptyModelError", "ExportStats",
    "FitResult", "GrayImage", "InitResult", "Kernel", "LocalModel",
    "LossReport", "MixtureModel", "ModelDomain", "ModelFileError",
    "ModelMode", "OptimizeConfig", "OptimizeTrace", "ParamGradients",
    "QualityScore", "RunConfig", "SegmentMap", "SegmentParams",
    "SizeStats", "SmoefitError", "adam_step", "adjust_kernels", "aggregate",
    "compare", "compute_gradients", "compute_loss", "crop_block",
    "default_bandwidth_px", "domain_for_image", "drop_outside", "eval_gates",
    "eval_point", "eval_points", "fit", "grid_init", "grid_shape",
    "init_only", "kernel_response", "kmeans_init", "load_gray_image",
    "load_model", "optimize", "prune_negative", "psnr", "psnr_from_mse",
    "quality", "render", "run_all_blocks", "s_smoe_init", "save_gray_image",
    "save_label_map", "save_model", "segment", "segment_size_stats", "ssim",
    "upscale_kernel",
]
