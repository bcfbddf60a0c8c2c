"""Command-line surface: fit, init-only, render, compare, and segment.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 partial
batch failure.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import BaselineParams
from .errors import (AllBlocksFailedError, DegenerateGateError,
                     EmptyModelError, ModelFileError, SmoefitError)
from .images import load_gray_image, save_gray_image
from .local_init import AdjustParams
from .metrics import SSIM_WINDOW
from .model import render
from .modelfile import load_model
from .optim import OptimizeConfig
from .pipeline import INIT_METHODS, RunConfig, compare, fit, init_only
from .segment import SegmentParams, save_label_map, segment, segment_size_stats

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4


def _load_config_file(path):
    text = Path(path).read_text()
    if path.endswith(".toml"):
        import tomllib

        return tomllib.loads(text)
    return json.loads(text)


def _add_common(parser):
    parser.add_argument("--config", help="TOML or JSON key-value file; "
                        "flags override its entries")
    parser.add_argument("--init", choices=INIT_METHODS, default=None)
    parser.add_argument("--mode", choices=("smoe", "rbf"), default=None)
    parser.add_argument("--dth", type=float, default=None,
                        help="segmentation intensity threshold (0..255 scale)")
    parser.add_argument("--min-segment", type=int, default=None,
                        help="merge floor in pixels")
    parser.add_argument("--margin", type=int, default=None,
                        help="corona margin in pixels")
    parser.add_argument("--cbb-side", type=int, default=None,
                        help="standard block side in pixels")
    parser.add_argument("--target-psnr", type=float, default=None,
                        help="local adjustment PSNR target (dB)")
    parser.add_argument("--global-target-psnr", type=float, default=None,
                        help="stop global optimization at this PSNR (dB)")
    parser.add_argument("--epochs", type=int, default=None,
                        help="local epoch budget per block")
    parser.add_argument("--checkpoint", type=int, default=None,
                        help="kernel-doubling interval in epochs")
    parser.add_argument("--global-epochs", type=int, default=None,
                        help="global epoch cap")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="L1 weight on the gate weights")
    parser.add_argument("--target-l", type=int, default=None,
                        help="kernel budget for grid/kmeans/s-smoe")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")


_DEFAULTS = {
    "init": "as-smoe", "mode": "smoe", "dth": 40.0, "min_segment": 16,
    "margin": 5, "cbb_side": 32, "target_psnr": 30.0,
    "global_target_psnr": None, "epochs": 300, "checkpoint": 100,
    "global_epochs": 20000, "lam": 1e-4, "target_l": 500, "workers": 1,
    "seed": 0, "out": "smoefit-out",
}


def _resolve(args):
    """Defaults < config file < explicit flags."""
    values = dict(_DEFAULTS)
    if getattr(args, "config", None):
        file_vals = _load_config_file(args.config)
        unknown = set(file_vals) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_vals)
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _run_config(values, input_path, out_dir):
    adjust = AdjustParams(epochs=values["epochs"],
                          checkpoint=min(values["checkpoint"], values["epochs"]),
                          target_psnr=values["target_psnr"],
                          lam=values["lam"])
    opt = OptimizeConfig(lam=values["lam"], max_epochs=values["global_epochs"],
                         target_psnr=values["global_target_psnr"],
                         prune_every=10)
    baseline = BaselineParams(target_l=values["target_l"])
    return RunConfig(input_path=input_path, init=values["init"],
                     mode=values["mode"], d_th=values["dth"],
                     min_segment_px=values["min_segment"],
                     margin_px=values["margin"], cbb_side=values["cbb_side"],
                     adjust=adjust, opt=opt, baseline=baseline,
                     workers=values["workers"], seed=values["seed"],
                     out_dir=out_dir)


def _cmd_fit(args):
    values = _resolve(args)
    config = _run_config(values, args.input, values["out"])
    result = fit(config)
    print(json.dumps(result.metrics, indent=2))
    return EXIT_OK


def _cmd_init_only(args):
    values = _resolve(args)
    config = _run_config(values, args.input, values["out"])
    result = init_only(config)
    print(json.dumps(result.metrics, indent=2))
    return EXIT_OK


def _cmd_render(args):
    model = load_model(args.model)
    if args.size:
        try:
            w, h = (int(v) for v in args.size.lower().split("x"))
        except ValueError as err:
            raise ValueError(f"bad --size {args.size!r}; expected WxH") from err
    else:
        w = max(1, round(model.domain.image_width * args.scale))
        h = max(1, round(model.domain.image_height * args.scale))
    image = render(model, w, h)
    save_gray_image(image, args.output)
    print(f"rendered {w}x{h} to {args.output}")
    return EXIT_OK


def _cmd_compare(args):
    values = _resolve(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = _run_config(values, None, values["out"])
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "compare.csv"
    rows, all_ok = compare(config, args.inputs, methods, csv_path)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK if all_ok else EXIT_PARTIAL


def _cmd_segment(args):
    values = _resolve(args)
    image = load_gray_image(args.input)
    segmap = segment(image, SegmentParams(d_th=values["dth"],
                                          min_segment_px=values["min_segment"]))
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    label_path = out / "labels.png"
    save_label_map(segmap, label_path)
    stats = segment_size_stats(segmap)
    payload = {
        "input": args.input,
        "d_th": values["dth"],
        "segment_count": segmap.segment_count,
        "bbox_side_px": {"min": stats.min, "max": stats.max,
                         "mean": stats.mean, "q1": stats.q1,
                         "median": stats.median, "q3": stats.q3},
    }
    with open(out / "segments.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smoefit",
        description="Sparse gating-network and RBF image regression with "
                    "segmentation-based initialization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="initialize, optimize and reconstruct")
    p_fit.add_argument("input", help="grayscale PNG or PGM")
    _add_common(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_init = sub.add_parser("init-only",
                            help="emit the initialization and its quality")
    p_init.add_argument("input")
    _add_common(p_init)
    p_init.set_defaults(func=_cmd_init_only)

    p_render = sub.add_parser("render", help="resample a model file")
    p_render.add_argument("model")
    p_render.add_argument("output")
    group = p_render.add_mutually_exclusive_group()
    group.add_argument("--scale", type=float, default=1.0)
    group.add_argument("--size", help="output dimensions as WxH")
    p_render.set_defaults(func=_cmd_render)

    p_cmp = sub.add_parser("compare", help="run fit across a method matrix")
    p_cmp.add_argument("inputs", nargs="+")
    p_cmp.add_argument("--methods", required=True,
                       help="comma-separated init methods (at least two)")
    _add_common(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_seg = sub.add_parser("segment", help="debug: segment an image")
    p_seg.add_argument("input")
    _add_common(p_seg)
    p_seg.set_defaults(func=_cmd_segment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelFileError, FileNotFoundError, IsADirectoryError,
            PermissionError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateGateError, EmptyModelError, AllBlocksFailedError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SmoefitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
