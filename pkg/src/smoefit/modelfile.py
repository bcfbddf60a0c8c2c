"""Line-oriented JSON model files.

First line: header with format version, raster dimensions, coordinate
scale, mode and kernel count. One line per kernel follows. Floats use
shortest round-trip decimal form, so save -> load -> save is byte-stable.
"""

import json

import numpy as np

from .errors import ModelFileError
from .model import MixtureModel, ModelDomain, ModelMode

FORMAT_VERSION = 1


def save_model(model, path):
    with open(path, "w") as fh:
        header = {
            "format_version": FORMAT_VERSION,
            "image_width": model.domain.image_width,
            "image_height": model.domain.image_height,
            "coord_scale": model.domain.coord_scale,
            "mode": model.mode.value,
            "kernel_count": model.kernel_count,
        }
        fh.write(json.dumps(header) + "\n")
        for j in range(model.kernel_count):
            rec = {
                "mu": [model.mus[j, 0], model.mus[j, 1]],
                "b": [model.bs[j, 0], model.bs[j, 1], model.bs[j, 2]],
                "pi": model.pis[j],
                "m": model.ms[j],
            }
            fh.write(json.dumps(rec) + "\n")


def _parse_line(path, number, line, required):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise ModelFileError(path, number, f"invalid JSON ({err.msg})") from err
    if not isinstance(obj, dict):
        raise ModelFileError(path, number, "expected a JSON object")
    for key in required:
        if key not in obj:
            raise ModelFileError(path, number, f"missing field {key!r}")
    return obj


def load_model(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ModelFileError(path, 1, "empty file")
    header = _parse_line(path, 1, lines[0],
                         ("format_version", "image_width", "image_height",
                          "coord_scale", "mode", "kernel_count"))
    if header["format_version"] != FORMAT_VERSION:
        raise ModelFileError(path, 1,
                             f"unsupported format version {header['format_version']}")
    try:
        mode = ModelMode(header["mode"])
    except ValueError as err:
        raise ModelFileError(path, 1, f"unknown mode {header['mode']!r}") from err
    L = header["kernel_count"]
    if not isinstance(L, int) or L < 1:
        raise ModelFileError(path, 1, f"bad kernel_count {L!r}")
    if len(lines) - 1 != L:
        raise ModelFileError(path, len(lines),
                             f"expected {L} kernel lines, found {len(lines) - 1}")
    mus = np.empty((L, 2))
    bs = np.empty((L, 3))
    pis = np.empty(L)
    ms = np.empty(L)
    for j in range(L):
        number = j + 2
        rec = _parse_line(path, number, lines[j + 1], ("mu", "b", "pi", "m"))
        if len(rec["mu"]) != 2 or len(rec["b"]) != 3:
            raise ModelFileError(path, number, "mu must have 2 and b 3 entries")
        mus[j] = rec["mu"]
        bs[j] = rec["b"]
        pis[j] = rec["pi"]
        ms[j] = rec["m"]
    if not (np.all(np.isfinite(mus)) and np.all(np.isfinite(bs))
            and np.all(np.isfinite(pis)) and np.all(np.isfinite(ms))):
        raise ModelFileError(path, 1, "non-finite kernel parameters")
    try:
        domain = ModelDomain(header["image_width"], header["image_height"],
                             header["coord_scale"])
    except (TypeError, ValueError) as err:
        raise ModelFileError(path, 1, f"bad domain: {err}") from err
    return MixtureModel(mus, bs, pis, ms, mode, domain)
