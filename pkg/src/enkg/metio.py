"""Metrics, the binary grid file format and PNG rendering.

Grid file layout (all integers little-endian)::

    b"EGRD"  | version (1 byte) | header length (uint32) | UTF-8 JSON header | payload

The header is ``{"dims": [...], "dtype": "f64le", "name": ..., "seed": ...}``
and the payload holds ``prod(dims)`` row-major little-endian float64 values.
"""
import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from PIL import Image, PngImagePlugin

from .exceptions import FormatError, InvalidArgumentError

__all__ = [
    "MetricReport",
    "relative_l2",
    "psnr",
    "data_misfit",
    "metric_report",
    "GridFile",
    "write_grid",
    "read_grid",
    "pixel_map",
    "render_png",
]

MAGIC = b"EGRD"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def _pair(estimate, truth):
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def relative_l2(estimate, truth):
    """||estimate - truth|| / ||truth||."""
    a, b = _pair(estimate, truth)
    norm = float(np.linalg.norm(b))
    if norm == 0:
        raise InvalidArgumentError("relative error is undefined for an all-zero truth")
    return float(np.linalg.norm(a - b)) / norm


def psnr(estimate, truth, peak=None):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs.

    ``peak`` defaults to the data range ``max - min`` of ``truth``, or to
    ``max |truth|`` when the range is zero (e.g. a single value).
    """
    a, b = _pair(estimate, truth)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    if peak is None:
        peak = float(b.max() - b.min()) or float(np.abs(b).max())
    if not peak > 0:
        raise InvalidArgumentError("peak must be positive")
    return 10.0 * math.log10(peak**2 / mse)


def data_misfit(estimate, obs):
    """``||y - G(estimate)||_Gamma`` through a counted forward evaluation."""
    return float(obs.misfit(obs(np.ravel(estimate)))[0])


@dataclass
class MetricReport:
    relative_l2: float
    psnr_db: float
    residual_gamma: Optional[float] = None

    @property
    def psnr_infinite(self):
        return math.isinf(self.psnr_db)

    def to_dict(self):
        out = asdict(self)
        if self.psnr_infinite:
            out["psnr_db"] = "inf"
        out["psnr_infinite"] = self.psnr_infinite
        return out


def metric_report(estimate, truth, obs=None, peak=None):
    residual = None if obs is None else data_misfit(estimate, obs)
    return MetricReport(relative_l2(estimate, truth), psnr(estimate, truth, peak), residual)


@dataclass
class GridFile:
    data: np.ndarray
    name: str = ""
    seed: Optional[int] = None

    @property
    def dims(self):
        return list(self.data.shape)

    def header(self):
        return {"dims": self.dims, "dtype": "f64le", "name": self.name, "seed": self.seed}

    def to_bytes(self):
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        payload = np.ascontiguousarray(self.data, dtype="<f8").tobytes()
        return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload

    @classmethod
    def from_bytes(cls, raw):
        raw = bytes(raw)
        if len(raw) < _PREFIX.size:
            raise FormatError("file shorter than the fixed prefix", offset=len(raw))
        magic, version, head_len = _PREFIX.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", offset=0)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", offset=4)
        start = _PREFIX.size
        if len(raw) < start + head_len:
            raise FormatError("truncated header", offset=len(raw))
        try:
            head = json.loads(raw[start:start + head_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable header: {exc}", offset=start) from None
        if not isinstance(head, dict) or set(head) != {"dims", "dtype", "name", "seed"}:
            raise FormatError("header keys must be dims, dtype, name, seed", offset=start)
        if head["dtype"] != "f64le":
            raise FormatError(f"unsupported dtype {head['dtype']!r}", offset=start)
        dims = head["dims"]
        if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 0 for d in dims):
            raise FormatError("dims must be a list of non-negative integers", offset=start)
        body = start + head_len
        expected = math.prod(dims) * 8
        if len(raw) - body != expected:
            raise FormatError(
                f"payload holds {len(raw) - body} bytes, dims require {expected}",
                offset=body + min(expected, len(raw) - body),
            )
        data = np.frombuffer(raw, dtype="<f8", offset=body).reshape(dims).astype(float)
        return cls(data, head["name"], head["seed"])


def write_grid(path, data, name="", seed=None):
    grid = data if isinstance(data, GridFile) else GridFile(np.asarray(data, dtype=float), name, seed)
    with open(path, "wb") as fh:
        fh.write(grid.to_bytes())
    return grid


def read_grid(path):
    with open(path, "rb") as fh:
        return GridFile.from_bytes(fh.read())


def _diverging_palette():
    # blue -> white -> red, 256 entries
    s = np.arange(256) / 255.0
    lo = np.clip(2 * s, 0, 1)
    hi = np.clip(2 - 2 * s, 0, 1)
    rgb = np.stack([lo, np.minimum(lo, hi), hi], axis=1)
    return np.round(rgb * 255).astype(np.uint8)


def pixel_map(field, colormap="grayscale", percentile=99.0, clip=None):
    """Map values to 8-bit indices: ``floor(256 (v - lo) / (hi - lo))`` clipped to 0..255.

    ``clip=(lo, hi)`` fixes the window. Otherwise ``diverging`` uses
    ``[-c, c]`` with ``c`` the ``percentile`` of ``|field|`` and
    ``grayscale`` uses the ``100 - percentile`` and ``percentile`` values.
    A degenerate window maps every pixel to 128. Returns (indices, lo, hi).
    """
    v = np.asarray(field, dtype=float)
    if v.ndim != 2:
        raise InvalidArgumentError("render needs a 2-D field")
    if colormap not in ("grayscale", "diverging"):
        raise InvalidArgumentError(f"unknown colormap {colormap!r}")
    if clip is not None:
        lo, hi = (float(c) for c in clip)
    elif colormap == "diverging":
        c = float(np.percentile(np.abs(v), percentile))
        lo, hi = -c, c
    else:
        lo = float(np.percentile(v, 100 - percentile))
        hi = float(np.percentile(v, percentile))
    if not hi > lo:
        return np.full(v.shape, 128, dtype=np.uint8), lo, hi
    idx = np.floor(256.0 * (v - lo) / (hi - lo))
    return np.clip(idx, 0, 255).astype(np.uint8), lo, hi


def render_png(field, path, colormap="grayscale", percentile=99.0, clip=None):
    """Write an 8-bit PNG (grayscale or paletted); the map is stored in a tEXt chunk."""
    idx, lo, hi = pixel_map(field, colormap, percentile, clip)
    if colormap == "diverging":
        image = Image.frombytes("P", (idx.shape[1], idx.shape[0]), idx.tobytes())
        image.putpalette(_diverging_palette().ravel().tolist())
    else:
        image = Image.fromarray(idx)
    info = PngImagePlugin.PngInfo()
    info.add_text(
        "Comment",
        f"index = clip(floor(256 * (v - lo) / (hi - lo)), 0, 255); lo={lo!r} hi={hi!r} "
        f"colormap={colormap}; degenerate window -> 128",
    )
    image.save(path, format="PNG", pnginfo=info)
    return lo, hi
