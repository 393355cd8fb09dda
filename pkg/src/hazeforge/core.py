"""Data model shared by every stage: images, parameter maps and dataset pairs.

All maps are float64 numpy arrays laid out ``H x W x C`` with values already
scaled to [0, 1] (density maps excepted, which are only non-negative).  Typed
wrappers validate on construction and freeze their buffer, so they can be
handed to any number of workers.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image as PILImage

PathLike = Union[str, Path]

HFPM_MAGIC = b"HFPM"
_HFPM_HEADER = struct.Struct("<4sBBHII")


class HazeForgeError(Exception):
    """Base class for errors raised by this package."""


class ShapeMismatchError(HazeForgeError, ValueError):
    pass


class OutOfRangeError(HazeForgeError, ValueError):
    """A map holds a non-finite value or one outside its allowed range."""

    def __init__(self, name: str, index: tuple, value: float, bounds: str):
        self.name = name
        self.index = index
        self.value = value
        super().__init__(f"{name}: value {value!r} at index {index} outside {bounds}")


def _as_float_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def _check_range(name: str, arr: np.ndarray, lo: float, hi: float, lo_open: bool = False) -> None:
    bad = ~np.isfinite(arr)
    bad |= (arr <= lo) if lo_open else (arr < lo)
    bad |= arr > hi
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        left = "(" if lo_open else "["
        raise OutOfRangeError(name, idx, float(arr[idx]), f"{left}{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class _Map:
    data: np.ndarray
    channels = 0
    name = "map"

    def __post_init__(self):
        arr = _as_float_array(self.data)
        if arr.ndim != 3 or arr.shape[2] != self.channels:
            raise ShapeMismatchError(
                f"{self.name} must be H x W x {self.channels}, got shape {arr.shape}"
            )
        self._validate(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def _validate(self, arr: np.ndarray) -> None:
        _check_range(self.name, arr, 0.0, 1.0)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


class Image(_Map):
    channels = 3
    name = "image"


class DensityMap(_Map):
    channels = 3
    name = "density"

    def _validate(self, arr):
        _check_range(self.name, arr, 0.0, np.inf)


class AtmosphericMap(_Map):
    channels = 1
    name = "atmospheric light"


@dataclass(frozen=True, eq=False)
class DepthMap(_Map):
    # set when the raw depth was constant and could not be rescaled
    degenerate: bool = False
    channels = 1
    name = "depth"


class TransmissionMap(_Map):
    channels = 3
    name = "transmission"

    def _validate(self, arr):
        _check_range(self.name, arr, 0.0, 1.0, lo_open=True)


@dataclass(frozen=True)
class HazePair:
    hazy: Image
    clean: Image
    id: str
    depth: Optional[DepthMap] = None


STRATEGIES = ("scale", "reverse", "interpolate", "compose")


@dataclass(frozen=True)
class AugmentationSpec:
    alpha: float = 1.0
    gamma: float = 1.0
    eta: float = 0.0
    fill_range: tuple = (0.6, 1.25)
    strategy: str = "scale"
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.gamma < 0 or self.eta < 0:
            raise ValueError(f"gamma and eta must be >= 0, got {self.gamma}, {self.eta}")
        lo, hi = self.fill_range
        if lo > hi:
            raise ValueError(f"empty fill range {self.fill_range}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "fill_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "eta": self.eta,
            "fill_range": list(self.fill_range),
            "strategy": self.strategy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        return cls(
            alpha=d["alpha"],
            gamma=d["gamma"],
            eta=d["eta"],
            fill_range=tuple(d["fill_range"]),
            strategy=d["strategy"],
            seed=int(d["seed"]),
        )


def _coerce(cls, value, what: str):
    if isinstance(value, cls):
        return value
    try:
        return cls(np.asarray(value))
    except OutOfRangeError as err:
        raise OutOfRangeError(f"{what} {err.name}", err.index, err.value, "its valid range") from None


def validate_pair(pair: HazePair) -> HazePair:
    """Check both images (and depth, if any) and that their sizes agree.

    Returns the pair itself when valid.
    """
    hazy = _coerce(Image, pair.hazy, "hazy")
    clean = _coerce(Image, pair.clean, "clean")
    if hazy.shape != clean.shape:
        raise ShapeMismatchError(
            f"pair {pair.id!r}: hazy {hazy.shape[:2]} vs clean {clean.shape[:2]}"
        )
    if pair.depth is not None:
        depth = _coerce(DepthMap, pair.depth, "depth")
        if depth.shape[:2] != hazy.shape[:2]:
            raise ShapeMismatchError(
                f"pair {pair.id!r}: depth {depth.shape[:2]} vs image {hazy.shape[:2]}"
            )
    return pair


def normalize_depth(raw) -> DepthMap:
    """Min-max rescale a raw depth map to [0, 1].

    A constant map carries no ordering, so it becomes all zeros and the result
    is flagged ``degenerate``.
    """
    arr = _as_float_array(raw)
    if not np.isfinite(arr).all():
        raise OutOfRangeError("raw depth", tuple(np.argwhere(~np.isfinite(arr))[0]), np.nan, "finite values")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        warnings.warn("constant depth map; returning zeros", RuntimeWarning, stacklevel=2)
        return DepthMap(np.zeros_like(arr), degenerate=True)
    out = (arr - lo) / (hi - lo)
    # guard the endpoints against rounding
    return DepthMap(np.clip(out, 0.0, 1.0))


# -- file formats -----------------------------------------------------------

def load_image(path: PathLike) -> Image:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def to_uint8(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def save_image(path: PathLike, image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")
    return path


def load_gray(path: PathLike) -> np.ndarray:
    """Read a single-channel PNG as an H x W x 1 array in [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr[..., None]


def save_param_map(path: PathLike, data) -> Path:
    """Write a parameter map as little-endian float32 behind a 16-byte header."""
    arr = _as_float_array(np.asarray(data))
    h, w, c = arr.shape
    if not 0 < c < 256:
        raise ValueError(f"unsupported channel count {c}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HFPM_HEADER.pack(HFPM_MAGIC, c, 0, 0, h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def load_param_map(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HFPM_HEADER.size:
        raise HazeForgeError(f"{path}: truncated parameter map header")
    magic, c, _, _, h, w = _HFPM_HEADER.unpack_from(raw)
    if magic != HFPM_MAGIC:
        raise HazeForgeError(f"{path}: bad magic {magic!r}")
    expected = _HFPM_HEADER.size + 4 * h * w * c
    if len(raw) != expected:
        raise HazeForgeError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", offset=_HFPM_HEADER.size).reshape(h, w, c)
    return arr.astype(np.float64)
