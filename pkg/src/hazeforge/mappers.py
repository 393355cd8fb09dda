"""Learned mappers and the parameter-to-haze composition.

* ``HPM``  hazy image -> (density map, airlight map): shared encoder, two decoders
* ``DRM``  provider depth + clean image -> refined depth (residual, one decoder)
* ``DHR``  initial render + clean image -> refined hazy image (residual, one decoder)

All three are small U-shaped, fully convolutional networks.  Output heads make
the value ranges structural: softplus for density, sigmoid for airlight,
clamped residuals for depth and the refined image.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import core
from .scattering import compute_transmission, render_haze

VARIANT_BUDGETS = {"toy": 200_000, "paper": 3_500_000}
PRESETS = {
    "toy": {"base_channels": 8, "depth_levels": 2},
    "paper": {"base_channels": 21, "depth_levels": 3},
}


@dataclass
class MapperConfig:
    base_channels: int = 8
    depth_levels: int = 2
    variant: str = "toy"
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1 or self.depth_levels < 1:
            raise ValueError("base_channels and depth_levels must be positive")
        if self.variant not in VARIANT_BUDGETS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def preset(cls, variant: str, seed: int = 0) -> "MapperConfig":
        return cls(variant=variant, seed=seed, **PRESETS[variant])

    @property
    def multiple(self) -> int:
        return 2 ** self.depth_levels


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="replicate")


def _act():
    return nn.LeakyReLU(0.1, inplace=True)


class Encoder(nn.Module):
    def __init__(self, in_channels: int, base: int, levels: int):
        super().__init__()
        self.stem = nn.Sequential(_conv(in_channels, base), _act())
        self.down = nn.ModuleList()
        c = base
        for _ in range(levels):
            self.down.append(nn.Sequential(_conv(c, 2 * c, stride=2), _act(), _conv(2 * c, 2 * c), _act()))
            c *= 2

    def forward(self, x):
        feats = [self.stem(x)]
        for stage in self.down:
            feats.append(stage(feats[-1]))
        return feats


class Decoder(nn.Module):
    """Mirrors :class:`Encoder` with nearest upsampling and skip concatenation."""

    def __init__(self, base: int, levels: int, out_channels: int):
        super().__init__()
        self.up = nn.ModuleList()
        for i in reversed(range(levels)):
            c = base * 2**i
            self.up.append(nn.Sequential(_conv(3 * c, c), _act(), _conv(c, c), _act()))
        self.head = nn.Conv2d(base, out_channels, 1)

    def forward(self, feats):
        x = feats[-1]
        for stage, skip in zip(self.up, reversed(feats[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = stage(torch.cat([x, skip], dim=1))
        return self.head(x)


def _pad_to(x, multiple):
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x, (h, w)


class HPM(nn.Module):
    def __init__(self, cfg: MapperConfig):
        super().__init__()
        self.multiple = cfg.multiple
        self.encoder = Encoder(3, cfg.base_channels, cfg.depth_levels)
        self.density_decoder = Decoder(cfg.base_channels, cfg.depth_levels, 3)
        self.airlight_decoder = Decoder(cfg.base_channels, cfg.depth_levels, 1)

    def forward(self, hazy):
        x, (h, w) = _pad_to(hazy, self.multiple)
        feats = self.encoder(x)
        beta = F.softplus(self.density_decoder(feats))[..., :h, :w]
        A = torch.sigmoid(self.airlight_decoder(feats))[..., :h, :w]
        return beta, A


class _ResidualRefiner(nn.Module):
    """Encoder + single decoder whose zero-initialised head adds a correction."""

    def __init__(self, cfg: MapperConfig, in_channels: int, out_channels: int):
        super().__init__()
        self.multiple = cfg.multiple
        self.encoder = Encoder(in_channels, cfg.base_channels, cfg.depth_levels)
        self.decoder = Decoder(cfg.base_channels, cfg.depth_levels, out_channels)
        nn.init.zeros_(self.decoder.head.weight)
        nn.init.zeros_(self.decoder.head.bias)

    def _refine(self, base, guide):
        x, (h, w) = _pad_to(torch.cat([base, guide], dim=1), self.multiple)
        delta = self.decoder(self.encoder(x))[..., :h, :w]
        return torch.clamp(base + delta, 0.0, 1.0)


class DRM(_ResidualRefiner):
    def __init__(self, cfg: MapperConfig):
        super().__init__(cfg, 4, 1)

    def forward(self, depth, clean):
        return self._refine(depth, clean)


class DHR(_ResidualRefiner):
    def __init__(self, cfg: MapperConfig):
        super().__init__(cfg, 6, 3)

    def forward(self, initial, clean):
        return self._refine(initial, clean)


def count_parameters(*modules: nn.Module) -> int:
    return sum(p.numel() for m in modules for p in m.parameters())


class PANet(nn.Module):
    """HPM + DRM + DHR wired around the physical render.

    ``use_drm`` / ``use_dhr`` switch the learned depth and haze refinement
    off; the corresponding stage then passes its input through unchanged.
    """

    def __init__(self, cfg: MapperConfig, use_drm: bool = True, use_dhr: bool = True):
        super().__init__()
        self.cfg = cfg
        self.use_drm = use_drm
        self.use_dhr = use_dhr
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.hpm = HPM(cfg)
            self.drm = DRM(cfg)
            self.dhr = DHR(cfg)
        n = count_parameters(self)
        budget = VARIANT_BUDGETS[cfg.variant]
        if n > budget:
            raise ValueError(f"{cfg.variant} mapper set has {n} parameters, budget is {budget}")
        self.n_parameters = n

    def forward(self, hazy, clean, raw_depth):
        beta, A = self.hpm(hazy)
        depth = self.drm(raw_depth, clean) if self.use_drm else raw_depth
        t = torch.exp(-beta * depth)
        o_ini = clean * t + A * (1 - t)
        o_final = self.dhr(o_ini, clean) if self.use_dhr else o_ini
        return {"beta": beta, "A": A, "depth": depth, "t": t, "o_ini": o_ini, "o_final": o_final}


# -- numpy-facing operations ------------------------------------------------

def _to_tensor(x) -> torch.Tensor:
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t[0].detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)


def _check_same_hw(a, b, what):
    if np.shape(a)[:2] != np.shape(b)[:2]:
        raise core.ShapeMismatchError(f"{what}: {np.shape(a)[:2]} vs {np.shape(b)[:2]}")


@torch.no_grad()
def hpm_estimate(hazy, hpm: HPM):
    """Density and airlight maps for one hazy image, as numpy arrays."""
    was_training = hpm.training
    hpm.eval()
    try:
        beta, A = hpm(_to_tensor(hazy))
    finally:
        hpm.train(was_training)
    return _to_numpy(beta), _to_numpy(A)


@torch.no_grad()
def drm_refine(raw_depth, clean, drm: Optional[DRM]):
    """Refined depth; ``drm=None`` is the no-refinement ablation."""
    _check_same_hw(raw_depth, clean, "depth vs clean")
    if drm is None:
        return np.asarray(raw_depth, dtype=np.float64).reshape(np.shape(clean)[:2] + (1,))
    return _to_numpy(drm.eval()(_to_tensor(raw_depth), _to_tensor(clean)))


@torch.no_grad()
def dhr_refine(initial, clean, dhr: DHR):
    if np.shape(initial) != np.shape(clean):
        raise core.ShapeMismatchError(f"initial {np.shape(initial)} vs clean {np.shape(clean)}")
    return _to_numpy(dhr.eval()(_to_tensor(initial), _to_tensor(clean)))


def phm_generate(clean, beta, A, depth, dhr: Optional[DHR] = None):
    """Physics render followed by optional learned refinement.

    Returns ``(initial, final)``; without a refiner ``final is initial``.
    """
    initial = render_haze(clean, compute_transmission(beta, depth), A)
    if dhr is None:
        return initial, initial
    return initial, dhr_refine(initial, clean, dhr)


# -- depth providers --------------------------------------------------------

_PLUGINS: dict = {}


def register_depth_plugin(name: str):
    def deco(fn: Callable):
        _PLUGINS[name] = fn
        return fn
    return deco


@register_depth_plugin("dark_channel")
def _dark_channel_depth(image, patch: int = 15):
    """Depth proxy from the dark channel: hazier looks farther."""
    from scipy.ndimage import minimum_filter

    img = np.asarray(image, dtype=np.float64)
    dark = minimum_filter(img.min(axis=2), size=patch, mode="nearest")
    return -np.log(np.clip(1.0 - 0.95 * dark, 1e-3, 1.0))[..., None]


def vertical_ramp(height: int, width: int) -> np.ndarray:
    col = np.linspace(1.0, 0.0, height) if height > 1 else np.ones(1)
    return np.repeat(col[:, None], width, axis=1)[..., None]


@dataclass
class DepthProvider:
    kind: str = "ramp"
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("file", "ramp", "plugin"):
            raise ValueError(f"unknown depth provider kind {self.kind!r}")
        if self.kind == "plugin" and self.source not in _PLUGINS:
            raise ValueError(f"unknown depth plugin {self.source!r}; known: {sorted(_PLUGINS)}")

    def raw(self, clean, pair_id: Optional[str] = None, pair_depth=None) -> np.ndarray:
        h, w = np.shape(clean)[:2]
        if self.kind == "ramp":
            out = vertical_ramp(h, w)
        elif self.kind == "plugin":
            out = np.asarray(_PLUGINS[self.source](clean), dtype=np.float64)
        elif pair_depth is not None:
            out = np.asarray(pair_depth, dtype=np.float64)
        else:
            out = self._load(pair_id)
        out = out.reshape(h, w, 1) if out.ndim == 2 else out
        if out.shape != (h, w, 1) or not np.isfinite(out).all():
            raise core.ShapeMismatchError(f"depth provider produced {out.shape} for a {h}x{w} image")
        return out

    def depth(self, clean, pair_id=None, pair_depth=None) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.asarray(core.normalize_depth(self.raw(clean, pair_id, pair_depth)))

    def _load(self, pair_id):
        if self.source is None or pair_id is None:
            raise core.HazeForgeError("file depth provider needs a source directory and pair id")
        root = Path(self.source)
        for ext, loader in ((".hfpm", core.load_param_map), (".png", core.load_gray)):
            p = root / f"{pair_id}{ext}"
            if p.exists():
                return loader(p)
        raise core.HazeForgeError(f"no depth file for {pair_id!r} under {root}")

    def to_dict(self):
        return asdict(self)
