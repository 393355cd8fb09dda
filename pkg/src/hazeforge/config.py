"""INI-style run configuration.

Sections and keys (all optional; unset keys keep their defaults)::

    [mapper]  variant, base_channels, depth_levels, seed
    [train]   lr_init, lr_final, epochs, batch_size, crop, lambda_perc,
              charbonnier_eps, seed, use_drm, use_dhr
    [data]    root, layout, list_file
    [depth]   kind, source
    [policy]  weight_scale, weight_reverse, weight_interpolate, weight_compose,
              alpha_min, alpha_max, gamma_min, gamma_max, eta_min, eta_max,
              fill_min, fill_max, haze_free_threshold
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .core import STRATEGIES
from .mappers import PRESETS, DepthProvider, MapperConfig
from .resampler import SamplingPolicy
from .training import TrainConfig


@dataclass
class RunConfig:
    mapper: MapperConfig = field(default_factory=MapperConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: SamplingPolicy = field(default_factory=SamplingPolicy)
    depth: DepthProvider = field(default_factory=DepthProvider)
    data_root: Optional[str] = None
    layout: str = "paired-dirs"
    list_file: Optional[str] = None


def _typed(cp: configparser.ConfigParser, section: str, cls) -> dict:
    if not cp.has_section(section):
        return {}
    out = {}
    types = {f.name: f.type for f in fields(cls)}
    for key in cp[section]:
        if key not in types:
            raise ValueError(f"[{section}] unknown key {key!r}")
        kind = types[key]
        if kind in ("bool", bool):
            out[key] = cp.getboolean(section, key)
        elif kind in ("int", int):
            out[key] = cp.getint(section, key)
        elif kind in ("float", float):
            out[key] = cp.getfloat(section, key)
        else:
            out[key] = cp.get(section, key)
    return out


def _policy(cp) -> SamplingPolicy:
    pol = SamplingPolicy()
    if not cp.has_section("policy"):
        return pol
    sec = cp["policy"]
    weights = dict(pol.weights)
    for s in STRATEGIES:
        if f"weight_{s}" in sec:
            weights[s] = sec.getfloat(f"weight_{s}")
    pol.weights = weights
    for name in ("alpha", "gamma", "eta", "fill"):
        attr = f"{name}_range"
        lo, hi = getattr(pol, attr)
        setattr(pol, attr, (sec.getfloat(f"{name}_min", lo), sec.getfloat(f"{name}_max", hi)))
    pol.haze_free_threshold = sec.getfloat("haze_free_threshold", pol.haze_free_threshold)
    known = {f"weight_{s}" for s in STRATEGIES} | {f"{n}_{e}" for n in ("alpha", "gamma", "eta", "fill")
                                                    for e in ("min", "max")} | {"haze_free_threshold"}
    unknown = set(sec) - known
    if unknown:
        raise ValueError(f"[policy] unknown keys {sorted(unknown)}")
    return pol.validate()


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    mapper_kw = _typed(cp, "mapper", MapperConfig)
    variant = mapper_kw.get("variant", "toy")
    mapper = MapperConfig(**{"variant": variant, **PRESETS[variant], **mapper_kw})
    train = TrainConfig(**_typed(cp, "train", TrainConfig)).validate(mapper)
    depth = DepthProvider(**_typed(cp, "depth", DepthProvider))
    data = dict(cp["data"]) if cp.has_section("data") else {}
    root = data.get("root")
    if root is not None and not Path(root).is_absolute():
        root = str(Path(path).parent / root)
    return RunConfig(mapper=mapper, train=train, policy=_policy(cp), depth=depth, data_root=root,
                     layout=data.get("layout", "paired-dirs"), list_file=data.get("list_file"))
