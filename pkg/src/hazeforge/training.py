"""Losses, learning-rate schedule and the cyclic hazy -> parameters -> hazy loop."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import pickle
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import core
from .mappers import PANet, DepthProvider, MapperConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr_init: float = 5e-5
    lr_final: float = 1e-7
    epochs: int = 270
    batch_size: int = 2
    crop: int = 256
    lambda_perc: float = 1e-6
    charbonnier_eps: float = 1e-3
    seed: int = 0
    use_drm: bool = True
    use_dhr: bool = True

    def validate(self, mcfg: Optional[MapperConfig] = None) -> "TrainConfig":
        if not self.lr_init > self.lr_final > 0:
            raise ValueError(f"need lr_init > lr_final > 0, got {self.lr_init}, {self.lr_final}")
        if self.epochs < 1 or self.batch_size < 1 or self.crop < 1:
            raise ValueError("epochs, batch_size and crop must be positive")
        if self.charbonnier_eps <= 0 or self.lambda_perc < 0:
            raise ValueError("charbonnier_eps must be > 0 and lambda_perc >= 0")
        if mcfg is not None and self.crop % mcfg.multiple:
            raise ValueError(f"crop {self.crop} not divisible by {mcfg.multiple}")
        return self


# -- losses -------------------------------------------------------------------

def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise core.ShapeMismatchError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def charbonnier(a, b, eps: float = 1e-3):
    """Mean of ``sqrt((a - b)**2 + eps**2)``; numpy in, float out, tensors stay tensors."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_shapes(a, b)
    if isinstance(a, torch.Tensor):
        return torch.sqrt((a - b) ** 2 + eps**2).mean()
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(np.sqrt(d * d + eps * eps)))


class FeaturePyramid(nn.Module):
    """Frozen, randomly initialised 3-level conv pyramid used for the perceptual term."""

    def __init__(self, seed: int = 1234, widths: Sequence[int] = (8, 16, 32)):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            layers, cin = [], 3
            for i, w in enumerate(widths):
                layers.append(nn.Conv2d(cin, w, 3, stride=1 if i == 0 else 2, padding=1))
                cin = w
        self.levels = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        for conv in self.levels:
            x = F.relu(conv(x))
            feats.append(x)
        return feats


def _nchw(x, dtype=torch.float64):
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def perceptual(a, b, extractor: nn.Module):
    """Sum over pyramid levels of the mean squared feature difference."""
    _check_shapes(a, b)
    numpy_in = not isinstance(a, torch.Tensor)
    ta, tb = _nchw(a), _nchw(b)
    ext = extractor.to(ta.dtype)
    loss = sum(F.mse_loss(fa, fb) for fa, fb in zip(ext(ta), ext(tb)))
    return float(loss) if numpy_in else loss


def loss_terms(o_ini, o_final, hazy_gt, cfg: TrainConfig, extractor):
    char_ini = charbonnier(o_ini, hazy_gt, cfg.charbonnier_eps)
    char_final = charbonnier(o_final, hazy_gt, cfg.charbonnier_eps)
    total = char_ini + char_final
    if cfg.lambda_perc:
        total = total + cfg.lambda_perc * (perceptual(o_ini, hazy_gt, extractor)
                                           + perceptual(o_final, hazy_gt, extractor))
    return total, char_ini, char_final


def total_loss(o_ini, o_final, hazy_gt, cfg: TrainConfig, extractor):
    return loss_terms(o_ini, o_final, hazy_gt, cfg, extractor)[0]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_init`` at epoch 0 to ``lr_final`` at ``epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch == 0:
        return cfg.lr_init
    if epoch == cfg.epochs:
        return cfg.lr_final
    return cfg.lr_final + (cfg.lr_init - cfg.lr_final) * (1 + math.cos(math.pi * epoch / cfg.epochs)) / 2


# -- geometric augmentation ---------------------------------------------------

def augment_geometry(arrays, k_rot: int, flip: bool):
    """Rotate by ``k_rot`` quarter turns then optionally flip left-right, identically for each array."""
    out = []
    for a in arrays:
        a = np.rot90(a, k_rot, axes=(0, 1))
        if flip:
            a = a[:, ::-1]
        out.append(np.ascontiguousarray(a))
    return out


def random_crop(arrays, size: int, rng: np.random.Generator):
    h, w = arrays[0].shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return [a[y:y + size, x:x + size] for a in arrays]


def _sample(pair_arrays, cfg: TrainConfig, rng):
    arrays = random_crop(pair_arrays, cfg.crop, rng)
    return augment_geometry(arrays, int(rng.integers(0, 4)), bool(rng.integers(0, 2)))


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: PANet, train_cfg: TrainConfig, epoch: int,
                    optimizer=None, rng_state=None, history=()):
    ckpt = {
        "version": CHECKPOINT_VERSION,
        "mapper_config": asdict(model.cfg),
        "train_config": asdict(train_cfg),
        "ablation": {"use_drm": model.use_drm, "use_dhr": model.use_dhr},
        "n_parameters": model.n_parameters,
        "weights": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "rng_state": json.dumps(rng_state) if rng_state is not None else None,
        "history": [dict(h) for h in history],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(ckpt, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns ``(model, ckpt_dict)``."""
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except (pickle.UnpicklingError, RuntimeError, EOFError) as err:
        raise core.HazeForgeError(f"{path}: not a readable checkpoint: {err}") from None
    if not isinstance(ckpt, dict) or ckpt.get("version") != CHECKPOINT_VERSION:
        raise core.HazeForgeError(f"{path}: unsupported checkpoint version {ckpt.get('version')!r}")
    mcfg = MapperConfig(**ckpt["mapper_config"])
    model = PANet(mcfg, **ckpt["ablation"])
    try:
        model.load_state_dict(ckpt["weights"])
    except RuntimeError as err:
        raise core.HazeForgeError(f"{path}: weights do not match mapper config: {err}") from None
    model.eval()
    return model, ckpt


def checkpoint_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def train_config_from(ckpt) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in ckpt["train_config"].items() if k in known})


# -- training loop ------------------------------------------------------------

def train_panet(dataset, cfg: TrainConfig, mcfg: MapperConfig, depth_provider: DepthProvider,
                out_dir=None, extractor: Optional[nn.Module] = None):
    """Train HPM, DRM and DHR jointly on hazy/clean pairs.

    Returns the final checkpoint dict (plus ``"model"``).  When ``out_dir`` is
    given, ``checkpoint.pt`` is rewritten after every epoch and ``train_log.csv``
    gets one line per epoch.
    """
    if not dataset:
        raise ValueError("empty dataset")
    cfg.validate(mcfg)
    for pair in dataset:
        h, w = pair.hazy.shape[:2]
        if cfg.crop > min(h, w):
            raise ValueError(f"crop {cfg.crop} larger than pair {pair.id!r} ({h}x{w})")

    rng = np.random.default_rng(cfg.seed)
    model = PANet(mcfg, use_drm=cfg.use_drm, use_dhr=cfg.use_dhr)
    model.train()
    extractor = extractor if extractor is not None else FeaturePyramid()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=(0.9, 0.999), eps=1e-8)

    arrays = [
        (np.asarray(p.hazy, dtype=np.float32), np.asarray(p.clean, dtype=np.float32),
         depth_provider.depth(p.clean, p.id, p.depth).astype(np.float32))
        for p in dataset
    ]

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.csv", "w")
        log_fh.write("epoch,lr,total,char_ini,char_final\n")

    history = []
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(arrays))
            sums = np.zeros(3)
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [_sample(arrays[i], cfg, rng) for i in order[start:start + cfg.batch_size]]
                hazy, clean, depth = (torch.from_numpy(np.stack([b[j] for b in batch]).transpose(0, 3, 1, 2).copy())
                                      for j in range(3))
                out = model(hazy, clean, depth)
                total, c_ini, c_final = loss_terms(out["o_ini"], out["o_final"], hazy, cfg, extractor)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                sums += [total.item(), c_ini.item(), c_final.item()]
                n_batches += 1
            mean = [float(v) for v in sums / n_batches]
            row = {"epoch": epoch, "lr": lr, "total": mean[0], "char_ini": mean[1], "char_final": mean[2]}
            history.append(row)
            log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, mean[0])
            if log_fh is not None:
                log_fh.write(f"{epoch},{lr:.10g},{mean[0]:.10g},{mean[1]:.10g},{mean[2]:.10g}\n")
                log_fh.flush()
                save_checkpoint(out_dir / "checkpoint.pt", model, cfg, epoch + 1, optimizer,
                                rng.bit_generator.state, history)
    finally:
        if log_fh is not None:
            log_fh.close()

    model.eval()
    return {
        "version": CHECKPOINT_VERSION,
        "model": model,
        "mapper_config": asdict(mcfg),
        "train_config": asdict(cfg),
        "ablation": {"use_drm": cfg.use_drm, "use_dhr": cfg.use_dhr},
        "epoch": cfg.epochs,
        "history": history,
        "path": str(out_dir / "checkpoint.pt") if out_dir is not None else None,
    }
