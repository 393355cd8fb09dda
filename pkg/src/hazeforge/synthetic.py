"""Physics-generated hazy/clean pairs with known parameters, for smoke tests and recovery checks."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import zoom

from .core import HazePair, Image
from .mappers import vertical_ramp
from .scattering import compute_transmission, render_haze


def textured_clean(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth random colour field plus fine noise, kept away from pure black/white."""
    coarse = rng.uniform(0.05, 0.6, size=(size // 8, size // 8, 3))
    img = zoom(coarse, (size / coarse.shape[0], size / coarse.shape[1], 1), order=1)
    img += rng.uniform(-0.05, 0.05, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def homogeneous_pairs(n: int, size: int = 64, beta: float = 0.9, airlight: float = 0.8, seed: int = 0):
    """``n`` pairs hazed with constant density and airlight over a vertical ramp depth."""
    rng = np.random.default_rng(seed)
    depth = vertical_ramp(size, size)
    beta_map = np.full((size, size, 3), beta)
    A = np.full((size, size, 1), airlight)
    t = compute_transmission(beta_map, depth)
    pairs = []
    for i in range(n):
        clean = textured_clean(size, rng)
        hazy = render_haze(clean, t, A)
        pairs.append(HazePair(hazy=Image(hazy), clean=Image(clean), id=f"syn{i:03d}"))
    return pairs
