"""Atmospheric scattering model: transmission and hazy-image compositing.

Functions accept numpy arrays, typed maps from :mod:`hazeforge.core`, or torch
tensors.  Tensors stay tensors so the same code sits inside the training
graph; everything else comes back as a float64 numpy array.
"""

from __future__ import annotations

import numpy as np

from .core import ShapeMismatchError

EPS_T = 1e-4
EPS_DIV = 1e-3


def _is_tensor(x) -> bool:
    return type(x).__module__.startswith("torch")


def _arr(x):
    if _is_tensor(x):
        return x
    arr = np.asarray(x, dtype=np.float64)
    return arr[..., None] if arr.ndim == 2 else arr


def _exp(x):
    return x.exp() if _is_tensor(x) else np.exp(x)


def _check_spatial(*named):
    ref_name, ref = named[0]
    for name, x in named[1:]:
        if tuple(x.shape[:-1]) != tuple(ref.shape[:-1]):
            raise ShapeMismatchError(
                f"{name} spatial shape {tuple(x.shape[:-1])} != {ref_name} {tuple(ref.shape[:-1])}"
            )


def _check_channels(name, x, allowed):
    if x.shape[-1] not in allowed:
        raise ShapeMismatchError(f"{name} has {x.shape[-1]} channels, expected one of {allowed}")


def compute_transmission(beta, depth):
    """t = exp(-beta * d), depth broadcast over beta's colour channels."""
    beta, depth = _arr(beta), _arr(depth)
    _check_spatial(("beta", beta), ("depth", depth))
    _check_channels("depth", depth, (1,))
    return _exp(-beta * depth)


def render_haze(clean, t, A):
    """Composite ``clean * t + A * (1 - t)`` per pixel and channel."""
    clean, t, A = _arr(clean), _arr(t), _arr(A)
    _check_spatial(("clean", clean), ("transmission", t), ("atmospheric light", A))
    _check_channels("transmission", t, (1, 3))
    _check_channels("atmospheric light", A, (1, 3))
    return clean * t + A * (1 - t)


def invert_transmission(hazy, clean, A, epsilon_div: float = EPS_DIV, epsilon_t: float = EPS_T):
    """Solve the compositing equation for t given hazy, clean and airlight.

    Returns ``(t, valid)``.  Pixels where ``|clean - A| < epsilon_div`` carry no
    transmission information; they get t = 1 and ``valid`` False.
    """
    hazy, clean, A = (np.asarray(_arr(x), dtype=np.float64) for x in (hazy, clean, A))
    _check_spatial(("hazy", hazy), ("clean", clean), ("atmospheric light", A))
    if hazy.shape != clean.shape:
        raise ShapeMismatchError(f"hazy {hazy.shape} != clean {clean.shape}")
    denom = clean - A
    valid = np.abs(denom) >= epsilon_div
    safe = np.where(valid, denom, 1.0)
    t = np.where(valid, (hazy - A) / safe, 1.0)
    return np.clip(t, epsilon_t, 1.0), valid
