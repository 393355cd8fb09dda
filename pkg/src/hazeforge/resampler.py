"""Edits in haze-parameter space: rescale density, reverse or blend airlight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .core import STRATEGIES, AugmentationSpec, ShapeMismatchError

HAZE_FREE_THRESHOLD = 0.9
DEFAULT_FILL_RANGE = (0.6, 1.25)


def scale_density(beta, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    beta = np.asarray(beta, dtype=np.float64)
    return beta * alpha


def reverse_atmospheric(A, beta, t, fill_range=DEFAULT_FILL_RANGE,
                        haze_free_threshold: float = HAZE_FREE_THRESHOLD, rng_seed: int = 0):
    """Swap hazy and haze-free regions by mirroring the airlight map.

    Pixels that were haze-free (t above the threshold on every channel) had
    no density worth keeping, so they get a fresh density drawn uniformly
    from ``fill_range``, per pixel and channel.  Returns ``(A', beta')``.
    """
    lo, hi = fill_range
    if lo > hi:
        raise ValueError(f"empty fill range {fill_range}")
    if lo <= 0:
        raise ValueError(f"fill range must be positive, got {fill_range}")
    if not 0 < haze_free_threshold < 1:
        raise ValueError("haze_free_threshold must lie in (0, 1)")
    A = np.asarray(A, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if beta.shape != t.shape or A.shape[:2] != beta.shape[:2]:
        raise ShapeMismatchError(f"A {A.shape}, beta {beta.shape}, t {t.shape} disagree")

    haze_free = np.all(t > haze_free_threshold, axis=-1, keepdims=True)
    fill = _rng.uniform(rng_seed, beta.shape, lo, hi)
    return 1.0 - A, np.where(haze_free, fill, beta)


def interpolate_atmospheric(A, gamma: float, eta: float) -> np.ndarray:
    if gamma < 0 or eta < 0:
        raise ValueError(f"weights must be non-negative, got gamma={gamma}, eta={eta}")
    A = np.asarray(A, dtype=np.float64)
    return np.minimum(gamma * A + eta * (1.0 - A), 1.0)


@dataclass
class SamplingPolicy:
    weights: dict = field(default_factory=lambda: {
        "scale": 0.4, "reverse": 0.2, "interpolate": 0.2, "compose": 0.2})
    alpha_range: tuple = (0.5, 2.0)
    gamma_range: tuple = (0.0, 1.0)
    eta_range: tuple = (0.0, 1.0)
    fill_range: tuple = DEFAULT_FILL_RANGE
    haze_free_threshold: float = HAZE_FREE_THRESHOLD

    def validate(self) -> "SamplingPolicy":
        unknown = set(self.weights) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies in policy: {sorted(unknown)}")
        w = [self.weights.get(s, 0.0) for s in STRATEGIES]
        if min(w) < 0 or sum(w) <= 0:
            raise ValueError(f"strategy weights must be non-negative with positive sum: {self.weights}")
        for name, (lo, hi), floor in (("alpha", self.alpha_range, 0.0), ("gamma", self.gamma_range, 0.0),
                                      ("eta", self.eta_range, 0.0), ("fill", self.fill_range, 0.0)):
            if lo > hi or lo < floor or (name in ("alpha", "fill") and lo <= 0):
                raise ValueError(f"bad {name} range {(lo, hi)}")
        if not 0 < self.haze_free_threshold < 1:
            raise ValueError("haze_free_threshold must lie in (0, 1)")
        return self


def sample_spec(policy: SamplingPolicy, rng_seed: int) -> AugmentationSpec:
    """Draw one augmentation recipe.

    A fixed five draws are consumed (strategy, alpha, gamma, eta, fill seed),
    so the stream layout never depends on which strategy came up.  Values a
    strategy does not use are reset to their identity (alpha=1, gamma=1,
    eta=0).
    """
    policy.validate()
    g = _rng.CounterRNG(rng_seed)
    strategy = STRATEGIES[g.choice([policy.weights.get(s, 0.0) for s in STRATEGIES])]
    alpha = g.uniform(*policy.alpha_range)
    gamma = g.uniform(*policy.gamma_range)
    eta = g.uniform(*policy.eta_range)
    fill_seed = int(_rng.splitmix64(g.seed, [g.counter])[0])

    if strategy not in ("scale", "compose"):
        alpha = 1.0
    if strategy not in ("interpolate", "compose"):
        gamma, eta = 1.0, 0.0
    return AugmentationSpec(alpha=alpha, gamma=gamma, eta=eta, fill_range=tuple(policy.fill_range),
                            strategy=strategy, seed=fill_seed)


def apply_spec(spec: AugmentationSpec, beta, A, t,
               haze_free_threshold: float = HAZE_FREE_THRESHOLD):
    """Resample ``(beta, A)`` according to ``spec``; returns ``(beta', A')``."""
    beta = np.asarray(beta, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if spec.strategy == "scale":
        return scale_density(beta, spec.alpha), A.copy()
    if spec.strategy == "reverse":
        A_new, beta_new = reverse_atmospheric(A, beta, t, spec.fill_range, haze_free_threshold, spec.seed)
        return beta_new, A_new
    if spec.strategy == "interpolate":
        return beta.copy(), interpolate_atmospheric(A, spec.gamma, spec.eta)
    # compose
    return scale_density(beta, spec.alpha), interpolate_atmospheric(A, spec.gamma, spec.eta)
