"""Per-dimension rotary-embedding math.

Rotation angles, periods, critical dimensions, rescaled angles,
out-of-distribution reporting, rotation application, and attention-decay
profiling.  Everything here is a pure float64 function of its inputs.

Indexing convention
-------------------
Vectors are indexed by *cosine dimension* ``i in [0, d/2)``: one entry per
2x2 rotation block.  A "full" dimension index counts both components of a
block (``2i``, ``2i+1``), so full index = 2 x cosine index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindowError, LengthMismatchError, NonPositiveFactorError

TWO_PI = 2.0 * math.pi

# Relative tolerance for period/factor comparisons; period magnitudes reach
# ~1e5 so absolute epsilons are unsafe.
REL_EPS = 1e-9


@dataclass(frozen=True)
class RopeConfig:
    """One context-extension problem: base, head dim, trained and target lengths."""

    theta_base: float
    head_dim: int
    pretrained_len: int
    target_len: int

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be a positive even integer, got {self.head_dim}")
        if not self.theta_base > 1.0:
            raise ValueError(f"theta_base must exceed 1, got {self.theta_base}")
        if self.pretrained_len < 1:
            raise ValueError(f"pretrained_len must be >= 1, got {self.pretrained_len}")
        if self.target_len < self.pretrained_len:
            raise ValueError(
                f"target_len {self.target_len} must be >= pretrained_len {self.pretrained_len}"
            )

    @property
    def n_cosine_dims(self) -> int:
        return self.head_dim // 2

    @property
    def extension_ratio(self) -> float:
        """s = L / L_train, the lower bound for factors beyond the critical dim."""
        return self.target_len / self.pretrained_len


@dataclass(frozen=True)
class CriticalDim:
    """First dimension whose rotation period reaches the pre-trained window."""

    full_index: int
    cosine_index: int

    def __post_init__(self):
        if self.full_index != 2 * self.cosine_index:
            raise ValueError("full_index must equal 2 * cosine_index")


@dataclass(frozen=True)
class OodReport:
    """Which dimensions still rotate out of the pre-trained range after rescaling.

    ``per_dim_ratio[i]`` is the rescaled period count over the target window
    divided by the original period count over the trained window, i.e.
    ``(L * rescaled_angle_i) / (L_train * angle_i) = s / lambda_i``.
    A dimension at or beyond the critical index violates when its ratio
    exceeds 1, equivalently ``lambda_i < s``.
    """

    per_dim_ratio: np.ndarray
    violating_dims: tuple[int, ...]
    clean: bool = field(default=False)


def rotation_angles(config: RopeConfig) -> np.ndarray:
    """Per-dimension rotation angle in radians/token: theta_base^(-2i/d)."""
    i = np.arange(config.n_cosine_dims, dtype=np.float64)
    return np.asarray(config.theta_base, dtype=np.float64) ** (-2.0 * i / config.head_dim)


def periods(config: RopeConfig) -> np.ndarray:
    """Token distance for one full rotation per dimension: 2*pi / angle."""
    return TWO_PI / rotation_angles(config)


def _log_dim(config: RopeConfig, window: float) -> float:
    """(d/2) * log_theta(window / 2pi), the un-ceiled dimension boundary."""
    if window <= TWO_PI:
        raise DegenerateWindowError(
            f"window {window} must exceed 2*pi for the period logarithm to be positive"
        )
    return (config.head_dim / 2.0) * math.log(window / TWO_PI) / math.log(config.theta_base)


def theoretical_critical_dimension(config: RopeConfig) -> CriticalDim:
    """Smallest dimension whose period reaches the pre-trained length.

    Computed as ``2 * ceil((d/2) * log_theta(L_train / 2pi))`` and clamped
    into ``[2, d]``: when every period fits inside the window the ceiling
    lands past the last dimension and the top of the range is returned.
    """
    x = _log_dim(config, float(config.pretrained_len))
    cos_index = min(config.n_cosine_dims, max(1, math.ceil(x)))
    return CriticalDim(full_index=2 * cos_index, cosine_index=cos_index)


def coverage_dimension(config: RopeConfig, n_periods: int) -> int:
    """First cosine dimension whose period exceeds L_train / n_periods.

    Equivalently ``ceil((d/2) * log_theta(L_train / (2pi n)))``, clamped into
    ``[1, d/2]``.  ``coverage_dimension(cfg, 1)`` equals the theoretical
    critical cosine index.
    """
    if n_periods < 1:
        raise ValueError(f"n_periods must be >= 1, got {n_periods}")
    x = _log_dim(config, config.pretrained_len / float(n_periods))
    return min(config.n_cosine_dims, max(1, math.ceil(x)))


def _lambdas_of(factors) -> np.ndarray:
    """Accept a RescaleFactors-like object or a bare array of factors."""
    lam = getattr(factors, "lambdas", factors)
    return np.asarray(lam, dtype=np.float64)


def rescaled_angles(config: RopeConfig, factors) -> np.ndarray:
    """Angle vector after dividing each dimension by its rescaling factor."""
    lam = _lambdas_of(factors)
    if lam.shape != (config.n_cosine_dims,):
        raise LengthMismatchError(
            f"expected {config.n_cosine_dims} factors, got shape {lam.shape}"
        )
    if np.any(lam <= 0):
        raise NonPositiveFactorError("rescaling factors must be positive")
    return rotation_angles(config) / lam


def ood_report(config: RopeConfig, factors, critical_cos_index: int) -> OodReport:
    """Check the rescaled rotation range against the pre-trained range.

    A dimension ``i >= critical_cos_index`` violates when its factor falls
    below the extension ratio ``s = L / L_train`` (relative tolerance
    ``REL_EPS``); dimensions below the critical index are reported in the
    ratio vector but never counted as violations.
    """
    lam = _lambdas_of(factors)
    if lam.shape != (config.n_cosine_dims,):
        raise LengthMismatchError(
            f"expected {config.n_cosine_dims} factors, got shape {lam.shape}"
        )
    s = config.extension_ratio
    ratio = s / lam
    violating = [
        i
        for i in range(critical_cos_index, config.n_cosine_dims)
        if lam[i] < s * (1.0 - REL_EPS)
    ]
    return OodReport(
        per_dim_ratio=ratio, violating_dims=tuple(violating), clean=not violating
    )


def apply_rope(vec: np.ndarray, position: int, angles: np.ndarray) -> np.ndarray:
    """Rotate each (even, odd) pair of ``vec`` by ``position * angle_i``."""
    vec = np.asarray(vec, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != 2 * angles.shape[0]:
        raise LengthMismatchError(
            f"vector of length {vec.shape} does not match {angles.shape[0]} rotation pairs"
        )
    if position < 0:
        raise ValueError(f"position must be nonnegative, got {position}")
    phase = position * angles
    cos, sin = np.cos(phase), np.sin(phase)
    even, odd = vec[0::2], vec[1::2]
    out = np.empty_like(vec)
    out[0::2] = even * cos - odd * sin
    out[1::2] = even * sin + odd * cos
    return out


def relative_attention_score(
    q: np.ndarray, k: np.ndarray, m: int, n: int, angles: np.ndarray
) -> float:
    """Softmax-free attention inner product between rotated q at m and k at n.

    Depends only on m - n: equal shifts of both positions leave it unchanged.
    """
    return float(np.dot(apply_rope(q, m, angles), apply_rope(k, n, angles)))


def decay_profile(angles: np.ndarray, max_distance: int) -> np.ndarray:
    """Upper-bound measure of attention inner-product decay vs relative distance.

    For each distance ``delta`` in ``[0, max_distance]`` returns
    ``(1/(d/2)) * sum_{l=1..d/2} |S_l|`` with
    ``S_l = sum_{j<l} exp(i * delta * angle_j)``.  Entry 0 is the curve
    maximum ``(d/2 + 1) / 2``.  Diagnostic only; sourced from a draft
    analysis, so downstream reports label it as such.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if max_distance < 1:
        raise ValueError(f"max_distance must be >= 1, got {max_distance}")
    distances = np.arange(max_distance + 1, dtype=np.float64)
    phases = np.exp(1j * np.outer(distances, angles))
    partial_sums = np.cumsum(phases, axis=1)
    return np.abs(partial_sums).mean(axis=1)
