"""Closed-form rescaling-factor generators and factor-file export.

Implements the three standard families (uniform interpolation, base-value
rescaling, three-group rescaling) plus the anchored low-dimension fill used
by the search, all producing :class:`RescaleFactors` vectors over cosine
dimensions.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jsonutil
from .core import (
    REL_EPS,
    TWO_PI,
    RopeConfig,
    periods,
    theoretical_critical_dimension,
)
from .errors import (
    BaseTooSmallError,
    DegenerateWindowError,
    InvalidGroupBoundsError,
    LengthMismatchError,
)


class RescaleMethod(str, enum.Enum):
    PI = "pi"
    NTK = "ntk"
    YARN = "yarn"
    SEARCHED = "searched"
    CUSTOM = "custom"


@dataclass(frozen=True)
class RescaleFactors:
    """A per-dimension factor vector with its provenance and critical index.

    ``lambdas[i]`` divides rotation angle ``i``; values below 1 would expand
    rotation instead of compressing it and are rejected.  For SEARCHED
    vectors the tail beyond ``critical_cos_index`` must be non-decreasing
    and confined to ``[s, 2s]`` with ``s`` the extension ratio.
    """

    method: RescaleMethod
    lambdas: np.ndarray
    critical_cos_index: int
    source_config: RopeConfig

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        object.__setattr__(self, "lambdas", lam)
        n = self.source_config.n_cosine_dims
        if lam.shape != (n,):
            raise LengthMismatchError(f"expected {n} factors, got shape {lam.shape}")
        if np.any(lam < 1.0 - 1e-12):
            raise ValueError("rescaling factors must be >= 1")
        if not 0 <= self.critical_cos_index <= n:
            raise ValueError(
                f"critical_cos_index {self.critical_cos_index} outside [0, {n}]"
            )
        if self.method is RescaleMethod.SEARCHED:
            s = self.source_config.extension_ratio
            tail = lam[self.critical_cos_index :]
            if np.any(np.diff(tail) < -REL_EPS * s):
                raise ValueError("searched factors must be non-decreasing beyond the critical index")
            if np.any(tail < s * (1.0 - REL_EPS)) or np.any(tail > 2.0 * s * (1.0 + REL_EPS)):
                raise ValueError("searched factors beyond the critical index must lie in [s, 2s]")


def pi_factors(config: RopeConfig) -> RescaleFactors:
    """Uniform interpolation: every dimension scaled by the extension ratio."""
    s = config.extension_ratio
    lam = np.full(config.n_cosine_dims, s, dtype=np.float64)
    tcd = theoretical_critical_dimension(config)
    return RescaleFactors(RescaleMethod.PI, lam, tcd.cosine_index, config)


def ntk_base(config: RopeConfig) -> float:
    """Smallest rescaled base whose factor at the critical dimension reaches s.

    ``theta ** (log(L/2pi) / log(L_train/2pi))``; evaluating the resulting
    factor vector at the un-ceiled critical boundary gives exactly the
    extension ratio, so the ceiled index always clears it.
    """
    if config.pretrained_len <= TWO_PI:
        raise DegenerateWindowError(
            f"pretrained_len {config.pretrained_len} must exceed 2*pi"
        )
    exponent = math.log(config.target_len / TWO_PI) / math.log(config.pretrained_len / TWO_PI)
    return float(config.theta_base**exponent)


def factors_from_base(config: RopeConfig, new_base: float) -> RescaleFactors:
    """Factor vector equivalent to swapping the base: lambda_i = (b'/b)^(2i/d)."""
    if new_base < config.theta_base * (1.0 - 1e-12):
        raise BaseTooSmallError(
            f"new base {new_base} is below the original base {config.theta_base}"
        )
    i = np.arange(config.n_cosine_dims, dtype=np.float64)
    lam = (new_base / config.theta_base) ** (2.0 * i / config.head_dim)
    lam = np.maximum(lam, 1.0)
    tcd = theoretical_critical_dimension(config)
    return RescaleFactors(RescaleMethod.NTK, lam, tcd.cosine_index, config)


def yarn_factors(config: RopeConfig, alpha: float = 1.0, beta: float = 32.0) -> RescaleFactors:
    """Three-group rescaling keyed on periods-per-window ``r_i = L_train / T_i``.

    Dimensions rotating at least ``beta`` full periods inside the trained
    window keep factor 1; dimensions with at most ``alpha`` periods get the
    full extension ratio; a linear ramp in ``r`` covers the band between.
    The defaults (1, 32) are exposed because only the two extreme groups are
    pinned by the method itself.
    """
    if not (0 < alpha < beta):
        raise InvalidGroupBoundsError(f"need 0 < alpha < beta, got alpha={alpha} beta={beta}")
    s = config.extension_ratio
    r = config.pretrained_len / periods(config)
    gamma = np.clip((r - alpha) / (beta - alpha), 0.0, 1.0)
    lam = (1.0 - gamma) * s + gamma * 1.0
    tcd = theoretical_critical_dimension(config)
    return RescaleFactors(RescaleMethod.YARN, lam, tcd.cosine_index, config)


def ntk_anchored_fill(config: RopeConfig, d_rcd_cos: int, anchor: float) -> np.ndarray:
    """Base-rescaling fill for dimensions below a searched critical index.

    Chooses the base so the factor curve reaches ``anchor`` exactly at
    ``d_rcd_cos``, giving ``lambda_i = anchor ** (i / d_rcd_cos)`` for
    ``i < d_rcd_cos``: starts at 1, increases, and meets the tail
    continuously.
    """
    if not 1 <= d_rcd_cos <= config.n_cosine_dims:
        raise ValueError(
            f"d_rcd_cos {d_rcd_cos} outside [1, {config.n_cosine_dims}]"
        )
    if anchor < 1.0:
        raise ValueError(f"anchor must be >= 1, got {anchor}")
    i = np.arange(d_rcd_cos, dtype=np.float64)
    return np.asarray(anchor, dtype=np.float64) ** (i / d_rcd_cos)


def factor_document(
    factors: RescaleFactors, short_factors: np.ndarray | None = None
) -> dict:
    """The factor-file payload: method, config, critical index, both vectors."""
    cfg = factors.source_config
    if short_factors is None:
        short_factors = np.ones(cfg.n_cosine_dims, dtype=np.float64)
    short_factors = np.asarray(short_factors, dtype=np.float64)
    if short_factors.shape != factors.lambdas.shape:
        raise LengthMismatchError("short_factors length must match long_factors")
    return {
        "method": factors.method.value,
        "theta_base": float(cfg.theta_base),
        "head_dim": cfg.head_dim,
        "pretrained_len": cfg.pretrained_len,
        "target_len": cfg.target_len,
        "critical_cos_index": factors.critical_cos_index,
        "long_factors": factors.lambdas,
        "short_factors": short_factors,
    }


def export_factors(
    factors: RescaleFactors,
    path: str | Path,
    short_factors: np.ndarray | None = None,
) -> None:
    """Write the factor file (JSON, UTF-8, 17-significant-digit floats)."""
    doc = factor_document(factors, short_factors)
    Path(path).write_text(jsonutil.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_factors(path: str | Path) -> RescaleFactors:
    """Read a factor file back into a validated :class:`RescaleFactors`."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    config = RopeConfig(
        theta_base=float(doc["theta_base"]),
        head_dim=int(doc["head_dim"]),
        pretrained_len=int(doc["pretrained_len"]),
        target_len=int(doc["target_len"]),
    )
    return RescaleFactors(
        method=RescaleMethod(doc["method"]),
        lambdas=np.asarray(doc["long_factors"], dtype=np.float64),
        critical_cos_index=int(doc["critical_cos_index"]),
        source_config=config,
    )
