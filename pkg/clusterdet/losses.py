"""Regression losses built on the Gaussian Wasserstein distance, and their gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import Box, wasserstein_closed

DEFAULT_LAMBDA_SIZE = 0.1
DEFAULT_LAMBDA_OFF = 1.0
DEFAULT_LAMBDA_GWD = 2.0
DEFAULT_LAMBDA_L1 = 0.5
DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and the GWD modulation constant tau."""

    lambda_size: float = DEFAULT_LAMBDA_SIZE
    lambda_off: float = DEFAULT_LAMBDA_OFF
    lambda_gwd: float = DEFAULT_LAMBDA_GWD
    lambda_l1: float = DEFAULT_LAMBDA_L1
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        """Validate weights are non-negative and tau >= 1."""
        for name in ("lambda_size", "lambda_off", "lambda_gwd", "lambda_l1"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if not self.tau >= 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")


def gwd_loss_from_w2(w2: float, tau: float = DEFAULT_TAU) -> float:
    """GWD loss as a function of the squared distance: 1 − 1/(τ + ln(1 + W²))."""
    f = math.log1p(w2)
    # same value as 1 - 1/(tau + f), without cancellation near W = 0
    return (tau - 1.0 + f) / (tau + f)


def gwd_loss(b_pred: Box, b_gt: Box, cfg: LossConfig | None = None) -> float:
    """GWD-based box regression loss; in [0, 1) for tau = 1."""
    cfg = cfg or LossConfig()
    return gwd_loss_from_w2(wasserstein_closed(b_pred, b_gt), cfg.tau)


def _dloss_dw2(w2: float, tau: float) -> float:
    f = math.log1p(w2)
    return 1.0 / ((1.0 + w2) * (tau + f) ** 2)


def gwd_gradient_wrt_w(w: float, tau: float = DEFAULT_TAU) -> float:
    """Derivative of the GWD loss with respect to W (not W²).

    For tau = 1 this is 2W / ((1 + W²)(1 + ln(1 + W²))²); it vanishes for large W,
    which is why large boxes train slowly under GWD alone.
    """
    if w < 0:
        raise ValueError(f"W must be >= 0, got {w}")
    return 2.0 * w * _dloss_dw2(w * w, tau)


def gwd_gradient_wrt_box(
    b_pred: Box, b_gt: Box, cfg: LossConfig | None = None
) -> tuple[float, float, float, float]:
    """Gradient of ``gwd_loss`` with respect to the predicted (cx, cy, w, h)."""
    cfg = cfg or LossConfig()
    g = _dloss_dw2(wasserstein_closed(b_pred, b_gt), cfg.tau)
    return (
        g * 2.0 * (b_pred.cx - b_gt.cx),
        g * 2.0 * (b_pred.cy - b_gt.cy),
        g * 0.5 * (b_pred.w - b_gt.w),
        g * 0.5 * (b_pred.h - b_gt.h),
    )


def l1_size_loss(b_pred: Box, b_gt: Box) -> float:
    """L1 size regression term: |Δw| + |Δh|."""
    return abs(b_pred.w - b_gt.w) + abs(b_pred.h - b_gt.h)


def l1_offset_loss(b_pred: Box, b_gt: Box) -> float:
    """L1 center offset term: |Δcx| + |Δcy|."""
    return abs(b_pred.cx - b_gt.cx) + abs(b_pred.cy - b_gt.cy)


def _check_non_negative(**terms: float) -> None:
    for name, value in terms.items():
        if not value >= 0:
            raise ValueError(f"{name} must be >= 0, got {value}")


def detection_loss(
    l_k: float, l_size: float, l_off: float, cfg: LossConfig | None = None
) -> float:
    """Heatmap + size + offset loss: L_k + λ_size·L_size + λ_off·L_off."""
    cfg = cfg or LossConfig()
    _check_non_negative(l_k=l_k, l_size=l_size, l_off=l_off)
    return l_k + cfg.lambda_size * l_size + cfg.lambda_off * l_off


def gwd_detection_loss(
    l_k: float, l_gwd: float, l_1: float, cfg: LossConfig | None = None
) -> float:
    """Heatmap + GWD + L1 loss: L_k + λ_gwd·L_gwd + λ_l1·L_1.

    With ``lambda_l1 = 0`` this is the GWD-only variant.
    """
    cfg = cfg or LossConfig()
    _check_non_negative(l_k=l_k, l_gwd=l_gwd, l_1=l_1)
    return l_k + cfg.lambda_gwd * l_gwd + cfg.lambda_l1 * l_1
