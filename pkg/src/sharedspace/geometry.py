"""Differentiable geometric primitives for rectified-stereo supervision.

All operations take batched torch tensors shaped (B, C, H, W) (disparity
and depth maps use C=1) and are pure: safe to call concurrently, gradients
flow through every output. dtype follows the inputs, so tests can run the
same code at float64.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F

if TYPE_CHECKING:
    from .datagen import CameraRig

# SSIM stabilizers, the conventional (0.01*L)^2 / (0.03*L)^2 with L=1.
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def disparity_from_depth(depth: torch.Tensor, rig: "CameraRig") -> torch.Tensor:
    """Convert metric depth to disparity in pixels: d = focal * baseline / depth."""
    if not torch.all(depth > 0):
        raise ValueError("depth must be strictly positive to convert to disparity")
    return rig.focal_px * rig.baseline_m / depth


def depth_from_disparity(disparity: torch.Tensor, rig: "CameraRig") -> torch.Tensor:
    """Inverse of :func:`disparity_from_depth`."""
    if not torch.all(disparity > 0):
        raise ValueError("disparity must be strictly positive to convert to depth")
    return rig.focal_px * rig.baseline_m / disparity


def warp_right_to_left(right: torch.Tensor, disparity: torch.Tensor) -> torch.Tensor:
    """Inverse-warp the right view into the left view's frame.

    output(u, v) bilinearly samples `right` at (u - d(u, v), v). Sample
    positions outside the image clamp to the border column, so the warp is
    total; it is differentiable w.r.t. disparity away from integer sample
    positions.
    """
    if right.dim() != 4 or disparity.dim() != 4:
        raise ValueError("expected 4D tensors (B, C, H, W)")
    if right.shape[0] != disparity.shape[0] or right.shape[2:] != disparity.shape[2:]:
        raise ValueError(
            f"shape mismatch: right {tuple(right.shape)} vs disparity {tuple(disparity.shape)}"
        )
    b, c, h, w = right.shape
    u = torch.arange(w, dtype=right.dtype, device=right.device).view(1, 1, 1, w)
    x = u - disparity  # (B, 1, H, W) sample column per output pixel

    x0 = torch.floor(x)
    frac = x - x0  # in [0, 1); gradient w.r.t. disparity is -1
    # Out-of-bounds samples collapse onto the border column (i0 == i1 there,
    # which also zeroes their disparity gradient).
    i0 = x0.long().clamp(0, w - 1).expand(b, c, h, w)
    i1 = (x0.long() + 1).clamp(0, w - 1).expand(b, c, h, w)
    v0 = torch.gather(right, 3, i0)
    v1 = torch.gather(right, 3, i1)
    return v0 + frac * (v1 - v0)


def image_gradients(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward differences; the undefined last column (dx) / row (dy) is zero."""
    if img.shape[-1] < 2 or img.shape[-2] < 2:
        raise ValueError("image must be at least 2x2")
    dx = torch.zeros_like(img)
    dy = torch.zeros_like(img)
    dx[..., :, :-1] = img[..., :, 1:] - img[..., :, :-1]
    dy[..., :-1, :] = img[..., 1:, :] - img[..., :-1, :]
    return dx, dy


def _box3(x: torch.Tensor) -> torch.Tensor:
    """3x3 uniform box filter with reflect padding, same-size output."""
    padded = F.pad(x, (1, 1, 1, 1), mode="reflect")
    return F.avg_pool2d(padded, kernel_size=3, stride=1)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-pixel SSIM map over 3x3 uniform box statistics, per channel.

    Output lies in [-1, 1]; identical inputs give exactly 1.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() != 4:
        raise ValueError("expected 4D tensors (B, C, H, W)")
    mu_a = _box3(a)
    mu_b = _box3(b)
    var_a = _box3(a * a) - mu_a * mu_a
    var_b = _box3(b * b) - mu_b * mu_b
    cov = _box3(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den
