"""Spherical-harmonics Lambertian shading and SfS supervision.

Lighting is 27 coefficients: 9 second-order SH coefficients per RGB
channel, concatenated R, G, B. The basis is the unnormalized polynomial
basis with all constants absorbed into the coefficients; the procedural
face renderer uses the identical basis, so ground-truth relighting is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from .exceptions import VariantMismatchError
from .losses import LossWeights

SH_DIMS = 27


def sh_basis(normals: Union[torch.Tensor, np.ndarray]) -> Union[torch.Tensor, np.ndarray]:
    """Evaluate the 9 SH basis polynomials at unit normals.

    `normals` holds (nx, ny, nz) along dim 1 for 4D torch tensors (B, 3, H, W)
    or along the last axis otherwise; the basis dimension replaces the normal
    dimension in the output.

    b(n) = [1, ny, nz, nx, nx*ny, ny*nz, -nx^2 - ny^2 + 2*nz^2, nz*nx, nx^2 - ny^2]
    """
    is_torch = isinstance(normals, torch.Tensor)
    channel_dim = 1 if (is_torch and normals.dim() == 4) else -1
    if normals.shape[channel_dim] != 3:
        raise ValueError("normals must have 3 components")
    if is_torch:
        nx, ny, nz = normals.unbind(channel_dim)
        norm = torch.sqrt(nx * nx + ny * ny + nz * nz)
        if not torch.all((norm - 1.0).abs() <= 1e-3):
            raise ValueError("normals must be unit length (within 1e-3)")
        stack, ones = torch.stack, torch.ones_like
    else:
        nx, ny, nz = np.moveaxis(normals, channel_dim, 0)
        norm = np.sqrt(nx * nx + ny * ny + nz * nz)
        if not np.all(np.abs(norm - 1.0) <= 1e-3):
            raise ValueError("normals must be unit length (within 1e-3)")
        stack, ones = (lambda seq, dim: np.stack(seq, axis=dim)), np.ones_like
    basis = [
        ones(nx),
        ny,
        nz,
        nx,
        nx * ny,
        ny * nz,
        -nx * nx - ny * ny + 2.0 * nz * nz,
        nz * nx,
        nx * nx - ny * ny,
    ]
    return stack(basis, channel_dim)


def shade(
    normals: Union[torch.Tensor, np.ndarray],
    albedo: Union[torch.Tensor, np.ndarray],
    light: Union[torch.Tensor, np.ndarray],
) -> Union[torch.Tensor, np.ndarray]:
    """Render albedo * (SH shading) per color channel, without clamping.

    Accepts torch batches (normals/albedo (B, 3, H, W), light (B, 27)) or
    single numpy images (normals/albedo (H, W, 3), light (27,)).
    """
    basis = sh_basis(normals)
    if isinstance(normals, torch.Tensor):
        if normals.shape != albedo.shape:
            raise ValueError("normals and albedo shapes differ")
        b, _, h, w = normals.shape
        coeff = light.reshape(b, 3, 9)
        shading = torch.einsum("bkhw,bck->bchw", basis, coeff)
        return albedo * shading
    if normals.shape != albedo.shape:
        raise ValueError("normals and albedo shapes differ")
    coeff = np.asarray(light, dtype=basis.dtype).reshape(3, 9)
    shading = basis @ coeff.T  # (H, W, 9) x (9, 3) -> (H, W, 3)
    return albedo * shading


@dataclass
class SfSTargets:
    """Supervision for one SfS batch: ground truth or cached pseudo-labels.

    `image` is the raw input image the reconstruction must match; spatial
    losses are averaged inside `mask`.
    """

    normals: torch.Tensor
    albedo: torch.Tensor
    light: torch.Tensor
    image: torch.Tensor
    mask: torch.Tensor


def make_pseudo_labels(pretrained_task, real_images: torch.Tensor):
    """Freeze a synthetic-pretrained SfS network's outputs as training targets.

    Runs inference with gradients disabled; callers cache the result so the
    labels stay constant for the rest of training.
    """
    variant = getattr(pretrained_task, "variant", None)
    if variant != "sfs":
        raise VariantMismatchError(
            f"pseudo-labels need an sfs-variant task network, got {variant!r}"
        )
    was_training = pretrained_task.training
    pretrained_task.eval()
    try:
        with torch.no_grad():
            normals, albedo, light = pretrained_task(real_images)
    finally:
        pretrained_task.train(was_training)
    return normals.detach(), albedo.detach(), light.detach()


def _masked_l1(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(pred.dtype)
    total = mask.sum() * pred.shape[1]
    if total.item() == 0:
        raise ValueError("empty mask")
    return ((pred - target).abs() * mask).sum() / total


def sfs_terms(
    pred_normals: torch.Tensor,
    pred_albedo: torch.Tensor,
    pred_light: torch.Tensor,
    recon: torch.Tensor,
    target: SfSTargets,
) -> dict:
    """Unweighted SfS loss components keyed for logging."""
    return {
        "sfs_recon": _masked_l1(recon, target.image, target.mask),
        "sfs_normal": _masked_l1(pred_normals, target.normals, target.mask),
        "sfs_albedo": _masked_l1(pred_albedo, target.albedo, target.mask),
        "sfs_light": ((pred_light - target.light) ** 2).mean(),
    }


def sfs_loss(
    pred: tuple,
    target: SfSTargets,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted SfS supervision loss.

    `pred` is (normals, albedo, light, reconstructed image); spatial terms
    are masked L1 means, the light term is the MSE over the 27 coefficients.
    """
    normals, albedo, light, recon = pred
    terms = sfs_terms(normals, albedo, light, recon, target)
    return (
        weights.sfs_recon * terms["sfs_recon"]
        + weights.sfs_normal * terms["sfs_normal"]
        + weights.sfs_albedo * terms["sfs_albedo"]
        + weights.sfs_light * terms["sfs_light"]
    )
