"""Training objectives: adversarial alignment, self-regularization, and the
task losses (supervised depth L1, edge-aware smoothness, stereo geometric
consistency), plus the weighted overall objective.

Everything is a pure function of torch tensors; stochastic pieces
(gradient-penalty mixing) take an explicit seed or generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Union

import torch

from .geometry import disparity_from_depth, image_gradients, ssim, warp_right_to_left

if TYPE_CHECKING:
    from .datagen import CameraRig


@dataclass
class LossWeights:
    """Scalar hyperparameters of the full objective.

    lambda_gp weighs the gradient penalty (10 on critic updates, 0 on
    generator updates); eta/mu mix SSIM and L1 inside geometric consistency;
    beta1..3 weigh smoothness / synthetic L1 / geometric consistency inside
    the task loss; alpha1..3 weigh adversarial / reconstruction / task terms
    of the overall loss.
    """

    lambda_gp: float = 10.0
    eta: float = 0.85
    mu: float = 0.15
    beta1: float = 0.01
    beta2: float = 100.0
    beta3: float = 100.0
    alpha1: float = 1.0
    alpha2: float = 10.0
    alpha3: float = 1.0
    # SfS-supervision term weights (reconstruction, normal, albedo, light).
    sfs_recon: float = 0.5
    sfs_normal: float = 0.5
    sfs_albedo: float = 0.5
    sfs_light: float = 0.1

    def __post_init__(self) -> None:
        for name in (
            "lambda_gp", "eta", "mu", "beta1", "beta2", "beta3",
            "alpha1", "alpha2", "alpha3",
            "sfs_recon", "sfs_normal", "sfs_albedo", "sfs_light",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    @classmethod
    def mde_defaults(cls) -> "LossWeights":
        return cls()

    @classmethod
    def fne_defaults(cls) -> "LossWeights":
        return cls(alpha1=1.0, alpha2=10.0, alpha3=0.1)


# A loss breakdown is a plain name -> float map; "total" is always present
# and equals alpha1*adv + alpha2*recon + alpha3*task.
LossBreakdown = dict


def wasserstein_loss(d_syn: torch.Tensor, d_real: torch.Tensor) -> torch.Tensor:
    """Critic-score discrepancy: mean(d_syn) - mean(d_real)."""
    if d_syn.numel() == 0 or d_real.numel() == 0:
        raise ValueError("empty score batch")
    return d_syn.mean() - d_real.mean()


def gradient_penalty(
    critic: Callable[[torch.Tensor], torch.Tensor],
    g_syn: torch.Tensor,
    g_real: torch.Tensor,
    mix_seed: Union[int, torch.Generator, None] = None,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean squared deviation of the critic's gradient norm from 1.

    Each batch element is evaluated at a random interpolate
    h = eps * g_real + (1 - eps) * g_syn with eps ~ U(0, 1) drawn from
    `mix_seed`; pass `eps` explicitly to pin the mixing (tests use the
    endpoints).
    """
    if g_syn.shape != g_real.shape:
        raise ValueError(
            f"shape mismatch: g_syn {tuple(g_syn.shape)} vs g_real {tuple(g_real.shape)}"
        )
    n = g_syn.shape[0]
    if eps is None:
        if isinstance(mix_seed, torch.Generator) or mix_seed is None:
            gen = mix_seed
        else:
            gen = torch.Generator(device=g_syn.device)
            gen.manual_seed(int(mix_seed))
        eps = torch.rand((n,) + (1,) * (g_syn.dim() - 1), generator=gen,
                         dtype=g_syn.dtype, device=g_syn.device)
    h = (eps * g_real + (1.0 - eps) * g_syn).detach().requires_grad_(True)
    scores = critic(h)
    grads = torch.autograd.grad(
        outputs=scores, inputs=h,
        grad_outputs=torch.ones_like(scores),
        create_graph=True,
    )[0]
    norms = grads.reshape(n, -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def adversarial_loss(
    d_syn: torch.Tensor,
    d_real: torch.Tensor,
    gp: Union[torch.Tensor, float] = 0.0,
    lambda_gp: float = 0.0,
) -> torch.Tensor:
    """Wasserstein loss minus the weighted gradient penalty.

    Critic updates maximize this with lambda_gp=10 (i.e. minimize its
    negation); generator updates use lambda_gp=0, which returns the
    penalty-free Wasserstein loss unchanged.
    """
    if lambda_gp < 0:
        raise ValueError("lambda_gp must be nonnegative")
    w = wasserstein_loss(d_syn, d_real)
    if lambda_gp == 0.0:
        return w
    return w - lambda_gp * gp


def reconstruction_loss(
    gx_s: torch.Tensor, x_s: torch.Tensor, gx_r: torch.Tensor, x_r: torch.Tensor
) -> torch.Tensor:
    """Squared-L2 self-regularization on both domains, mean per element."""
    if gx_s.shape != x_s.shape or gx_r.shape != x_r.shape:
        raise ValueError("shape mismatch between generator output and input")
    return ((gx_s - x_s) ** 2).mean() + ((gx_r - x_r) ** 2).mean()


def depth_l1(
    pred: torch.Tensor, gt: torch.Tensor, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Mean absolute depth error over valid pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    diff = (pred - gt).abs()
    if mask is None:
        return diff.mean()
    if not mask.any():
        raise ValueError("empty valid mask")
    mask = mask.to(diff.dtype)
    return (diff * mask).sum() / mask.sum()


def smoothness_loss(depth: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Edge-aware depth smoothness: |grad depth| damped by exp(-|grad image|).

    The image gradient magnitude is averaged over channels per direction;
    each direction is averaged over the pixels where its forward difference
    is defined, then the two directions are averaged.
    """
    if depth.shape[-2:] != image.shape[-2:]:
        raise ValueError("depth and image spatial shapes differ")
    d_dx, d_dy = image_gradients(depth)
    i_dx, i_dy = image_gradients(image)
    wx = torch.exp(-i_dx.abs().mean(dim=1, keepdim=True))
    wy = torch.exp(-i_dy.abs().mean(dim=1, keepdim=True))
    # Slice off the zero-padded last column/row so means run over defined
    # differences only.
    term_x = (wx * d_dx.abs())[..., :, :-1].mean()
    term_y = (wy * d_dy.abs())[..., :-1, :].mean()
    return 0.5 * (term_x + term_y)


def geometric_consistency(
    left: torch.Tensor, warped: torch.Tensor, eta: float = 0.85, mu: float = 0.15
) -> torch.Tensor:
    """Photometric discrepancy between the left view and the warped right view."""
    if left.shape != warped.shape:
        raise ValueError("shape mismatch between left and warped images")
    ssim_term = ((1.0 - ssim(left, warped)) / 2.0).mean()
    l1_term = (left - warped).abs().mean()
    return eta * ssim_term + mu * l1_term


def mde_task_terms(
    pred_syn: torch.Tensor,
    gt_syn: torch.Tensor,
    pred_real_depth: torch.Tensor,
    real_left: torch.Tensor,
    real_right: torch.Tensor,
    rig: "CameraRig",
    weights: LossWeights,
) -> dict:
    """Unweighted components of the depth task loss, keyed for logging."""
    disparity = disparity_from_depth(pred_real_depth, rig)
    warped = warp_right_to_left(real_right, disparity)
    return {
        "smooth": smoothness_loss(pred_real_depth, real_left),
        "l1": depth_l1(pred_syn, gt_syn),
        "gc": geometric_consistency(real_left, warped, weights.eta, weights.mu),
    }


def task_loss_mde(
    pred_syn: torch.Tensor,
    gt_syn: torch.Tensor,
    pred_real_depth: torch.Tensor,
    real_left: torch.Tensor,
    real_right: torch.Tensor,
    rig: "CameraRig",
    weights: LossWeights,
) -> torch.Tensor:
    """Depth task loss: beta1 * smoothness + beta2 * L1 + beta3 * consistency."""
    terms = mde_task_terms(
        pred_syn, gt_syn, pred_real_depth, real_left, real_right, rig, weights
    )
    return (
        weights.beta1 * terms["smooth"]
        + weights.beta2 * terms["l1"]
        + weights.beta3 * terms["gc"]
    )


def overall_loss(
    adv: Union[torch.Tensor, float],
    recon: Union[torch.Tensor, float],
    task: Union[torch.Tensor, float],
    weights: LossWeights,
    gp: Union[torch.Tensor, float] = 0.0,
    task_terms: Optional[dict] = None,
) -> LossBreakdown:
    """Weighted sum alpha1*adv + alpha2*recon + alpha3*task, with breakdown.

    Returns a name -> scalar map including the weighted "total"; scalars stay
    torch tensors when the inputs are tensors, so the total can be
    backpropagated. task_terms (e.g. from :func:`mde_task_terms`) are merged
    in for logging.
    """
    total = weights.alpha1 * adv + weights.alpha2 * recon + weights.alpha3 * task
    breakdown = {"adv": adv, "gp": gp, "recon": recon, "task": task}
    if task_terms:
        breakdown.update(task_terms)
    breakdown["total"] = total
    return breakdown


def breakdown_floats(breakdown: LossBreakdown) -> dict:
    """Detach a loss breakdown to plain floats for logging."""
    return {
        k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        for k, v in breakdown.items()
    }
