"""Named configuration presets as flat dotted-key maps.

`desk` is the full desk-scale schedule (hours on a workstation); `accept`
is the reduced schedule the acceptance suite runs end to end on a small
machine; `smoke` is for quick CLI checks. Any key can be overridden from a
config file or `--set key=value`.
"""

from __future__ import annotations

from .exceptions import ConfigurationError

_COMMON_DEPTH = {
    "task": "depth",
    "data.kind": "stereo",
    "loss.eta": 0.85,
    "loss.mu": 0.15,
    "loss.beta1": 0.01,
    "loss.beta2": 100.0,
    "loss.beta3": 100.0,
    "loss.alpha1": 1.0,
    "loss.alpha2": 10.0,
    "loss.alpha3": 1.0,
    "loss.lambda_gp": 10.0,
    "train.batch_size": 2,
    "train.n_critic": 5,
    "train.critic_inner_repeats": 1,
    "train.gen_steps_per_critic_cycle": 1,
    "train.lr_joint": 1e-5,
    "train.lr_critic": 1e-5,
    "train.lr_pretrain": 1e-4,
    "model.critic_batchnorm": True,
    "model.critic_k": 2,
    "model.task_encoder_depth": 3,
    "eval.cap_m": 80.0,
    "eval.min_m": 1e-3,
}

_COMMON_FACE = {
    "task": "sfs",
    "data.kind": "face",
    "loss.alpha1": 1.0,
    "loss.alpha2": 10.0,
    "loss.alpha3": 0.1,
    "loss.lambda_gp": 10.0,
    "loss.sfs_recon": 0.5,
    "loss.sfs_normal": 0.5,
    "loss.sfs_albedo": 0.5,
    "loss.sfs_light": 0.1,
    # supplementary schedule: 3 generator steps per critic event, which
    # itself repeats 5 times on one batch; no critic batchnorm
    "train.n_critic": 1,
    "train.critic_inner_repeats": 5,
    "train.gen_steps_per_critic_cycle": 3,
    "train.batch_size": 16,
    "train.lr_joint": 1e-4,
    "train.lr_critic": 1e-4,
    "train.lr_pretrain": 1e-4,
    "model.critic_batchnorm": False,
    "model.critic_k": 1,
    "model.task_encoder_depth": 2,
}

PRESETS = {
    ("desk", "depth"): {
        **_COMMON_DEPTH,
        "rig.width": 192,
        "rig.height": 64,
        "rig.focal_px": 100.0,
        "rig.baseline_m": 0.54,
        "rig.camera_height_m": 1.5,
        "data.train_per_domain": 2000,
        "data.val_per_domain": 200,
        "data.test_per_domain": 200,
        "model.gen_base_width": 32,
        "model.gen_res_blocks": 4,
        "model.critic_widths": [16, 32, 64, 128],
        "model.task_width": 32,
        "model.d_min": 1.0,
        "model.d_max": 57.6,
        "train.g_pretrain_iterations": 5000,
        "train.t_pretrain_iterations": 10000,
        "train.joint_iterations": 30000,
        "train.val_interval": 500,
    },
    ("accept", "depth"): {
        **_COMMON_DEPTH,
        # Reduced scale tuned for a small CPU box: stronger stereo baseline
        # (disparity sensitivity), harsher real_proxy appearance gap, no
        # critic batchnorm (WGAN-GP stability at batch 2), raised learning
        # rates so a few hundred joint iterations act like the desk run.
        "rig.width": 96,
        "rig.height": 32,
        "rig.focal_px": 50.0,
        "rig.baseline_m": 1.0,
        "rig.camera_height_m": 1.5,
        "data.train_per_domain": 2000,
        "data.val_per_domain": 200,
        "data.test_per_domain": 200,
        "style.texture_amp": 0.5,
        "style.light_azimuth_shift_deg": 55.0,
        "style.light_jitter_deg": 10.0,
        "style.ambient_scale": 0.65,
        "style.diffuse_scale": 1.3,
        "style.gamma_range": [0.7, 1.4],
        "style.noise_sigma": 0.012,
        "model.gen_base_width": 16,
        "model.gen_res_blocks": 2,
        "model.critic_widths": [8, 16, 32, 64],
        "model.critic_batchnorm": False,
        "model.task_width": 16,
        "model.d_min": 0.6,
        "model.d_max": 28.8,
        "train.g_pretrain_iterations": 2500,
        "train.t_pretrain_iterations": 3000,
        "train.joint_iterations": 900,
        "train.val_interval": 150,
        "train.n_critic": 2,
        "train.lr_joint": 1e-4,
        "train.lr_critic": 2e-4,
        "train.lr_pretrain": 2e-4,
    },
    ("smoke", "depth"): {
        **_COMMON_DEPTH,
        "rig.width": 48,
        "rig.height": 16,
        "rig.focal_px": 25.0,
        "rig.baseline_m": 0.54,
        "rig.camera_height_m": 1.5,
        "data.train_per_domain": 8,
        "data.val_per_domain": 2,
        "data.test_per_domain": 2,
        "model.gen_base_width": 8,
        "model.gen_res_blocks": 1,
        "model.critic_widths": [8, 16],
        "model.task_width": 8,
        "model.task_encoder_depth": 2,
        "model.d_min": 0.5,
        "model.d_max": 14.0,
        "train.g_pretrain_iterations": 4,
        "train.t_pretrain_iterations": 4,
        "train.joint_iterations": 4,
        "train.val_interval": 4,
        "train.n_critic": 1,
    },
    ("desk", "sfs"): {
        **_COMMON_FACE,
        "face.resolution": 64,
        "data.train_per_domain": 2000,
        "data.val_per_domain": 200,
        "data.test_per_domain": 200,
        "model.gen_base_width": 32,
        "model.gen_res_blocks": 4,
        "model.critic_widths": [16, 32, 64, 128],
        "model.task_width": 32,
        "train.g_pretrain_iterations": 5000,
        "train.t_pretrain_iterations": 10000,
        "train.joint_iterations": 12000,
        "train.val_interval": 500,
    },
    ("accept", "sfs"): {
        **_COMMON_FACE,
        "face.resolution": 48,
        "data.train_per_domain": 600,
        "data.val_per_domain": 100,
        "data.test_per_domain": 100,
        "model.gen_base_width": 12,
        "model.gen_res_blocks": 2,
        "model.critic_widths": [8, 16, 32],
        "model.task_width": 12,
        "train.batch_size": 6,
        "train.g_pretrain_iterations": 500,
        "train.t_pretrain_iterations": 800,
        "train.joint_iterations": 300,
        "train.val_interval": 150,
    },
    ("smoke", "sfs"): {
        **_COMMON_FACE,
        "face.resolution": 32,
        "data.train_per_domain": 6,
        "data.val_per_domain": 2,
        "data.test_per_domain": 2,
        "model.gen_base_width": 8,
        "model.gen_res_blocks": 1,
        "model.critic_widths": [8, 16],
        "model.task_width": 8,
        "train.batch_size": 2,
        "train.g_pretrain_iterations": 4,
        "train.t_pretrain_iterations": 4,
        "train.joint_iterations": 3,
        "train.val_interval": 3,
    },
}


def preset_config(preset: str, task: str) -> dict:
    try:
        return dict(PRESETS[(preset, task)])
    except KeyError:
        raise ConfigurationError(f"no preset {preset!r} for task {task!r}") from None
