"""Three-stage optimization: generator autoencoder pretraining, task
pretraining on synthetic data, and joint adversarial training with
alternating critic/generator updates.

Determinism: model init comes from `torch.manual_seed(config.seed)`; batch
order comes from per-domain numpy generators seeded by (seed, domain); the
gradient-penalty mixing uses its own torch generator. All of these states
are captured in TrainState so checkpoint-resume replays the exact run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import losses as L
from .datagen import (
    REAL_PROXY,
    SYNTHETIC,
    CameraRig,
    DatasetManifest,
    load_manifest,
    load_sample,
    read_f32,
    write_f32,
)
from .exceptions import ConfigurationError, TrainingDiverged
from .losses import LossWeights
from .metrics import DepthReport, NormalReport, depth_metrics, normal_metrics
from .networks import (
    CriticConfig,
    GeneratorConfig,
    ModelBundle,
    TaskConfig,
    load_checkpoint,
    make_models,
    save_checkpoint,
)
from .sfs import SfSTargets, make_pseudo_labels, sfs_terms, shade

_DOMAIN_CODES = {SYNTHETIC: 0, REAL_PROXY: 1}


@dataclass
class TrainConfig:
    task_variant: str = "depth"
    g_pretrain_iterations: int = 5000
    t_pretrain_iterations: int = 10000
    joint_iterations: int = 30000
    batch_size: int = 2
    lr_pretrain: float = 1e-4
    lr_joint: float = 1e-5
    lr_critic: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_betas_critic: tuple = (0.5, 0.999)
    n_critic: int = 5
    critic_inner_repeats: int = 1
    gen_steps_per_critic_cycle: int = 1
    seed: int = 0
    val_interval: int = 500
    checkpoint_dir: str = "checkpoints"
    weights: LossWeights = field(default_factory=LossWeights.mde_defaults)
    gen_config: Optional[GeneratorConfig] = field(default_factory=GeneratorConfig)
    critic_config: Optional[CriticConfig] = field(default_factory=CriticConfig)
    task_config: TaskConfig = field(default_factory=TaskConfig)
    ablation: str = "none"  # none | no-recon | no-sharingan
    withhold_real: bool = False  # synthetic-only degenerate mode
    pretrain_smoothness: bool = False
    eval_cap_m: float = 80.0
    eval_min_m: float = 1e-3
    float64: bool = False
    num_threads: Optional[int] = None

    def __post_init__(self) -> None:
        if self.task_variant not in ("depth", "sfs"):
            raise ConfigurationError(f"unknown task variant {self.task_variant!r}")
        for name in ("g_pretrain_iterations", "t_pretrain_iterations", "joint_iterations",
                     "batch_size", "n_critic", "critic_inner_repeats",
                     "gen_steps_per_critic_cycle", "val_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        for name in ("lr_pretrain", "lr_joint", "lr_critic"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.ablation not in ("none", "no-recon", "no-sharingan"):
            raise ConfigurationError(f"unknown ablation {self.ablation!r}")
        if self.task_config.variant != self.task_variant:
            raise ConfigurationError("task_config.variant must match task_variant")
        if self.val_interval % self.gen_steps_per_critic_cycle:
            # checkpoints must land on cycle boundaries so resume replays
            # the uninterrupted schedule exactly
            raise ConfigurationError(
                "val_interval must be a multiple of gen_steps_per_critic_cycle")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.float64 else torch.float32

    def effective_weights(self) -> LossWeights:
        if self.ablation == "no-recon":
            w = asdict(self.weights)
            w["alpha2"] = 0.0
            return LossWeights(**w)
        return self.weights


class ToyData:
    """Handle to an on-disk dataset; loads samples as torch batches."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest: DatasetManifest = load_manifest(self.root)
        self.rig: CameraRig = self.manifest.rig

    @property
    def kind(self) -> str:
        return self.manifest.kind

    def entries(self, domain: str, split: str):
        entries = self.manifest.entries_for(domain, split)
        if not entries:
            raise ConfigurationError(f"dataset has no {domain}/{split} samples")
        return entries

    def load(self, entry, for_training: bool):
        return load_sample(self.root, self.manifest, entry, for_training=for_training)


def _img(t: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(t.transpose(2, 0, 1))).to(dtype)


def _map(t: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(t))[None].to(dtype)


class BatchStream:
    """Deterministic without-replacement batch sampler over one split."""

    def __init__(self, data: ToyData, domain: str, split: str, batch_size: int,
                 seed: int, dtype, for_training: bool = True):
        self.data = data
        self.domain = domain
        self.entries = data.entries(domain, split)
        self.batch_size = batch_size
        self.dtype = dtype
        self.for_training = for_training
        self.rng = np.random.default_rng([seed, _DOMAIN_CODES[domain]])
        self._order = []
        self._pos = 0

    def _next_indices(self):
        idx = []
        while len(idx) < self.batch_size:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(len(self.entries)).tolist()
                self._pos = 0
            idx.append(self._order[self._pos])
            self._pos += 1
        return idx

    def next_batch(self) -> dict:
        samples = [self.data.load(self.entries[i], self.for_training)
                   for i in self._next_indices()]
        if self.data.kind == "stereo":
            batch = {
                "entries": [s.scene_id for s in samples],
                "left": torch.stack([_img(s.left, self.dtype) for s in samples]),
                "right": torch.stack([_img(s.right, self.dtype) for s in samples]),
            }
            if self.domain == SYNTHETIC:
                batch["gt_depth"] = torch.stack(
                    [_map(s.gt_depth, self.dtype) for s in samples])
            return batch
        batch = {
            "entries": [s.scene_id for s in samples],
            "image": torch.stack([_img(s.image, self.dtype) for s in samples]),
            "mask": torch.stack([_map(s.mask.astype(np.float32), self.dtype) for s in samples]),
        }
        if self.domain == SYNTHETIC:
            batch["normals"] = torch.stack(
                [_img(s.normal_map, self.dtype) for s in samples])
            batch["albedo"] = torch.stack(
                [_img(s.albedo_map, self.dtype) for s in samples])
            batch["light"] = torch.stack(
                [torch.from_numpy(s.sh_light).to(self.dtype) for s in samples])
        return batch

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "order": list(self._order),
                "pos": self._pos}

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._order = list(state["order"])
        self._pos = state["pos"]


def _apply_runtime(config: TrainConfig) -> None:
    if config.num_threads is not None:
        torch.set_num_threads(config.num_threads)


def make_initial_bundle(config: TrainConfig) -> ModelBundle:
    """Seed-deterministic fresh models for a run (no G/D under no-sharingan)."""
    gen_cfg = None if config.ablation == "no-sharingan" else config.gen_config
    critic_cfg = None if config.ablation == "no-sharingan" else config.critic_config
    bundle = make_models(gen_cfg, critic_cfg, config.task_config, seed=config.seed)
    return bundle.to(config.dtype)


def _check_finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDiverged(f"{what} went non-finite; aborting "
                               "(last good checkpoint is preserved on disk)")


def pretrain_generator(data: ToyData, config: TrainConfig,
                       init: Optional[ModelBundle] = None) -> ModelBundle:
    """Train G as an autoencoder on both domains with the reconstruction loss."""
    _apply_runtime(config)
    bundle = init if init is not None else make_initial_bundle(config)
    if bundle.generator is None:
        raise ConfigurationError("generator pretraining needs a generator")
    gen = bundle.generator
    opt = torch.optim.Adam(gen.parameters(), lr=config.lr_pretrain, betas=config.adam_betas)
    syn = BatchStream(data, SYNTHETIC, "train", config.batch_size, config.seed, config.dtype)
    real = BatchStream(data, REAL_PROXY, "train", config.batch_size, config.seed, config.dtype)
    image_key = "left" if data.kind == "stereo" else "image"
    for _ in range(config.g_pretrain_iterations):
        xs = syn.next_batch()[image_key]
        xr = real.next_batch()[image_key]
        loss = L.reconstruction_loss(gen(xs), xs, gen(xr), xr)
        _check_finite(loss, "generator pretraining loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        bundle.iteration += 1
    return bundle


def identity_gap(bundle: ModelBundle, data: ToyData, split: str = "val",
                 dtype=torch.float32, per_domain: bool = False):
    """Held-out mean |G(x) - x|, averaged over both domains (or per domain)."""
    gen = bundle.generator
    image_key = "left" if data.kind == "stereo" else "image"
    gaps = {}
    with torch.no_grad():
        for domain in (SYNTHETIC, REAL_PROXY):
            vals = []
            for entry in data.entries(domain, split):
                sample = data.load(entry, for_training=False)
                x = _img(getattr(sample, image_key), dtype)[None]
                vals.append(float((gen(x) - x).abs().mean()))
            gaps[domain] = float(np.mean(vals))
    if per_domain:
        return gaps
    return float(np.mean(list(gaps.values())))


def _depth_pretrain_loss(task, batch, config: TrainConfig, data: ToyData):
    pred = task(batch["left"], data.rig)
    loss = L.depth_l1(pred, batch["gt_depth"])
    if config.pretrain_smoothness:
        loss = loss + config.weights.beta1 * L.smoothness_loss(pred, batch["left"])
    return loss


def _sfs_targets_from_batch(batch) -> SfSTargets:
    return SfSTargets(normals=batch["normals"], albedo=batch["albedo"],
                      light=batch["light"], image=batch["image"], mask=batch["mask"])


def _sfs_supervised_loss(task, batch, weights: LossWeights):
    normals, albedo, light = task(batch["image"])
    recon = shade(normals, albedo, light)
    terms = sfs_terms(normals, albedo, light, recon, _sfs_targets_from_batch(batch))
    total = (weights.sfs_recon * terms["sfs_recon"]
             + weights.sfs_normal * terms["sfs_normal"]
             + weights.sfs_albedo * terms["sfs_albedo"]
             + weights.sfs_light * terms["sfs_light"])
    return total


def pretrain_task(data: ToyData, config: TrainConfig,
                  init: Optional[ModelBundle] = None) -> ModelBundle:
    """Supervised task pretraining on the synthetic split only."""
    _apply_runtime(config)
    bundle = init if init is not None else make_initial_bundle(config)
    task = bundle.task
    opt = torch.optim.Adam(task.parameters(), lr=config.lr_pretrain, betas=config.adam_betas)
    syn = BatchStream(data, SYNTHETIC, "train", config.batch_size, config.seed, config.dtype)
    for _ in range(config.t_pretrain_iterations):
        batch = syn.next_batch()
        if config.task_variant == "depth":
            loss = _depth_pretrain_loss(task, batch, config, data)
        else:
            loss = _sfs_supervised_loss(task, batch, config.weights)
        _check_finite(loss, "task pretraining loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        bundle.iteration += 1
    return bundle


# ---------------------------------------------------------------------------
# Pseudo-labels (SfS virtual supervision)


def build_pseudo_label_cache(bundle: ModelBundle, data: ToyData, cache_dir,
                             batch_size: int = 16, dtype=torch.float32) -> dict:
    """Run the synthetic-pretrained SfS net on real training images once and
    freeze the outputs on disk (mirroring the dataset layout) and in memory.

    An existing disk cache is loaded instead of regenerated, so labels stay
    constant across later training iterations and across resume.
    """
    cache_dir = Path(cache_dir)
    entries = data.entries(REAL_PROXY, "train")
    marker = cache_dir / "complete.json"
    if marker.exists():
        return {e.scene_id: load_pseudo_labels(cache_dir, e) for e in entries}
    cache = {}
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        images = torch.stack([
            _img(data.load(e, for_training=True).image, dtype) for e in chunk])
        normals, albedo, light = make_pseudo_labels(bundle.task, images)
        for i, entry in enumerate(chunk):
            base = cache_dir / entry.domain / entry.split
            base.mkdir(parents=True, exist_ok=True)
            n = normals[i].numpy().astype(np.float32)
            a = albedo[i].numpy().astype(np.float32)
            l = light[i].numpy().astype(np.float32)
            write_f32(base / f"{entry.scene_id}_normal.pseudo.f32", n)
            write_f32(base / f"{entry.scene_id}_albedo.pseudo.f32", a)
            write_f32(base / f"{entry.scene_id}_light.pseudo.f32", l)
            cache[entry.scene_id] = (n, a, l)
    cache_dir.mkdir(parents=True, exist_ok=True)
    marker.write_text(json.dumps({"n_entries": len(entries), "source": "pretrained-T"}))
    return cache


def load_pseudo_labels(cache_dir, entry) -> tuple:
    base = Path(cache_dir) / entry.domain / entry.split
    return (read_f32(base / f"{entry.scene_id}_normal.pseudo.f32"),
            read_f32(base / f"{entry.scene_id}_albedo.pseudo.f32"),
            read_f32(base / f"{entry.scene_id}_light.pseudo.f32"))


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_depth_model(bundle: ModelBundle, data: ToyData, domain: str = REAL_PROXY,
                         split: str = "test", cap_m: float = 80.0, min_m: float = 1e-3,
                         batch_size: int = 8, dtype=torch.float32) -> DepthReport:
    """Pooled depth metrics of task(generator(x)) over a split."""
    task = bundle.task
    gen = bundle.generator
    preds, gts = [], []
    entries = data.entries(domain, split)
    with torch.no_grad():
        for start in range(0, len(entries), batch_size):
            chunk = entries[start:start + batch_size]
            samples = [data.load(e, for_training=False) for e in chunk]
            x = torch.stack([_img(s.left, dtype) for s in samples])
            if gen is not None:
                x = gen(x)
            depth = task(x, data.rig)
            preds.append(depth.squeeze(1).numpy().reshape(len(chunk), -1))
            gts.append(np.stack([s.gt_depth.reshape(-1) for s in samples]))
    pred = np.concatenate(preds, axis=0).reshape(-1)
    gt = np.concatenate(gts, axis=0).reshape(-1)
    return depth_metrics(pred, gt, cap_m=cap_m, min_m=min_m)


def evaluate_sfs_model(bundle: ModelBundle, data: ToyData, domain: str = REAL_PROXY,
                       split: str = "test", batch_size: int = 16,
                       dtype=torch.float32) -> NormalReport:
    """Pooled angular metrics of predicted normals over a split."""
    task = bundle.task
    gen = bundle.generator
    preds, gts, masks = [], [], []
    entries = data.entries(domain, split)
    with torch.no_grad():
        for start in range(0, len(entries), batch_size):
            chunk = entries[start:start + batch_size]
            samples = [data.load(e, for_training=False) for e in chunk]
            x = torch.stack([_img(s.image, dtype) for s in samples])
            if gen is not None:
                x = gen(x)
            normals, _, _ = task(x)
            preds.append(normals.permute(0, 2, 3, 1).numpy())
            gts.append(np.stack([s.normal_map for s in samples]))
            masks.append(np.stack([s.mask for s in samples]))
    pred = np.concatenate(preds, axis=0)
    gt = np.concatenate(gts, axis=0)
    mask = np.concatenate(masks, axis=0)
    return normal_metrics(pred, gt, mask)


def validation_metric(bundle: ModelBundle, data: ToyData, config: TrainConfig,
                      split: str = "val") -> float:
    if config.task_variant == "depth":
        report = evaluate_depth_model(bundle, data, REAL_PROXY, split,
                                      cap_m=config.eval_cap_m, min_m=config.eval_min_m,
                                      dtype=config.dtype)
        return report.abs_rel
    report = evaluate_sfs_model(bundle, data, REAL_PROXY, split, dtype=config.dtype)
    return report.mae_deg


# ---------------------------------------------------------------------------
# Joint training


@dataclass
class TrainState:
    bundle: ModelBundle
    iteration: int = 0
    val_records: list = field(default_factory=list)  # (iteration, metric, ckpt path)
    best_metric: Optional[float] = None
    best_iteration: Optional[int] = None
    best_checkpoint: Optional[str] = None


def parameter_digest(module: torch.nn.Module) -> str:
    """Hash of all trainable parameters (buffers such as batchnorm running
    stats are excluded; optimizers never touch them)."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class _JointLoop:
    """Mutable pieces of joint training, bundled for checkpoint/resume."""

    def __init__(self, data: ToyData, init: ModelBundle, config: TrainConfig):
        self.data = data
        self.config = config
        self.bundle = init.to(config.dtype)
        self.weights = config.effective_weights()
        self.use_gan = self.bundle.generator is not None and not config.withhold_real
        if config.ablation == "no-sharingan" and self.bundle.generator is not None:
            raise ConfigurationError("no-sharingan ablation must not carry a generator")

        params_gt = list(self.bundle.task.parameters())
        if self.bundle.generator is not None:
            params_gt += list(self.bundle.generator.parameters())
        self.opt_gt = torch.optim.Adam(params_gt, lr=config.lr_joint, betas=config.adam_betas)
        self.opt_d = None
        if self.use_gan and self.bundle.critic is not None:
            self.opt_d = torch.optim.Adam(self.bundle.critic.parameters(),
                                          lr=config.lr_critic, betas=config.adam_betas_critic)

        self.syn = BatchStream(data, SYNTHETIC, "train", config.batch_size,
                               config.seed, config.dtype)
        self.real = None
        if not config.withhold_real:
            self.real = BatchStream(data, REAL_PROXY, "train", config.batch_size,
                                    config.seed, config.dtype)
        self.gp_rng = torch.Generator()
        self.gp_rng.manual_seed(config.seed + 7919)
        self.iteration = 0
        self.last_critic_stats = {"wasserstein": 0.0, "gp": 0.0}

        self.pseudo_cache = None
        if config.task_variant == "sfs" and self.real is not None:
            self.pseudo_cache = build_pseudo_label_cache(
                self.bundle, data, Path(config.checkpoint_dir) / "pseudo",
                dtype=config.dtype)

    # -- checkpointable state ------------------------------------------------
    def capture_state(self) -> dict:
        state = {
            "iteration": self.iteration,
            "opt_gt": self.opt_gt.state_dict(),
            "syn_stream": self.syn.state(),
            "gp_rng": self.gp_rng.get_state(),
            "last_critic_stats": dict(self.last_critic_stats),
        }
        if self.opt_d is not None:
            state["opt_d"] = self.opt_d.state_dict()
        if self.real is not None:
            state["real_stream"] = self.real.state()
        return state

    def restore_state(self, state: dict) -> None:
        self.iteration = state["iteration"]
        self.opt_gt.load_state_dict(state["opt_gt"])
        self.syn.set_state(state["syn_stream"])
        self.gp_rng.set_state(state["gp_rng"])
        self.last_critic_stats = dict(state["last_critic_stats"])
        if self.opt_d is not None:
            self.opt_d.load_state_dict(state["opt_d"])
        if self.real is not None:
            self.real.set_state(state["real_stream"])

    # -- updates ---------------------------------------------------------
    def _image_key(self):
        return "left" if self.data.kind == "stereo" else "image"

    def critic_phase(self):
        gen, critic = self.bundle.generator, self.bundle.critic
        key = self._image_key()
        lam = self.weights.lambda_gp
        for p in critic.parameters():
            p.requires_grad_(True)
        for _ in range(self.config.n_critic):
            xs = self.syn.next_batch()[key]
            xr = self.real.next_batch()[key]
            with torch.no_grad():
                g_syn = gen(xs)
                g_real = gen(xr)
            for _ in range(self.config.critic_inner_repeats):
                wass = L.wasserstein_loss(critic(g_syn), critic(g_real))
                gp = L.gradient_penalty(critic, g_syn, g_real, mix_seed=self.gp_rng)
                # Maximize (wasserstein - lambda * gp): minimize its negation.
                d_loss = -(wass - lam * gp)
                _check_finite(d_loss, "critic loss")
                self.opt_d.zero_grad()
                d_loss.backward()
                self.opt_d.step()
                self.last_critic_stats = {"wasserstein": float(wass.detach()),
                                          "gp": float(gp.detach())}

    def _depth_task_terms(self, syn_batch, real_batch, x_syn_in, x_real_in):
        task = self.bundle.task
        pred_syn = task(x_syn_in, self.data.rig)
        _check_finite(pred_syn, "synthetic depth prediction")
        if real_batch is None:
            terms = {"l1": L.depth_l1(pred_syn, syn_batch["gt_depth"])}
            return self.weights.beta2 * terms["l1"], terms
        pred_real = task(x_real_in, self.data.rig)
        _check_finite(pred_real, "real depth prediction")
        terms = L.mde_task_terms(
            pred_syn, syn_batch["gt_depth"], pred_real,
            real_batch["left"], real_batch["right"], self.data.rig, self.weights)
        task_loss = (self.weights.beta1 * terms["smooth"]
                     + self.weights.beta2 * terms["l1"]
                     + self.weights.beta3 * terms["gc"])
        return task_loss, terms

    def _sfs_task_terms(self, syn_batch, real_batch, x_syn_in, x_real_in):
        task = self.bundle.task
        weights = self.weights
        n, a, light = task(x_syn_in)
        recon = shade(n, a, light)
        syn_terms = sfs_terms(n, a, light, recon, _sfs_targets_from_batch(syn_batch))
        terms = {f"{k}_syn": v for k, v in syn_terms.items()}
        task_loss = (weights.sfs_recon * syn_terms["sfs_recon"]
                     + weights.sfs_normal * syn_terms["sfs_normal"]
                     + weights.sfs_albedo * syn_terms["sfs_albedo"]
                     + weights.sfs_light * syn_terms["sfs_light"])
        if real_batch is not None:
            pn, pa, pl = task(x_real_in)
            precon = shade(pn, pa, pl)
            labels = [self.pseudo_cache[sid] for sid in real_batch["entries"]]
            target = SfSTargets(
                normals=torch.stack([torch.from_numpy(l[0]).to(self.config.dtype)
                                     for l in labels]),
                albedo=torch.stack([torch.from_numpy(l[1]).to(self.config.dtype)
                                    for l in labels]),
                light=torch.stack([torch.from_numpy(l[2]).to(self.config.dtype)
                                   for l in labels]),
                image=real_batch["image"],
                mask=real_batch["mask"],
            )
            real_terms = sfs_terms(pn, pa, pl, precon, target)
            terms.update({f"{k}_real": v for k, v in real_terms.items()})
            task_loss = task_loss + (
                weights.sfs_recon * real_terms["sfs_recon"]
                + weights.sfs_normal * real_terms["sfs_normal"]
                + weights.sfs_albedo * real_terms["sfs_albedo"]
                + weights.sfs_light * real_terms["sfs_light"])
        return task_loss, terms

    def generator_step(self) -> dict:
        config = self.config
        gen, critic, task = self.bundle.generator, self.bundle.critic, self.bundle.task
        key = self._image_key()
        syn_batch = self.syn.next_batch()
        real_batch = self.real.next_batch() if self.real is not None else None
        xs = syn_batch[key]
        xr = real_batch[key] if real_batch is not None else None

        if gen is not None:
            gx_s = gen(xs)
            gx_r = gen(xr) if xr is not None else None
        else:
            gx_s, gx_r = xs, xr

        zero = xs.new_zeros(())
        if self.use_gan and critic is not None and gx_r is not None:
            for p in critic.parameters():
                p.requires_grad_(False)
            # lambda = 0 on generator updates: penalty-free adversarial loss.
            adv = L.adversarial_loss(critic(gx_s), critic(gx_r), gp=0.0, lambda_gp=0.0)
            for p in critic.parameters():
                p.requires_grad_(True)
        else:
            adv = zero
        if gen is not None and gx_r is not None:
            recon = L.reconstruction_loss(gx_s, xs, gx_r, xr)
        elif gen is not None:
            recon = ((gx_s - xs) ** 2).mean()
        else:
            recon = zero

        if config.task_variant == "depth":
            task_loss, terms = self._depth_task_terms(syn_batch, real_batch, gx_s, gx_r)
        else:
            task_loss, terms = self._sfs_task_terms(syn_batch, real_batch, gx_s, gx_r)

        breakdown = L.overall_loss(adv, recon, task_loss, self.weights,
                                   gp=0.0, task_terms=terms)
        total = breakdown["total"]
        _check_finite(total, "joint loss")
        self.opt_gt.zero_grad()
        total.backward()
        self.opt_gt.step()
        self.iteration += 1
        self.bundle.iteration += 1
        return L.breakdown_floats(breakdown)


def train_joint(data: ToyData, init: ModelBundle, config: TrainConfig,
                resume_from=None) -> TrainState:
    """Alternate critic and generator/task updates for config.joint_iterations
    generator steps, validating and checkpointing every val_interval."""
    _apply_runtime(config)
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "train_log.jsonl"

    if resume_from is not None:
        payload = torch.load(Path(resume_from), weights_only=False)
        bundle = load_checkpoint(payload["bundle_path"]).to(config.dtype)
        loop = _JointLoop(data, bundle, config)
        loop.restore_state(payload["loop_state"])
        state = TrainState(bundle=loop.bundle,
                           iteration=loop.iteration,
                           val_records=payload["val_records"],
                           best_metric=payload["best_metric"],
                           best_iteration=payload["best_iteration"],
                           best_checkpoint=payload["best_checkpoint"])
    else:
        loop = _JointLoop(data, init, config)
        state = TrainState(bundle=loop.bundle)

    log_fh = open(log_path, "a")
    try:
        while loop.iteration < config.joint_iterations:
            if loop.use_gan and loop.opt_d is not None:
                loop.critic_phase()
            for _ in range(config.gen_steps_per_critic_cycle):
                if loop.iteration >= config.joint_iterations:
                    break
                breakdown = loop.generator_step()
                record = {"iteration": loop.iteration, "losses": breakdown,
                          "critic": dict(loop.last_critic_stats),
                          "wall_time": time.time()}
                log_fh.write(json.dumps(record) + "\n")
                if loop.iteration % config.val_interval == 0 \
                        or loop.iteration == config.joint_iterations:
                    _validate_and_checkpoint(loop, state, data, config, ckpt_dir)
        if not state.val_records:
            _validate_and_checkpoint(loop, state, data, config, ckpt_dir)
    finally:
        log_fh.close()
    return state


def _validate_and_checkpoint(loop: _JointLoop, state: TrainState, data: ToyData,
                             config: TrainConfig, ckpt_dir: Path) -> None:
    metric = validation_metric(loop.bundle, data, config)
    ckpt_path = save_checkpoint(loop.bundle, ckpt_dir / f"ckpt_{loop.iteration:07d}")
    state.val_records.append((loop.iteration, metric, str(ckpt_path)))
    if state.best_metric is None or metric < state.best_metric:
        state.best_metric = metric
        state.best_iteration = loop.iteration
        state.best_checkpoint = str(ckpt_path)
    state.iteration = loop.iteration
    # resume bundle: everything needed to continue the run bit-for-bit
    resume_payload = {
        "bundle_path": str(ckpt_dir / f"ckpt_{loop.iteration:07d}"),
        "loop_state": loop.capture_state(),
        "val_records": state.val_records,
        "best_metric": state.best_metric,
        "best_iteration": state.best_iteration,
        "best_checkpoint": state.best_checkpoint,
    }
    torch.save(resume_payload, ckpt_dir / "resume_state.pt")
    (ckpt_dir / "best.json").write_text(json.dumps({
        "metric": state.best_metric,
        "iteration": state.best_iteration,
        "checkpoint": state.best_checkpoint,
    }, indent=1))


def select_best(state: TrainState, val_data=None) -> str:
    """Checkpoint with the lowest validation metric; ties go to the earliest."""
    if not state.val_records:
        raise ValueError("no validation points recorded")
    best = min(state.val_records, key=lambda r: (r[1], r[0]))
    return best[2]
