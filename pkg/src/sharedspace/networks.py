"""Model zoo: shared-domain generator, Wasserstein critic, and task networks.

Desk-scale widths by default, configurable upward. The generator output is
linear (no saturating nonlinearity) so autoencoder pretraining can reach a
near-exact identity on [0, 1] images.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, DataIOError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class GeneratorConfig:
    base_width: int = 32
    n_res_blocks: int = 4

    def __post_init__(self) -> None:
        if self.base_width < 8:
            raise ConfigurationError("generator base_width must be at least 8")
        if self.n_res_blocks < 1:
            raise ConfigurationError("generator needs at least one residual block")


@dataclass
class CriticConfig:
    stage_widths: tuple = (16, 32, 64, 128)
    k_extra: int = 2
    use_batchnorm: bool = True
    fc_widths: Optional[tuple] = None  # derived from stage widths when None
    input_hw: tuple = (64, 192)

    def __post_init__(self) -> None:
        if self.k_extra not in (1, 2):
            raise ConfigurationError("k_extra must be 1 or 2")
        self.stage_widths = tuple(self.stage_widths)
        self.input_hw = tuple(self.input_hw)
        if self.fc_widths is None:
            # Desk scale factor relative to the reference stack whose last
            # conv stage has 512 channels and FC widths (1024, 512).
            scale = (2 * self.stage_widths[-1]) / 512.0
            self.fc_widths = (max(8, int(1024 * scale)), max(8, int(512 * scale)))
        else:
            self.fc_widths = tuple(self.fc_widths)

    @property
    def extra_width(self) -> int:
        return 2 * self.stage_widths[-1]


@dataclass
class TaskConfig:
    variant: str = "depth"  # "depth" | "sfs"
    base_width: int = 32
    encoder_depth: int = 3
    skip_connections: bool = True
    d_min: float = 1.0
    d_max: float = 57.6  # 0.3 x default rig width
    sh_dims: int = 27

    def __post_init__(self) -> None:
        if self.variant not in ("depth", "sfs"):
            raise ConfigurationError(f"unknown task variant {self.variant!r}")
        if self.d_min <= 0 or self.d_max <= self.d_min:
            raise ConfigurationError("need 0 < d_min < d_max")
        if self.sh_dims != 27:
            raise ConfigurationError("lighting is fixed at 27 SH coefficients")
        if self.encoder_depth < 1:
            raise ConfigurationError("encoder_depth must be at least 1")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Image-to-image translation net: 7x7 stem, two stride-2 downs,
    residual blocks, two stride-2 transposed ups, linear 7x7 output."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        self.stem = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(3, w, 7), nn.ReLU(inplace=True))
        self.down = nn.Sequential(
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(*[ResidualBlock(4 * w) for _ in range(config.n_res_blocks)])
        self.up = nn.Sequential(
            nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7))

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"spatial dims must be divisible by 4, got {tuple(x.shape[-2:])}")
        h = self.stem(x)
        h = self.down(h)
        h = self.blocks(h)
        h = self.up(h)
        return self.head(h)


def _cbr(in_ch, out_ch, stride, use_bn):
    layers = [nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)]
    if use_bn:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.ReLU(inplace=True))
    return layers


class Critic(nn.Module):
    """Scalar-scoring conv stack: per stage width n a stride-1 then stride-2
    conv block, K extra stride-1/stride-2 pairs at a fixed width, then three
    fully connected layers down to one score."""

    def __init__(self, config: CriticConfig):
        super().__init__()
        self.config = config
        h, w = config.input_hw
        if min(h, w) < 16:
            raise ConfigurationError("critic input must be at least 16x16")
        bn = config.use_batchnorm
        layers = []
        in_ch = 3
        for n in config.stage_widths:
            layers += _cbr(in_ch, n, 1, bn)
            layers += _cbr(n, 2 * n, 2, bn)
            in_ch = 2 * n
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        for _ in range(config.k_extra):
            layers += _cbr(in_ch, config.extra_width, 1, bn)
            layers += _cbr(config.extra_width, config.extra_width, 2, bn)
            in_ch = config.extra_width
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        self.conv = nn.Sequential(*layers)
        self.flat_dim = in_ch * h * w

        fc1, fc2 = config.fc_widths
        fc_layers = [nn.Linear(self.flat_dim, fc1)]
        if bn:
            fc_layers.append(nn.BatchNorm1d(fc1))
        fc_layers.append(nn.ReLU(inplace=True))
        fc_layers.append(nn.Linear(fc1, fc2))
        if bn:
            fc_layers.append(nn.BatchNorm1d(fc2))
        fc_layers.append(nn.ReLU(inplace=True))
        fc_layers.append(nn.Linear(fc2, 1))
        self.fc = nn.Sequential(*fc_layers)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.config.input_hw:
            raise ConfigurationError(
                f"critic was built for input {self.config.input_hw}, got {tuple(x.shape[-2:])}"
            )
        h = self.conv(x)
        return self.fc(h.flatten(1)).squeeze(1)


class _UNetCore(nn.Module):
    """Shared encoder-decoder body for the task networks."""

    def __init__(self, base_width: int, depth: int, skips: bool):
        super().__init__()
        self.skips = skips
        self.depth = depth
        w = base_width
        self.stem = nn.Sequential(nn.Conv2d(3, w, 3, padding=1), nn.ReLU(inplace=True))
        downs = []
        widths = [w]
        for i in range(depth):
            wi, wo = w * 2 ** i, w * 2 ** (i + 1)
            downs.append(nn.Sequential(
                nn.Conv2d(wi, wo, 3, stride=2, padding=1), nn.ReLU(inplace=True),
                nn.Conv2d(wo, wo, 3, padding=1), nn.ReLU(inplace=True),
            ))
            widths.append(wo)
        self.downs = nn.ModuleList(downs)
        self.widths = widths

    def encode(self, x):
        feats = [self.stem(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats


class _UNetDecoder(nn.Module):
    def __init__(self, core: _UNetCore, out_channels: int):
        super().__init__()
        self.skips = core.skips
        ups = []
        fuses = []
        widths = core.widths
        for i in reversed(range(core.depth)):
            wi, wo = widths[i + 1], widths[i]
            ups.append(nn.Sequential(nn.Conv2d(wi, wo, 3, padding=1), nn.ReLU(inplace=True)))
            fuse_in = 2 * wo if core.skips else wo
            fuses.append(nn.Sequential(nn.Conv2d(fuse_in, wo, 3, padding=1), nn.ReLU(inplace=True)))
        self.ups = nn.ModuleList(ups)
        self.fuses = nn.ModuleList(fuses)
        self.head = nn.Conv2d(widths[0], out_channels, 3, padding=1)

    def forward(self, feats):
        h = feats[-1]
        for level, (up, fuse) in enumerate(zip(self.ups, self.fuses)):
            skip = feats[-(level + 2)]
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = up(h)
            if self.skips:
                h = torch.cat([h, skip], dim=1)
            h = fuse(h)
        return self.head(h)


class DepthNet(nn.Module):
    """U-shaped depth predictor; sigmoid disparity head mapped to
    [d_min, d_max] pixels, converted to strictly positive metric depth."""

    variant = "depth"

    def __init__(self, config: TaskConfig):
        super().__init__()
        if config.variant != "depth":
            raise ConfigurationError("DepthNet needs a depth-variant TaskConfig")
        self.config = config
        self.core = _UNetCore(config.base_width, config.encoder_depth, config.skip_connections)
        self.decoder = _UNetDecoder(self.core, 1)

    def forward_disparity(self, x):
        if x.shape[-1] % 2 ** self.config.encoder_depth or x.shape[-2] % 2 ** self.config.encoder_depth:
            raise ValueError(
                f"spatial dims must be divisible by {2 ** self.config.encoder_depth}"
            )
        raw = self.decoder(self.core.encode(x))
        c = self.config
        return c.d_min + (c.d_max - c.d_min) * torch.sigmoid(raw)

    def forward(self, x, rig):
        if self.config.d_max >= rig.width:
            raise ConfigurationError(
                f"disparity ceiling {self.config.d_max} must stay below image width {rig.width}"
            )
        disparity = self.forward_disparity(x)
        return rig.focal_px * rig.baseline_m / disparity


class SfsNet(nn.Module):
    """U-shaped decomposition net: per-pixel unit normals and sigmoid albedo
    from twin decoders, 27 SH lighting coefficients from the bottleneck."""

    variant = "sfs"

    def __init__(self, config: TaskConfig):
        super().__init__()
        if config.variant != "sfs":
            raise ConfigurationError("SfsNet needs an sfs-variant TaskConfig")
        self.config = config
        self.core = _UNetCore(config.base_width, config.encoder_depth, config.skip_connections)
        self.normal_decoder = _UNetDecoder(self.core, 3)
        self.albedo_decoder = _UNetDecoder(self.core, 3)
        bottleneck = self.core.widths[-1]
        self.light_head = nn.Sequential(
            nn.Linear(bottleneck, 64), nn.ReLU(inplace=True), nn.Linear(64, config.sh_dims),
        )

    def forward(self, x):
        feats = self.core.encode(x)
        raw_n = self.normal_decoder(feats)
        # Constrain normals to the camera-facing hemisphere; softplus keeps
        # the norm strictly positive so normalization is exact.
        nz = F.softplus(raw_n[:, 2:3]) + 1e-3
        n = torch.cat([raw_n[:, 0:2], nz], dim=1)
        normals = n / n.norm(dim=1, keepdim=True)
        albedo = torch.sigmoid(self.albedo_decoder(feats))
        pooled = feats[-1].mean(dim=(2, 3))
        light = self.light_head(pooled)
        return normals, albedo, light


def build_task(config: TaskConfig) -> nn.Module:
    return DepthNet(config) if config.variant == "depth" else SfsNet(config)


@dataclass
class ModelBundle:
    """Everything trainable plus enough metadata to rebuild it."""

    generator: Optional[Generator]
    critic: Optional[Critic]
    task: Optional[nn.Module]
    gen_config: Optional[GeneratorConfig]
    critic_config: Optional[CriticConfig]
    task_config: Optional[TaskConfig]
    iteration: int = 0
    seed: int = 0

    def modules(self) -> dict:
        out = {}
        for name in ("generator", "critic", "task"):
            m = getattr(self, name)
            if m is not None:
                out[name] = m
        return out

    def to(self, dtype: torch.dtype) -> "ModelBundle":
        for m in self.modules().values():
            m.to(dtype=dtype)
        return self


def make_models(
    gen_config: Optional[GeneratorConfig],
    critic_config: Optional[CriticConfig],
    task_config: Optional[TaskConfig],
    seed: int = 0,
) -> ModelBundle:
    """Build the requested networks with seed-determined initial weights."""
    torch.manual_seed(seed)
    generator = Generator(gen_config) if gen_config is not None else None
    critic = Critic(critic_config) if critic_config is not None else None
    task = build_task(task_config) if task_config is not None else None
    return ModelBundle(generator, critic, task, gen_config, critic_config,
                       task_config, iteration=0, seed=seed)


def save_checkpoint(bundle: ModelBundle, path) -> Path:
    """Write `<path>.pt` (parameter blob) and `<path>.json` (sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {name: m.state_dict() for name, m in bundle.modules().items()}
    sidecar = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "iteration": bundle.iteration,
        "seed": bundle.seed,
        "configs": {
            "generator": asdict(bundle.gen_config) if bundle.gen_config else None,
            "critic": asdict(bundle.critic_config) if bundle.critic_config else None,
            "task": asdict(bundle.task_config) if bundle.task_config else None,
        },
    }
    try:
        torch.save(blob, path.with_suffix(".pt"))
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    except OSError as exc:
        raise DataIOError(f"failed to write checkpoint {path}: {exc}") from exc
    return path.with_suffix(".pt")


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
        blob = torch.load(path.with_suffix(".pt"), map_location="cpu", weights_only=True)
    except OSError as exc:
        raise DataIOError(f"failed to read checkpoint {path}: {exc}") from exc
    if sidecar.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataIOError(f"unsupported checkpoint format in {path}")
    cfgs = sidecar["configs"]
    gen_config = GeneratorConfig(**cfgs["generator"]) if cfgs["generator"] else None
    critic_config = CriticConfig(**cfgs["critic"]) if cfgs["critic"] else None
    task_config = TaskConfig(**cfgs["task"]) if cfgs["task"] else None
    with torch.random.fork_rng():  # rebuilding models must not disturb the RNG
        bundle = make_models(gen_config, critic_config, task_config, seed=sidecar["seed"])
    bundle.iteration = sidecar["iteration"]
    for name, module in bundle.modules().items():
        module.load_state_dict(blob[name], assign=True)
    return bundle
