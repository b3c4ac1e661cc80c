"""Procedural two-domain dataset: analytic ray-cast stereo scenes and
SH-lit face-like surfaces, with exact ground truth.

Both domains share the same geometry distribution; they differ only in
appearance. The synthetic style renders flat albedo under one diffuse
light; the real_proxy style adds procedural 3D textures, a shifted light,
per-scene gamma, and sensor noise. Ground-truth depth depends on geometry
only, so it is byte-identical across styles.

Everything here is a pure function of its explicit inputs (seeds
included); rendering is numpy/float64 internally and persists float32.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .exceptions import ConfigurationError, DataIOError, EvalOnlyDepthError

FORMAT_VERSION = 1

# Fronto-parallel backdrop: rays that clear every primitive and the ground
# hit this wall, so every pixel has finite depth and exact disparity.
FAR_WALL_M = 36.0

GROUND_ALBEDO = (0.30, 0.32, 0.26)
WALL_ALBEDO = (0.62, 0.70, 0.80)

SYNTHETIC = "synthetic"
REAL_PROXY = "real_proxy"
DOMAINS = (SYNTHETIC, REAL_PROXY)
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# Core types


@dataclass(frozen=True)
class CameraRig:
    """Pinhole intrinsics and stereo baseline (right camera at +x)."""

    focal_px: float = 100.0
    baseline_m: float = 0.54
    width: int = 192
    height: int = 64
    camera_height_m: float = 1.5

    def __post_init__(self) -> None:
        if self.focal_px <= 0 or self.baseline_m <= 0:
            raise ConfigurationError("focal_px and baseline_m must be positive")
        if self.width < 16 or self.height < 16:
            raise ConfigurationError("rig width and height must be at least 16 px")

    @property
    def cx(self) -> float:
        return self.width / 2.0 - 0.5

    @property
    def cy(self) -> float:
        return self.height / 2.0 - 0.5


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" | "box"
    center: tuple  # (x, y, z) meters, camera frame (x right, y down, z forward)
    size: float  # sphere diameter / box edge length
    albedo: tuple  # rgb in [0, 1]


@dataclass(frozen=True)
class SceneLight:
    direction: tuple  # unit vector pointing toward the light
    ambient: float
    diffuse: float


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    primitives: tuple
    ground_plane_height: float
    light: SceneLight

    def validate(self) -> None:
        if not 3 <= len(self.primitives) <= 8:
            raise ValueError("scene must contain between 3 and 8 primitives")
        for prim in self.primitives:
            if not 3.0 <= prim.center[2] <= 40.0:
                raise ValueError("primitive depth must lie in [3, 40] m")
        norm = math.sqrt(sum(c * c for c in self.light.direction))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("light direction must be unit length")


@dataclass(frozen=True)
class StyleParams:
    """Appearance perturbations defining the real_proxy domain."""

    texture_amp: float = 0.4
    texture_freqs: tuple = (0.8, 3.5)
    texture_weights: tuple = (0.65, 0.35)
    light_azimuth_shift_deg: float = 35.0
    light_jitter_deg: float = 8.0
    ambient_scale: float = 0.85
    diffuse_scale: float = 1.0
    gamma_range: tuple = (0.8, 1.2)
    noise_sigma: float = 0.01


@dataclass(frozen=True)
class FaceStyleParams:
    """Appearance/lighting distribution for one face domain."""

    albedo_texture_amp: float = 0.0
    albedo_texture_freq: float = 9.0
    dc_range: tuple = (0.6, 0.78)
    directional_range: tuple = (0.08, 0.2)
    quad_sigma: float = 0.015
    elevation_range_deg: tuple = (25.0, 65.0)
    tint_range: tuple = (0.92, 1.08)
    noise_sigma: float = 0.005


class DomainSample:
    """One stereo training example.

    `gt_depth` raises :class:`EvalOnlyDepthError` when the sample was loaded
    for training from the real_proxy domain; evaluation code must use
    :meth:`eval_gt_depth` explicitly.
    """

    def __init__(self, left, right, gt_depth, domain, scene_id,
                 gt_depth_eval_only: bool = False):
        self.left = left
        self.right = right
        self.domain = domain
        self.scene_id = scene_id
        self.gt_depth_eval_only = gt_depth_eval_only
        self._gt_depth = gt_depth

    @property
    def gt_depth(self):
        if self.gt_depth_eval_only:
            raise EvalOnlyDepthError(
                f"gt_depth of {self.domain} sample {self.scene_id} is eval-only; "
                "training code must not read it"
            )
        return self._gt_depth

    def eval_gt_depth(self):
        return self._gt_depth


class FaceSample:
    """One face example: image plus normal/albedo/light decomposition.

    For real_proxy training samples the decomposition is eval-only
    (training targets come from cached pseudo-labels instead); use
    :meth:`eval_labels` in evaluation code.
    """

    def __init__(self, image, normal_map, albedo_map, sh_light, mask,
                 domain=SYNTHETIC, scene_id=0, labels_eval_only: bool = False):
        self.image = image
        self.mask = mask
        self.domain = domain
        self.scene_id = scene_id
        self.labels_eval_only = labels_eval_only
        self._normal_map = normal_map
        self._albedo_map = albedo_map
        self._sh_light = sh_light

    def _guard(self, name):
        if self.labels_eval_only:
            raise EvalOnlyDepthError(
                f"{name} of {self.domain} face {self.scene_id} is eval-only; "
                "training code must not read it"
            )

    @property
    def normal_map(self):
        self._guard("normal_map")
        return self._normal_map

    @property
    def albedo_map(self):
        self._guard("albedo_map")
        return self._albedo_map

    @property
    def sh_light(self):
        self._guard("sh_light")
        return self._sh_light

    def eval_labels(self):
        return self._normal_map, self._albedo_map, self._sh_light


# ---------------------------------------------------------------------------
# Deterministic lattice noise (world-space textures, view consistent)


def _mix64(h: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 wraparound is well defined in numpy.
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def _lattice_unit(ix, iy, iz, seed: int) -> np.ndarray:
    seed_mix = (seed * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
        ^ np.uint64(seed_mix)
    )
    return (_mix64(h) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def value_noise3(points: np.ndarray, seed: int) -> np.ndarray:
    """Trilinearly interpolated lattice noise in [0, 1), seeded and portable."""
    p = np.asarray(points, dtype=np.float64)
    i = np.floor(p).astype(np.int64)
    f = p - i
    w = f * f * (3.0 - 2.0 * f)  # smoothstep fade
    out = np.zeros(p.shape[:-1], dtype=np.float64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = _lattice_unit(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz, seed)
                weight = (
                    (w[..., 0] if dx else 1.0 - w[..., 0])
                    * (w[..., 1] if dy else 1.0 - w[..., 1])
                    * (w[..., 2] if dz else 1.0 - w[..., 2])
                )
                out += corner * weight
    return out


def texture_field(points: np.ndarray, seed: int, style: StyleParams) -> np.ndarray:
    """Multiplicative albedo texture around 1.0, from fixed noise octaves."""
    acc = np.zeros(np.asarray(points).shape[:-1], dtype=np.float64)
    for octave, (freq, weight) in enumerate(zip(style.texture_freqs, style.texture_weights)):
        acc += weight * value_noise3(np.asarray(points) * freq, seed + 101 * octave)
    return np.clip(1.0 + style.texture_amp * (2.0 * acc - 1.0), 0.25, 1.75)


# ---------------------------------------------------------------------------
# Scene generation


def generate_scene(seed: int, rig: CameraRig) -> SceneSpec:
    """Sample a deterministic scene: 3-8 grounded primitives plus one light."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    rng = np.random.default_rng(seed)
    n_prims = int(rng.integers(3, 9))
    prims = []
    for _ in range(n_prims):
        kind = "sphere" if rng.random() < 0.5 else "box"
        # Upper bound keeps primitives in front of the far wall, inside the
        # SceneSpec depth invariant [3, 40].
        z = float(rng.uniform(3.5, 33.0))
        size = float(rng.uniform(0.8, 3.2))
        half_width = z * (rig.width / 2.0) / rig.focal_px
        x = float(rng.uniform(-0.85, 0.85) * half_width)
        y = rig.camera_height_m - size / 2.0  # resting on the ground plane
        if rng.random() < 0.3:
            y -= float(rng.uniform(0.0, 0.8))
        albedo = tuple(float(a) for a in rng.uniform(0.15, 0.85, size=3))
        prims.append(Primitive(kind=kind, center=(x, float(y), z), size=size, albedo=albedo))
    azimuth = float(rng.uniform(0.0, 2.0 * math.pi))
    elevation = float(rng.uniform(math.radians(35.0), math.radians(70.0)))
    direction = (
        math.cos(elevation) * math.cos(azimuth),
        -math.sin(elevation),  # y points down, so the light sits above
        math.cos(elevation) * math.sin(azimuth),
    )
    light = SceneLight(
        direction=direction,
        ambient=float(rng.uniform(0.25, 0.4)),
        diffuse=float(rng.uniform(0.45, 0.65)),
    )
    scene = SceneSpec(
        seed=seed,
        primitives=tuple(prims),
        ground_plane_height=rig.camera_height_m,
        light=light,
    )
    scene.validate()
    return scene


# ---------------------------------------------------------------------------
# Ray casting


def cast_rays(
    scene: SceneSpec,
    rig: CameraRig,
    origin_x: float,
    us: np.ndarray,
    vs: np.ndarray,
    ground_plane: bool = True,
    far_wall_m: Optional[float] = FAR_WALL_M,
) -> dict:
    """Intersect pinhole rays through pixel coordinates (us, vs) with the scene.

    Rays use unnormalized directions with dz = 1, so the ray parameter t is
    the camera-frame depth z directly. Returns per-ray depth, hit point,
    outward normal, base albedo, and an object id (primitive index, -1 for
    the ground plane, -2 for the far wall).
    """
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    dx = (us - rig.cx) / rig.focal_px
    dy = (vs - rig.cy) / rig.focal_px
    dz = np.ones_like(dx)
    d = np.stack([dx, dy, dz], axis=-1)
    o = np.array([origin_x, 0.0, 0.0], dtype=np.float64)

    best_t = np.full(us.shape, np.inf)
    obj_id = np.full(us.shape, -3, dtype=np.int64)

    for idx, prim in enumerate(scene.primitives):
        c = np.asarray(prim.center, dtype=np.float64)
        if prim.kind == "sphere":
            r = prim.size / 2.0
            oc = o - c
            a = (d * d).sum(-1)
            b = 2.0 * (d * oc).sum(-1)
            cc = (oc * oc).sum(-1) - r * r
            disc = b * b - 4.0 * a * cc
            hit = disc >= 0.0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t = (-b - sq) / (2.0 * a)
            hit &= t > 1e-9
        elif prim.kind == "box":
            h = prim.size / 2.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (c - h - o) / d
                t2 = (c + h - o) / d
            near = np.minimum(t1, t2).max(-1)
            far = np.maximum(t1, t2).min(-1)
            hit = (far >= near) & (near > 1e-9)
            t = near
        else:
            raise ValueError(f"unknown primitive kind {prim.kind!r}")
        closer = hit & (t < best_t)
        best_t = np.where(closer, t, best_t)
        obj_id = np.where(closer, idx, obj_id)

    if ground_plane:
        going_down = d[..., 1] > 1e-12
        t = np.where(going_down, (scene.ground_plane_height - o[1]) / np.where(going_down, d[..., 1], 1.0), np.inf)
        closer = (t > 1e-9) & (t < best_t)
        best_t = np.where(closer, t, best_t)
        obj_id = np.where(closer, -1, obj_id)

    if far_wall_m is not None:
        closer = far_wall_m < best_t
        best_t = np.where(closer, far_wall_m, best_t)
        obj_id = np.where(closer, -2, obj_id)

    if np.any(np.isinf(best_t)):
        raise ConfigurationError(
            "some rays hit nothing; enable the ground plane or the far wall"
        )

    point = o + best_t[..., None] * d

    normal = np.zeros(us.shape + (3,), dtype=np.float64)
    albedo = np.zeros(us.shape + (3,), dtype=np.float64)
    normal[obj_id == -1] = (0.0, -1.0, 0.0)
    albedo[obj_id == -1] = GROUND_ALBEDO
    normal[obj_id == -2] = (0.0, 0.0, -1.0)
    albedo[obj_id == -2] = WALL_ALBEDO
    for idx, prim in enumerate(scene.primitives):
        sel = obj_id == idx
        if not np.any(sel):
            continue
        c = np.asarray(prim.center, dtype=np.float64)
        if prim.kind == "sphere":
            n = point[sel] - c
            n /= np.linalg.norm(n, axis=-1, keepdims=True)
        else:
            rel = (point[sel] - c) / (prim.size / 2.0)
            axis = np.argmax(np.abs(rel), axis=-1)
            n = np.zeros_like(rel)
            n[np.arange(len(n)), axis] = np.sign(rel[np.arange(len(rel)), axis])
        normal[sel] = n
        albedo[sel] = prim.albedo

    return {"depth": best_t, "point": point, "normal": normal,
            "albedo": albedo, "obj_id": obj_id}


def _rotate_azimuth(direction: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate a direction about the vertical (y) axis."""
    a = math.radians(degrees)
    x, y, z = direction
    return np.array([x * math.cos(a) - z * math.sin(a), y,
                     x * math.sin(a) + z * math.cos(a)])


def _lambert(normal: np.ndarray, albedo: np.ndarray, light_dir: np.ndarray,
             ambient: float, diffuse: float) -> np.ndarray:
    ndotl = np.clip((normal * light_dir).sum(-1), 0.0, None)
    return albedo * (ambient + diffuse * ndotl)[..., None]


def render_stereo(
    scene: SceneSpec,
    rig: CameraRig,
    style: str,
    style_params: Optional[StyleParams] = None,
    scene_id: Optional[int] = None,
    ground_plane: bool = True,
    far_wall_m: Optional[float] = FAR_WALL_M,
) -> DomainSample:
    """Ray-cast the scene from both stereo eyes in the requested style.

    Ground-truth depth is the left camera's per-pixel z of the first hit,
    computed before any styling, so it is identical across styles.
    """
    if style not in DOMAINS:
        raise ValueError(f"style must be one of {DOMAINS}, got {style!r}")
    params = style_params if style_params is not None else StyleParams()
    uu, vv = np.meshgrid(np.arange(rig.width), np.arange(rig.height))

    rng = np.random.default_rng([scene.seed, 1 if style == REAL_PROXY else 0])
    if style == REAL_PROXY:
        gamma = float(rng.uniform(*params.gamma_range))
        azimuth_shift = params.light_azimuth_shift_deg + float(
            rng.uniform(-params.light_jitter_deg, params.light_jitter_deg)
        )
        light_dir = _rotate_azimuth(np.asarray(scene.light.direction), azimuth_shift)
        ambient = scene.light.ambient * params.ambient_scale
        diffuse = scene.light.diffuse * params.diffuse_scale
    else:
        light_dir = np.asarray(scene.light.direction, dtype=np.float64)
        ambient, diffuse = scene.light.ambient, scene.light.diffuse

    images = []
    depth_left = None
    for origin_x in (0.0, rig.baseline_m):
        hits = cast_rays(scene, rig, origin_x, uu, vv,
                         ground_plane=ground_plane, far_wall_m=far_wall_m)
        if origin_x == 0.0:
            depth_left = hits["depth"].astype(np.float32)
        albedo = hits["albedo"]
        if style == REAL_PROXY:
            albedo = albedo * texture_field(hits["point"], scene.seed, params)[..., None]
        img = _lambert(hits["normal"], albedo, light_dir, ambient, diffuse)
        if style == REAL_PROXY:
            img = np.power(np.clip(img, 0.0, None), gamma)
            img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))

    return DomainSample(
        left=images[0],
        right=images[1],
        gt_depth=depth_left,
        domain=style,
        scene_id=scene.seed if scene_id is None else scene_id,
    )


# ---------------------------------------------------------------------------
# Face-like surfaces


def normals_from_gradients(zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
    """Unit normals of a height field from its analytic gradients (z toward camera)."""
    normals = np.stack([-zx, -zy, np.ones_like(zx)], axis=-1)
    return normals / np.linalg.norm(normals, axis=-1, keepdims=True)


def render_face_like(
    seed: int,
    sh_light: np.ndarray,
    resolution: int,
    texture_amp: float = 0.0,
    texture_freq: float = 9.0,
    flat_albedo: bool = False,
    noise_sigma: float = 0.005,
    domain: str = SYNTHETIC,
    scene_id: Optional[int] = None,
) -> FaceSample:
    """Render a blobby height field with analytic normals under SH lighting.

    image = albedo * shading + Gaussian noise, clipped to [0, 1]; the light
    is rescaled (deterministically) if the noiseless image would exceed 1,
    so re-shading the stored decomposition always reproduces the image
    within the noise bound.
    """
    if resolution < 32:
        raise ValueError("resolution must be at least 32")
    from .sfs import shade  # local import; sfs does not depend on datagen

    rng = np.random.default_rng([seed, 2])
    r = resolution
    ys, xs = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    qx = (xs + 0.5) / r * 2.0 - 1.0
    qy = (ys + 0.5) / r * 2.0 - 1.0

    # Height field: one broad dome plus a few random Gaussian blobs.
    blobs = [(0.8, 0.0, 0.0, 0.7)]
    for _ in range(int(rng.integers(4, 8))):
        blobs.append((
            float(rng.uniform(-0.35, 0.6)),
            float(rng.uniform(-0.6, 0.6)),
            float(rng.uniform(-0.6, 0.6)),
            float(rng.uniform(0.25, 0.6)),
        ))
    zx = np.zeros_like(qx)
    zy = np.zeros_like(qx)
    for amp, cx, cy, sigma in blobs:
        g = amp * np.exp(-((qx - cx) ** 2 + (qy - cy) ** 2) / (2.0 * sigma ** 2))
        zx += g * (-(qx - cx) / sigma ** 2)
        zy += g * (-(qy - cy) / sigma ** 2)
    normals = normals_from_gradients(zx, zy)

    mask = (qx / 0.85) ** 2 + (qy / 0.95) ** 2 <= 1.0

    if flat_albedo:
        albedo = np.ones((r, r, 3), dtype=np.float64)
    else:
        base = rng.uniform(0.3, 0.8, size=3)
        pts = np.stack([qx, qy, np.zeros_like(qx)], axis=-1)
        low = value_noise3(pts * 2.3, seed * 7 + 3)
        albedo = base[None, None, :] * (1.0 + 0.3 * (2.0 * low - 1.0))[..., None]
        if texture_amp > 0.0:
            high = value_noise3(pts * texture_freq, seed * 7 + 11)
            albedo = albedo * (1.0 + texture_amp * (2.0 * high - 1.0))[..., None]
        albedo = np.clip(albedo, 0.05, 0.95)

    light = np.asarray(sh_light, dtype=np.float64).reshape(27).copy()
    shading_img = shade(normals, albedo, light)
    peak = float(shading_img[mask].max()) if mask.any() else 1.0
    if peak > 1.0:
        light /= peak
        shading_img /= peak

    image = np.where(mask[..., None], shading_img, 0.0)
    # Noise is truncated at 3 sigma: the declared bound is hard, so
    # re-shading the stored decomposition always lands within it.
    noise = rng.normal(0.0, noise_sigma, size=image.shape)
    noise = np.clip(noise, -3.0 * noise_sigma, 3.0 * noise_sigma)
    image = np.clip(image + noise * mask[..., None], 0.0, 1.0)

    normals = np.where(mask[..., None], normals, (0.0, 0.0, 1.0))
    albedo = np.where(mask[..., None], albedo, 0.0)
    return FaceSample(
        image=image.astype(np.float32),
        normal_map=normals.astype(np.float32),
        albedo_map=albedo.astype(np.float32),
        sh_light=light.astype(np.float32),
        mask=mask,
        domain=domain,
        scene_id=seed if scene_id is None else scene_id,
    )


def sample_face_light(rng: np.random.Generator, style: FaceStyleParams) -> np.ndarray:
    """Draw 27 SH coefficients from a domain's lighting distribution."""
    elev = math.radians(float(rng.uniform(*style.elevation_range_deg)))
    azim = float(rng.uniform(0.0, 2.0 * math.pi))
    ldir = np.array([
        math.cos(elev) * math.cos(azim),
        math.cos(elev) * math.sin(azim),
        math.sin(elev),
    ])
    dc = float(rng.uniform(*style.dc_range))
    strength = float(rng.uniform(*style.directional_range))
    coeffs = np.zeros((3, 9))
    for ch in range(3):
        tint = float(rng.uniform(*style.tint_range))
        quad = rng.normal(0.0, style.quad_sigma, size=5)
        quad = np.clip(quad, -3.0 * style.quad_sigma, 3.0 * style.quad_sigma)
        # Basis order is [1, ny, nz, nx, ...]: linear terms encode a
        # Lambertian-like directional component strength * (n . ldir).
        coeffs[ch, 0] = dc * tint
        coeffs[ch, 1] = strength * ldir[1] * tint
        coeffs[ch, 2] = strength * ldir[2] * tint
        coeffs[ch, 3] = strength * ldir[0] * tint
        coeffs[ch, 4:9] = quad * tint
    return coeffs.reshape(27)


# ---------------------------------------------------------------------------
# On-disk format


def write_f32(path: Union[str, Path], array: np.ndarray) -> None:
    """Self-describing little-endian float32 blob: magic, ndim, dims, data."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(b"F32\x01")
            fh.write(np.uint32(arr.ndim).astype("<u4").tobytes())
            fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
            fh.write(arr.tobytes())
    except OSError as exc:
        raise DataIOError(f"failed to write {path}: {exc}") from exc


def read_f32(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"failed to read {path}: {exc}") from exc
    if raw[:4] != b"F32\x01":
        raise DataIOError(f"{path} is not a valid f32 blob (bad magic)")
    ndim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    shape = tuple(np.frombuffer(raw, dtype="<u4", count=ndim, offset=8).tolist())
    data = np.frombuffer(raw, dtype="<f4", offset=8 + 4 * ndim)
    if data.size != int(np.prod(shape)):
        raise DataIOError(f"{path} is truncated")
    return data.reshape(shape).copy()


def write_png(path: Union[str, Path], image: np.ndarray) -> None:
    """Save a float image in [0, 1] (or a boolean mask) as 8-bit PNG."""
    if image.dtype == bool:
        arr = image.astype(np.uint8) * 255
    else:
        arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr).save(Path(path))
    except OSError as exc:
        raise DataIOError(f"failed to write {path}: {exc}") from exc


def read_png(path: Union[str, Path]) -> np.ndarray:
    try:
        with Image.open(Path(path)) as img:
            arr = np.asarray(img)
    except OSError as exc:
        raise DataIOError(f"failed to read {path}: {exc}") from exc
    return arr.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Dataset build / manifest


@dataclass
class DatasetConfig:
    root: str
    kind: str = "stereo"  # "stereo" | "face"
    train_per_domain: int = 8
    val_per_domain: int = 2
    test_per_domain: int = 2
    seed: int = 0
    rig: CameraRig = field(default_factory=CameraRig)
    style: StyleParams = field(default_factory=StyleParams)
    face_resolution: int = 64
    face_styles: dict = field(default_factory=lambda: {
        SYNTHETIC: FaceStyleParams(),
        REAL_PROXY: FaceStyleParams(
            albedo_texture_amp=0.4,
            dc_range=(0.52, 0.7),
            directional_range=(0.15, 0.25),
            elevation_range_deg=(10.0, 45.0),
            tint_range=(0.85, 1.15),
        ),
    })
    overwrite: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("stereo", "face"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if min(self.train_per_domain, self.val_per_domain, self.test_per_domain) < 1:
            raise ConfigurationError("split sizes must be at least 1")


@dataclass(frozen=True)
class ManifestEntry:
    scene_id: int
    domain: str
    split: str
    seed: int


@dataclass
class DatasetManifest:
    root_path: str
    kind: str
    split_sizes: dict  # domain -> {split: count}
    rig: CameraRig
    style_params: dict  # domain -> style dict
    entries: tuple
    seed: int
    face_resolution: int = 64
    format_version: int = FORMAT_VERSION

    def entries_for(self, domain: str, split: str) -> list:
        return [e for e in self.entries if e.domain == domain and e.split == split]

    def to_json(self) -> str:
        d = {
            "root_path": self.root_path,
            "kind": self.kind,
            "split_sizes": self.split_sizes,
            "rig": asdict(self.rig),
            "style_params": self.style_params,
            "entries": [asdict(e) for e in self.entries],
            "seed": self.seed,
            "face_resolution": self.face_resolution,
            "format_version": self.format_version,
        }
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(
            root_path=d["root_path"],
            kind=d["kind"],
            split_sizes=d["split_sizes"],
            rig=CameraRig(**d["rig"]),
            style_params=d["style_params"],
            entries=tuple(ManifestEntry(**e) for e in d["entries"]),
            seed=d["seed"],
            face_resolution=d.get("face_resolution", 64),
            format_version=d["format_version"],
        )

    def validate(self, root: Optional[Union[str, Path]] = None) -> None:
        seen = {}
        for e in self.entries:
            if e.scene_id in seen and seen[e.scene_id] != e.split:
                raise ConfigurationError(
                    f"scene_id {e.scene_id} appears in splits {seen[e.scene_id]} and {e.split}"
                )
            seen[e.scene_id] = e.split
        if root is not None:
            root = Path(root)
            for e in self.entries:
                for path in sample_paths(root, self.kind, e).values():
                    if not path.exists():
                        raise DataIOError(f"manifest lists missing file {path}")


def sample_paths(root: Path, kind: str, entry: ManifestEntry) -> dict:
    base = Path(root) / entry.domain / entry.split
    sid = entry.scene_id
    if kind == "stereo":
        return {
            "left": base / f"{sid}_left.png",
            "right": base / f"{sid}_right.png",
            "depth": base / f"{sid}_depth.f32",
        }
    return {
        "image": base / f"{sid}_face.png",
        "normal": base / f"{sid}_normal.f32",
        "albedo": base / f"{sid}_albedo.f32",
        "light": base / f"{sid}_light.f32",
        "mask": base / f"{sid}_mask.png",
    }


def build_dataset(config: DatasetConfig) -> DatasetManifest:
    """Render and persist every sample; rebuilds are byte-identical."""
    root = Path(config.root)
    manifest_path = root / "manifest.json"
    if manifest_path.exists() and not config.overwrite:
        raise DataIOError(
            f"refusing to overwrite existing dataset at {root} (pass overwrite/--force)"
        )
    sizes = {"train": config.train_per_domain, "val": config.val_per_domain,
             "test": config.test_per_domain}

    entries = []
    next_id = 0
    for domain in DOMAINS:
        for split in SPLITS:
            for _ in range(sizes[split]):
                entries.append(ManifestEntry(
                    scene_id=next_id, domain=domain, split=split,
                    seed=config.seed + next_id,
                ))
                next_id += 1

    if config.kind == "stereo":
        style_params = {SYNTHETIC: {}, REAL_PROXY: asdict(config.style)}
    else:
        style_params = {d: asdict(s) for d, s in config.face_styles.items()}
    # Normalize through JSON so the in-memory manifest equals its reload
    # (tuples become lists either way).
    style_params = json.loads(json.dumps(style_params))

    manifest = DatasetManifest(
        root_path=str(root),
        kind=config.kind,
        split_sizes={d: dict(sizes) for d in DOMAINS},
        rig=config.rig,
        style_params=style_params,
        entries=tuple(entries),
        seed=config.seed,
        face_resolution=config.face_resolution,
    )
    manifest.validate()

    for entry in entries:
        paths = sample_paths(root, config.kind, entry)
        try:
            next(iter(paths.values())).parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataIOError(f"cannot create dataset directory under {root}: {exc}") from exc
        if config.kind == "stereo":
            scene = generate_scene(entry.seed, config.rig)
            sample = render_stereo(scene, config.rig, entry.domain,
                                   style_params=config.style, scene_id=entry.scene_id)
            write_png(paths["left"], sample.left)
            write_png(paths["right"], sample.right)
            write_f32(paths["depth"], sample.eval_gt_depth())
        else:
            face_style = config.face_styles[entry.domain]
            light_rng = np.random.default_rng([config.seed, entry.scene_id, 3])
            light = sample_face_light(light_rng, face_style)
            sample = render_face_like(
                entry.seed, light, config.face_resolution,
                texture_amp=face_style.albedo_texture_amp,
                texture_freq=face_style.albedo_texture_freq,
                noise_sigma=face_style.noise_sigma,
                domain=entry.domain, scene_id=entry.scene_id,
            )
            write_png(paths["image"], sample.image)
            write_f32(paths["normal"], sample.eval_labels()[0])
            write_f32(paths["albedo"], sample.eval_labels()[1])
            write_f32(paths["light"], sample.eval_labels()[2])
            write_png(paths["mask"], sample.mask)

    try:
        manifest_path.write_text(manifest.to_json())
    except OSError as exc:
        raise DataIOError(f"failed to write {manifest_path}: {exc}") from exc
    return manifest


def load_manifest(root: Union[str, Path]) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"failed to read {path}: {exc}") from exc
    return DatasetManifest.from_json(text)


def load_sample(
    root: Union[str, Path],
    manifest: DatasetManifest,
    entry: ManifestEntry,
    for_training: bool = False,
):
    """Load one sample from disk; training loads guard real_proxy labels."""
    paths = sample_paths(Path(root), manifest.kind, entry)
    eval_only = for_training and entry.domain == REAL_PROXY
    if manifest.kind == "stereo":
        return DomainSample(
            left=read_png(paths["left"]),
            right=read_png(paths["right"]),
            gt_depth=read_f32(paths["depth"]),
            domain=entry.domain,
            scene_id=entry.scene_id,
            gt_depth_eval_only=eval_only,
        )
    return FaceSample(
        image=read_png(paths["image"]),
        normal_map=read_f32(paths["normal"]),
        albedo_map=read_f32(paths["albedo"]),
        sh_light=read_f32(paths["light"]),
        mask=read_png(paths["mask"]) > 0.5,
        domain=entry.domain,
        scene_id=entry.scene_id,
        labels_eval_only=eval_only,
    )
