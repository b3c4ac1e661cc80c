import numpy as np
import pytest

from sharedspace.datagen import (
    FAR_WALL_M,
    REAL_PROXY,
    SYNTHETIC,
    CameraRig,
    DatasetConfig,
    DatasetManifest,
    Primitive,
    SceneLight,
    SceneSpec,
    StyleParams,
    build_dataset,
    cast_rays,
    generate_scene,
    load_manifest,
    load_sample,
    normals_from_gradients,
    read_f32,
    read_png,
    render_face_like,
    render_stereo,
    sample_face_light,
    sample_paths,
    value_noise3,
    write_f32,
    write_png,
)
from sharedspace.exceptions import ConfigurationError, DataIOError, EvalOnlyDepthError
from sharedspace.sfs import shade


RIG = CameraRig()  # 192x64, focal 100, baseline 0.54


def odd_rig():
    # Odd dimensions put a pixel exactly on the optical axis.
    return CameraRig(focal_px=30.0, baseline_m=0.5, width=33, height=33)


def one_sphere_scene(z=10.0, size=2.0):
    return SceneSpec(
        seed=0,
        primitives=(Primitive(kind="sphere", center=(0.0, 0.0, z), size=size,
                              albedo=(0.5, 0.5, 0.5)),),
        ground_plane_height=1.5,
        light=SceneLight(direction=(0.0, -1.0, 0.0), ambient=0.3, diffuse=0.6),
    )


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(7, RIG)
        b = generate_scene(7, RIG)
        assert a == b

    def test_primitive_count_invariant(self):
        scene = generate_scene(0, RIG)
        assert 3 <= len(scene.primitives) <= 8

    def test_count_varies_across_seeds(self):
        counts = {len(generate_scene(seed, RIG).primitives) for seed in range(100)}
        assert len(counts) >= 2

    def test_invariants_over_many_seeds(self):
        for seed in range(50):
            scene = generate_scene(seed, RIG)
            scene.validate()
            for prim in scene.primitives:
                assert 3.0 <= prim.center[2] <= 40.0

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(-1, RIG)


class TestRenderStereo:
    def test_on_axis_sphere_depth_exact(self):
        rig = odd_rig()
        scene = one_sphere_scene(z=10.0, size=2.0)
        sample = render_stereo(scene, rig, SYNTHETIC)
        center = sample.gt_depth[rig.height // 2, rig.width // 2]
        assert center == 9.0  # 10 - radius, exact quadratic

    def test_style_changes_appearance_not_geometry(self):
        scene = generate_scene(11, RIG)
        syn = render_stereo(scene, RIG, SYNTHETIC)
        real = render_stereo(scene, RIG, REAL_PROXY)
        assert np.array_equal(syn.gt_depth, real.gt_depth)
        assert not np.array_equal(syn.left, real.left)

    def test_images_finite_and_in_unit_range(self):
        scene = generate_scene(12, RIG)
        for style in (SYNTHETIC, REAL_PROXY):
            s = render_stereo(scene, RIG, style)
            for img in (s.left, s.right):
                assert np.isfinite(img).all()
                assert img.min() >= 0.0 and img.max() <= 1.0
            assert np.isfinite(s.gt_depth).all() and (s.gt_depth > 0).all()

    def test_render_deterministic(self):
        scene = generate_scene(13, RIG)
        a = render_stereo(scene, RIG, REAL_PROXY)
        b = render_stereo(scene, RIG, REAL_PROXY)
        assert np.array_equal(a.left, b.left)
        assert np.array_equal(a.right, b.right)
        assert np.array_equal(a.gt_depth, b.gt_depth)

    def test_no_background_raises_for_sky_rays(self):
        scene = one_sphere_scene()
        with pytest.raises(ConfigurationError):
            render_stereo(scene, odd_rig(), SYNTHETIC, ground_plane=False, far_wall_m=None)

    def test_stereo_correspondence_against_raycaster(self):
        """Pixels shifted by focal*baseline/depth see the same surface point."""
        rng = np.random.default_rng(0)
        scene = generate_scene(21, RIG)
        sample = render_stereo(scene, RIG, SYNTHETIC)
        us = rng.integers(0, RIG.width, size=100)
        vs = rng.integers(0, RIG.height, size=100)
        left_hits = cast_rays(scene, RIG, 0.0, us.astype(float), vs.astype(float))

        # Duality: projecting the left hit point into the right camera shifts
        # it horizontally by exactly focal*baseline/depth.
        p = left_hits["point"]
        u_right = RIG.cx + RIG.focal_px * (p[:, 0] - RIG.baseline_m) / p[:, 2]
        shift = us - u_right
        disparity = RIG.focal_px * RIG.baseline_m / sample.gt_depth[vs, us].astype(np.float64)
        assert np.abs(shift - disparity).max() < 1e-4

        # Casting the right camera at the shifted coordinate lands on the
        # same surface point unless a nearer object occludes it.
        right_hits = cast_rays(scene, RIG, RIG.baseline_m, u_right, vs.astype(float))
        same = np.linalg.norm(right_hits["point"] - p, axis=-1) < 1e-6
        occluded = right_hits["depth"] < p[:, 2] - 1e-6
        assert np.all(same | occluded)
        assert same.mean() > 0.7  # occlusion is the exception, not the rule

    def test_depth_below_far_wall(self):
        scene = generate_scene(22, RIG)
        sample = render_stereo(scene, RIG, SYNTHETIC)
        assert sample.gt_depth.max() <= FAR_WALL_M + 1e-6


class TestFaceRenderer:
    def test_dc_light_flat_albedo_renders_ones(self):
        light = np.zeros(27)
        light[0] = light[9] = light[18] = 1.0
        face = render_face_like(5, light, 64, flat_albedo=True)
        inside = face.image[face.mask]
        assert np.abs(inside - 1.0).max() <= 3 * 0.005 + 1e-6

    def test_deterministic(self):
        light = sample_face_light(np.random.default_rng(1), __import__(
            "sharedspace.datagen", fromlist=["FaceStyleParams"]).FaceStyleParams())
        a = render_face_like(6, light, 64)
        b = render_face_like(6, light, 64)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.normal_map, b.normal_map)
        assert np.array_equal(a.albedo_map, b.albedo_map)
        assert np.array_equal(a.sh_light, b.sh_light)

    def test_plane_height_field_normals(self):
        a, b = 0.7, -0.4
        zx = np.full((8, 8), a)
        zy = np.full((8, 8), b)
        normals = normals_from_gradients(zx, zy)
        expected = np.array([-a, -b, 1.0]) / np.sqrt(a * a + b * b + 1.0)
        assert np.abs(normals - expected).max() < 1e-6

    def test_normals_unit_inside_mask(self):
        light = np.zeros(27)
        light[0] = light[9] = light[18] = 0.7
        face = render_face_like(7, light, 64)
        norms = np.linalg.norm(face.normal_map[face.mask], axis=-1)
        assert np.abs(norms - 1.0).max() <= 1e-4

    def test_reshading_reproduces_image_within_noise(self):
        rng = np.random.default_rng(2)
        from sharedspace.datagen import FaceStyleParams
        style = FaceStyleParams()
        light = sample_face_light(rng, style)
        face = render_face_like(8, light, 64, noise_sigma=style.noise_sigma)
        reshaded = shade(face.normal_map.astype(np.float64),
                         face.albedo_map.astype(np.float64),
                         face.sh_light.astype(np.float64))
        diff = np.abs(reshaded - face.image)[face.mask]
        # noise is truncated at 3 sigma; small float32 storage slack
        assert diff.max() <= 3 * style.noise_sigma + 1e-6

    def test_resolution_precondition(self):
        with pytest.raises(ValueError):
            render_face_like(0, np.zeros(27), 16)


class TestNoise:
    def test_value_noise_deterministic_and_bounded(self):
        pts = np.random.default_rng(3).uniform(-10, 10, size=(100, 3))
        a = value_noise3(pts, seed=42)
        b = value_noise3(pts, seed=42)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_seed_changes_field(self):
        pts = np.random.default_rng(4).uniform(-10, 10, size=(100, 3))
        assert not np.array_equal(value_noise3(pts, 1), value_noise3(pts, 2))


class TestBlobIO:
    def test_f32_round_trip(self, tmp_path):
        arr = np.random.default_rng(5).random((7, 5, 3)).astype(np.float32)
        path = tmp_path / "x.f32"
        write_f32(path, arr)
        back = read_f32(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)

    def test_png_round_trip_quantized(self, tmp_path):
        img = np.random.default_rng(6).random((8, 8, 3)).astype(np.float32)
        path = tmp_path / "x.png"
        write_png(path, img)
        back = read_png(path)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.f32"
        path.write_bytes(b"nope")
        with pytest.raises(DataIOError):
            read_f32(path)


def small_config(tmp_path, **kw):
    rig = CameraRig(focal_px=25.0, baseline_m=0.54, width=48, height=16)
    defaults = dict(root=str(tmp_path / "data"), kind="stereo",
                    train_per_domain=8, val_per_domain=2, test_per_domain=2,
                    seed=100, rig=rig)
    defaults.update(kw)
    return DatasetConfig(**defaults)


class TestBuildDataset:
    def test_counts_and_manifest_round_trip(self, tmp_path):
        config = small_config(tmp_path)
        manifest = build_dataset(config)
        assert len(manifest.entries) == 24  # (8 + 2 + 2) x 2 domains
        reloaded = load_manifest(config.root)
        assert reloaded == manifest
        manifest.validate(config.root)

    def test_real_proxy_train_depth_is_eval_only(self, tmp_path):
        config = small_config(tmp_path)
        manifest = build_dataset(config)
        entry = manifest.entries_for(REAL_PROXY, "train")[0]
        sample = load_sample(config.root, manifest, entry, for_training=True)
        assert sample.right is not None
        with pytest.raises(EvalOnlyDepthError):
            _ = sample.gt_depth
        assert sample.eval_gt_depth().shape == (16, 48)
        # the same entry loaded for evaluation is unrestricted
        open_sample = load_sample(config.root, manifest, entry, for_training=False)
        assert np.array_equal(open_sample.gt_depth, sample.eval_gt_depth())

    def test_rebuild_is_byte_identical(self, tmp_path):
        config = small_config(tmp_path)
        manifest = build_dataset(config)
        entry = manifest.entries[0]
        depth_path = sample_paths(tmp_path / "data", "stereo", entry)["depth"]
        first = depth_path.read_bytes()
        build_dataset(small_config(tmp_path, overwrite=True))
        assert depth_path.read_bytes() == first

    def test_no_clobber_without_overwrite(self, tmp_path):
        build_dataset(small_config(tmp_path))
        with pytest.raises(DataIOError):
            build_dataset(small_config(tmp_path))

    def test_validate_catches_missing_file(self, tmp_path):
        config = small_config(tmp_path)
        manifest = build_dataset(config)
        path = sample_paths(tmp_path / "data", "stereo", manifest.entries[0])["left"]
        path.unlink()
        with pytest.raises(DataIOError):
            manifest.validate(config.root)

    def test_cross_split_scene_id_overlap_rejected(self, tmp_path):
        config = small_config(tmp_path)
        manifest = build_dataset(config)
        from dataclasses import replace
        bad = manifest.entries[0]
        clash = replace(bad, split="test")
        broken = DatasetManifest(
            root_path=manifest.root_path, kind=manifest.kind,
            split_sizes=manifest.split_sizes, rig=manifest.rig,
            style_params=manifest.style_params,
            entries=manifest.entries + (clash,), seed=manifest.seed,
        )
        with pytest.raises(ConfigurationError):
            broken.validate()

    def test_face_dataset_build_and_load(self, tmp_path):
        config = DatasetConfig(root=str(tmp_path / "faces"), kind="face",
                               train_per_domain=2, val_per_domain=1, test_per_domain=1,
                               seed=3, face_resolution=32)
        with pytest.raises(ValueError):
            render_face_like(0, np.zeros(27), config.face_resolution - 1)
        manifest = build_dataset(config)
        assert len(manifest.entries) == 8
        entry = manifest.entries_for(REAL_PROXY, "train")[0]
        sample = load_sample(config.root, manifest, entry, for_training=True)
        with pytest.raises(EvalOnlyDepthError):
            _ = sample.normal_map
        normals, albedo, light = sample.eval_labels()
        assert normals.shape == (32, 32, 3) and light.shape == (27,)
        syn = load_sample(config.root, manifest,
                          manifest.entries_for(SYNTHETIC, "train")[0], for_training=True)
        assert syn.normal_map.shape == (32, 32, 3)  # synthetic labels stay open
