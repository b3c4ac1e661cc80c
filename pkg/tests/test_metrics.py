import json
import math

import numpy as np
import pytest

from sharedspace.metrics import (
    DepthReport,
    NormalReport,
    compare_runs,
    depth_metrics,
    normal_metrics,
    report_from_json,
    report_to_json,
)

from oracles import depth_metrics_loop, normal_metrics_loop


class TestDepthMetrics:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(1.0, 50.0, size=(8, 8))
        rep = depth_metrics(gt, gt, cap_m=80.0)
        assert rep.abs_rel == 0.0 and rep.sq_rel == 0.0
        assert rep.rmse == 0.0 and rep.rmse_log == 0.0
        assert rep.acc_1 == rep.acc_2 == rep.acc_3 == 1.0

    def test_single_pixel_hand_oracle(self):
        rep = depth_metrics(np.array([[2.0]]), np.array([[1.0]]), cap_m=80.0, min_m=1e-3)
        assert rep.abs_rel == 1.0
        assert rep.sq_rel == 1.0
        assert rep.rmse == 1.0
        assert rep.rmse_log == pytest.approx(math.log(2.0), abs=1e-15)
        assert rep.acc_1 == rep.acc_2 == rep.acc_3 == 0.0  # ratio 2 > 1.25^3

    def test_cap_excludes_pixels(self):
        pred = np.array([[10.0, 10.0]])
        gt = np.array([[100.0, 10.0]])
        rep = depth_metrics(pred, gt, cap_m=80.0)
        assert rep.n_pixels == 1
        assert rep.abs_rel == 0.0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            depth_metrics(np.ones((2, 2)), np.full((2, 2), 100.0), cap_m=80.0)

    def test_scale_sensitivity(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(2.0, 20.0, size=(6, 6))  # well below the cap
        for s in (1.1, 1.5, 2.0):
            rep = depth_metrics(s * gt, gt, cap_m=80.0)
            assert rep.abs_rel == pytest.approx(s - 1.0, rel=1e-12)

    def test_delta_thresholds_are_strict(self):
        # Ratios 1.25, 1.25^2, 1.25^3 are exactly representable.
        gt = np.ones((1, 3))
        pred = np.array([[1.25, 1.25 ** 2, 1.25 ** 3]])
        rep = depth_metrics(pred, gt, cap_m=80.0)
        assert rep.acc_1 == 0.0  # the pixel at exactly 1.25 is excluded
        assert rep.acc_2 == pytest.approx(1 / 3)
        assert rep.acc_3 == pytest.approx(2 / 3)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gt = rng.uniform(1.0, 60.0, size=(5, 5))
            pred = gt * rng.uniform(0.5, 2.0, size=(5, 5))
            rep = depth_metrics(pred, gt, cap_m=80.0)
            assert rep.acc_1 <= rep.acc_2 <= rep.acc_3

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            h = int(rng.integers(1, 3))
            w = int(rng.integers(1, 3))
            gt = rng.uniform(0.5, 100.0, size=(h, w))
            pred = rng.uniform(0.5, 100.0, size=(h, w))
            cap = float(rng.choice([50.0, 80.0]))
            if not np.any((gt >= 1e-3) & (gt <= cap)):
                continue
            rep = depth_metrics(pred, gt, cap_m=cap, min_m=1e-3)
            want = depth_metrics_loop(pred, gt, cap_m=cap, min_m=1e-3)
            for key, val in want.items():
                assert getattr(rep, key) == val, key


class TestNormalMetrics:
    @staticmethod
    def rand_normals(rng, shape):
        n = rng.normal(size=shape + (3,))
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def test_perfect_prediction_exact_normals(self):
        gt = np.zeros((4, 4, 3))
        gt[..., 2] = 1.0  # dot products are exactly 1
        rep = normal_metrics(gt, gt, np.ones((4, 4), dtype=bool))
        assert rep.mae_deg == 0.0
        assert rep.acc_20 == rep.acc_25 == rep.acc_30 == 1.0

    def test_perfect_prediction_random_normals(self):
        rng = np.random.default_rng(4)
        gt = self.rand_normals(rng, (4, 4))
        rep = normal_metrics(gt, gt, np.ones((4, 4), dtype=bool))
        assert rep.mae_deg <= 1e-5  # arccos noise on re-normalized vectors
        assert rep.acc_20 == rep.acc_25 == rep.acc_30 == 1.0

    def test_thirty_degree_rotation(self):
        # No float dot recovers exactly 30 deg; construct the closest angle
        # that is >= 30 so the strict threshold must exclude it.
        dot = math.cos(math.radians(30.0))
        while float(np.degrees(np.arccos(dot))) < 30.0:
            dot = np.nextafter(dot, -2.0)
        sin = math.sqrt(1.0 - dot * dot)
        gt = np.zeros((3, 3, 3))
        gt[..., 2] = 1.0
        pred = np.zeros_like(gt)
        pred[..., 1] = sin
        pred[..., 2] = dot
        rep = normal_metrics(pred, gt, np.ones((3, 3), dtype=bool))
        assert rep.mae_deg == pytest.approx(30.0, abs=1e-9)
        assert rep.acc_20 == 0.0 and rep.acc_25 == 0.0
        assert rep.acc_30 == 0.0  # strict inequality at the threshold

    def test_antipodal(self):
        gt = np.zeros((2, 2, 3))
        gt[..., 2] = 1.0
        rep = normal_metrics(-gt, gt, np.ones((2, 2), dtype=bool))
        assert rep.mae_deg == pytest.approx(180.0, abs=1e-12)

    def test_empty_mask_rejected(self):
        gt = np.zeros((2, 2, 3))
        gt[..., 2] = 1.0
        with pytest.raises(ValueError):
            normal_metrics(gt, gt, np.zeros((2, 2), dtype=bool))

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            h = int(rng.integers(1, 3))
            w = int(rng.integers(1, 3))
            gt = self.rand_normals(rng, (h, w))
            pred = self.rand_normals(rng, (h, w))
            mask = rng.random((h, w)) < 0.8
            if not mask.any():
                continue
            rep = normal_metrics(pred, gt, mask)
            want = normal_metrics_loop(pred, gt, mask)
            for key, val in want.items():
                assert getattr(rep, key) == val, key


class TestCompareRuns:
    def make_depth_report(self, abs_rel, cap=80.0):
        return DepthReport(abs_rel=abs_rel, sq_rel=1.0, rmse=5.0, rmse_log=0.3,
                           acc_1=0.7, acc_2=0.9, acc_3=0.95, cap_m=cap, n_pixels=100)

    def test_identical_reports_zero_delta(self):
        rep = self.make_depth_report(0.2)
        deltas = compare_runs(rep, rep)
        assert all(v["diff"] == 0.0 for v in deltas.values())

    def test_baseline_improvement_percent(self):
        base = self.make_depth_report(0.253)
        ours = self.make_depth_report(0.116)
        deltas = compare_runs(base, ours)
        assert deltas["abs_rel"]["pct_change"] == pytest.approx(-54.15, abs=0.05)

    def test_zero_baseline_reports_absolute_only(self):
        a = self.make_depth_report(0.0)
        b = self.make_depth_report(0.1)
        deltas = compare_runs(a, b)
        assert deltas["abs_rel"]["pct_change"] is None
        assert deltas["abs_rel"]["diff"] == pytest.approx(0.1)

    def test_family_mismatch_rejected(self):
        depth = self.make_depth_report(0.2)
        normals = NormalReport(mae_deg=20.0, acc_20=0.5, acc_25=0.6, acc_30=0.7, n_pixels=10)
        with pytest.raises(ValueError):
            compare_runs(depth, normals)

    def test_cap_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compare_runs(self.make_depth_report(0.2, cap=80.0),
                         self.make_depth_report(0.2, cap=50.0))


class TestReportSerialization:
    def test_depth_json_field_names(self):
        rep = depth_metrics(np.array([[2.0]]), np.array([[1.0]]), cap_m=80.0)
        d = json.loads(report_to_json(rep))
        assert set(d) >= {"abs_rel", "sq_rel", "rmse", "rmse_log",
                          "acc_1.25", "acc_1.25^2", "acc_1.25^3", "cap_m", "n_pixels"}

    def test_round_trip(self):
        rep = depth_metrics(np.array([[2.0, 3.0]]), np.array([[1.0, 3.5]]), cap_m=50.0)
        back = report_from_json(report_to_json(rep))
        assert back == rep

    def test_normal_round_trip(self):
        gt = np.zeros((2, 2, 3))
        gt[..., 2] = 1.0
        rep = normal_metrics(gt, gt, np.ones((2, 2), dtype=bool))
        back = report_from_json(report_to_json(rep))
        assert back == rep
