"""Depth and surface-normal evaluation metrics.

Depth metrics follow the standard capped protocol: ground truth outside
[min_m, cap_m] is masked out, predictions are clamped into that range, and
no median scaling is applied by default (the stereo baseline fixes scale).
Threshold accuracies use strict inequalities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

# JSON keys for the delta-threshold accuracies.
_DELTA_KEYS = ("acc_1.25", "acc_1.25^2", "acc_1.25^3")


@dataclass
class DepthReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    acc_1: float  # delta < 1.25
    acc_2: float  # delta < 1.25^2
    acc_3: float  # delta < 1.25^3
    cap_m: float
    n_pixels: int

    family = "depth"

    def to_json_dict(self) -> dict:
        d = asdict(self)
        for field, key in zip(("acc_1", "acc_2", "acc_3"), _DELTA_KEYS):
            d[key] = d.pop(field)
        d["family"] = self.family
        return d


@dataclass
class NormalReport:
    mae_deg: float
    acc_20: float
    acc_25: float
    acc_30: float
    n_pixels: int

    family = "normals"

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family
        return d


EvalReport = Union[DepthReport, NormalReport]


def depth_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    cap_m: float = 80.0,
    min_m: float = 1e-3,
    median_scale: bool = False,
) -> DepthReport:
    """Capped depth error/accuracy metrics over pixels with valid ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = (gt >= min_m) & (gt <= cap_m)
    if not mask.any():
        raise ValueError("no valid ground-truth pixels inside the depth cap")
    p = pred[mask]
    g = gt[mask]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, min_m, cap_m)

    err = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err ** 2 / g)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        acc_1=float(np.mean(ratio < 1.25)),
        acc_2=float(np.mean(ratio < 1.25 ** 2)),
        acc_3=float(np.mean(ratio < 1.25 ** 3)),
        cap_m=float(cap_m),
        n_pixels=int(mask.sum()),
    )


def normal_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> NormalReport:
    """Angular error metrics between unit normal maps, inside a mask.

    `pred` and `gt` hold (nx, ny, nz) along the last axis.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError("pred/gt must share shape (..., 3)")
    if mask.shape != pred.shape[:-1]:
        raise ValueError("mask shape must match the spatial shape of the normals")
    if not mask.any():
        raise ValueError("empty mask")
    p = pred[mask]
    g = gt[mask]
    dot = p[:, 0] * g[:, 0] + p[:, 1] * g[:, 1] + p[:, 2] * g[:, 2]
    angles = np.degrees(np.arccos(np.clip(dot, -1.0, 1.0)))
    return NormalReport(
        mae_deg=float(np.mean(angles)),
        acc_20=float(np.mean(angles < 20.0)),
        acc_25=float(np.mean(angles < 25.0)),
        acc_30=float(np.mean(angles < 30.0)),
        n_pixels=int(mask.sum()),
    )


def compare_runs(report_a: EvalReport, report_b: EvalReport) -> dict:
    """Per-metric signed difference (b - a) and percent change relative to a.

    Percent change is None where the baseline metric is zero.
    """
    if report_a.family != report_b.family:
        raise ValueError(
            f"cannot compare {report_a.family} report with {report_b.family} report"
        )
    if report_a.family == "depth" and report_a.cap_m != report_b.cap_m:
        raise ValueError("cannot compare depth reports with different caps")
    da = report_a.to_json_dict()
    db = report_b.to_json_dict()
    deltas = {}
    for key, va in da.items():
        if key in ("family", "n_pixels", "cap_m"):
            continue
        vb = db[key]
        diff = vb - va
        pct = (diff / va) * 100.0 if va != 0 else None
        deltas[key] = {"diff": diff, "pct_change": pct}
    return deltas


def report_to_json(report: EvalReport, extra: Optional[dict] = None) -> str:
    d = report.to_json_dict()
    if extra:
        d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True)


def report_from_json(text: str) -> EvalReport:
    d = json.loads(text)
    family = d.get("family")
    if family == "depth":
        return DepthReport(
            abs_rel=d["abs_rel"], sq_rel=d["sq_rel"], rmse=d["rmse"],
            rmse_log=d["rmse_log"], acc_1=d[_DELTA_KEYS[0]], acc_2=d[_DELTA_KEYS[1]],
            acc_3=d[_DELTA_KEYS[2]], cap_m=d["cap_m"], n_pixels=d["n_pixels"],
        )
    if family == "normals":
        return NormalReport(
            mae_deg=d["mae_deg"], acc_20=d["acc_20"], acc_25=d["acc_25"],
            acc_30=d["acc_30"], n_pixels=d["n_pixels"],
        )
    raise ValueError(f"unknown report family: {family!r}")
