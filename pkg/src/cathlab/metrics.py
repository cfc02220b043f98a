"""Virtual-versus-reference consistency scoring.

Morphological comparison of vessel descriptors (length, diameter profile,
tortuosity, bifurcation angle, weighted overall) and trajectory similarity
(Dice overlap, mean/maximum pointwise error, exact one-dimensional optimal
transport via optimal assignment).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError

OVERALL_WEIGHTS = {"C_L": 0.3, "C_D": 0.3, "C_T": 0.2, "C_theta": 0.2}


@dataclass(frozen=True)
class VesselDescriptor:
    """Geometric summary of one vessel branch.

    ``centerline`` is an ordered polyline (mm or px); tortuosity defaults to
    path length over endpoint chord.  ``bifurcation_angle_deg`` is optional.
    """

    centerline: np.ndarray = field(repr=False)
    diameters: np.ndarray = field(repr=False)
    bifurcation_angle_deg: float | None = None
    tortuosity: float | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.centerline, dtype=float))
        d = np.atleast_1d(np.asarray(self.diameters, dtype=float))
        if len(pts) < 2:
            raise ValidationError("centerline needs at least two points")
        if d.size < 1 or np.any(d <= 0):
            raise ValidationError("need at least one positive diameter sample")
        chord = float(np.linalg.norm(pts[-1] - pts[0]))
        if chord <= 0:
            raise ValidationError("centerline endpoints coincide; chord undefined")
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "diameters", d)
        if self.tortuosity is None:
            length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
            object.__setattr__(self, "tortuosity", length / chord)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())

    def to_json(self) -> dict:
        return {
            "centerline": self.centerline.tolist(),
            "diameters": self.diameters.tolist(),
            "bifurcation_angle_deg": self.bifurcation_angle_deg,
            "tortuosity": self.tortuosity,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VesselDescriptor":
        return cls(
            np.asarray(obj["centerline"], dtype=float),
            np.asarray(obj["diameters"], dtype=float),
            obj.get("bifurcation_angle_deg"),
            obj.get("tortuosity"),
        )


def _clamp_pct(x: float) -> float:
    return float(min(max(x, 0.0), 100.0))


def _resample_1d(values: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == n:
        return v
    return np.interp(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, v.size), v)


def morphological_consistency(virtual: VesselDescriptor, reference: VesselDescriptor) -> dict:
    """Per-metric consistency percentages plus the fixed-weight overall score.

    Length: 1 - |Lv - Lr|/Lr.  Diameter: 1 - mean(|Dv - Dr|/Dr) after
    resampling to common stations.  Tortuosity: 1 - |Tv - Tr|/Tr.
    Bifurcation angle: 1 - |dtheta|/180.  All in percent, clamped to
    [0, 100]; overall = 0.3 C_L + 0.3 C_D + 0.2 C_T + 0.2 C_theta.  When
    neither descriptor carries a bifurcation angle, C_theta counts as 100
    (no measurable discrepancy); a one-sided angle raises.
    """
    if reference.length <= 0:
        raise ValidationError("reference length is zero")
    c_l = _clamp_pct((1.0 - abs(virtual.length - reference.length) / reference.length) * 100.0)

    n = max(virtual.diameters.size, reference.diameters.size)
    dv = _resample_1d(virtual.diameters, n)
    dr = _resample_1d(reference.diameters, n)
    c_d = _clamp_pct((1.0 - float(np.mean(np.abs(dv - dr) / dr))) * 100.0)

    if reference.tortuosity <= 0:
        raise ValidationError("reference tortuosity is zero")
    c_t = _clamp_pct(
        (1.0 - abs(virtual.tortuosity - reference.tortuosity) / reference.tortuosity) * 100.0
    )

    va, ra = virtual.bifurcation_angle_deg, reference.bifurcation_angle_deg
    if (va is None) != (ra is None):
        raise ValidationError("bifurcation angle present on only one descriptor")
    c_theta = 100.0 if va is None else _clamp_pct((1.0 - abs(va - ra) / 180.0) * 100.0)

    overall = (
        OVERALL_WEIGHTS["C_L"] * c_l
        + OVERALL_WEIGHTS["C_D"] * c_d
        + OVERALL_WEIGHTS["C_T"] * c_t
        + OVERALL_WEIGHTS["C_theta"] * c_theta
    )
    return {"C_L": c_l, "C_D": c_d, "C_T": c_t, "C_theta": c_theta, "C_overall": overall}


def dice(x_mask, y_mask) -> float:
    """Dice overlap 2|XnY| / (|X| + |Y|); undefined when both masks are empty."""
    x = np.asarray(x_mask, dtype=bool)
    y = np.asarray(y_mask, dtype=bool)
    if x.shape != y.shape:
        raise ValidationError("masks must share dimensions")
    total = int(x.sum()) + int(y.sum())
    if total == 0:
        raise ValidationError("both masks empty; Dice undefined")
    return 2.0 * int((x & y).sum()) / total


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample an ordered polyline to n points equally spaced by arc length."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        raise ValidationError("polyline needs at least two points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        raise ValidationError("polyline has zero length")
    targets = np.linspace(0.0, s[-1], n)
    out = np.empty((n, pts.shape[1]))
    for d in range(pts.shape[1]):
        out[:, d] = np.interp(targets, s, pts[:, d])
    return out


def mean_trajectory_error(p: np.ndarray, q: np.ndarray, resample_to: int | None = 100) -> float:
    """Mean pointwise distance between two ordered trajectories.

    Both are arc-length resampled to a common count first (set
    ``resample_to=None`` to require equal counts and pair as given).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if p.size == 0 or q.size == 0:
        raise ValidationError("trajectories must be non-empty")
    if resample_to is not None:
        p = resample_polyline(p, resample_to)
        q = resample_polyline(q, resample_to)
    elif len(p) != len(q):
        raise ValidationError("trajectories must have equal point counts")
    return float(np.linalg.norm(p - q, axis=1).mean())


def wasserstein_trajectories(p: np.ndarray, q: np.ndarray, resample_to: int | None = None) -> float:
    """Exact transport distance between two equal-count point sets.

    Treats each set as a uniform empirical distribution and solves the
    optimal assignment on the Euclidean cost matrix; the minimum total cost
    divided by the point count is the exact first-order transport distance.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if p.size == 0 or q.size == 0:
        raise ValidationError("point sets must be non-empty")
    if resample_to is not None:
        p = resample_polyline(p, resample_to)
        q = resample_polyline(q, resample_to)
    if len(p) != len(q):
        raise ValidationError("point sets must have equal counts (resample first)")
    if len(p) > 256:
        raise ValidationError("resample to at most 256 points first")
    cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(p))


def max_error_pct(p: np.ndarray, q: np.ndarray, guidewire_length: float) -> float:
    """Worst pointwise deviation as a percentage of the device length."""
    if guidewire_length <= 0:
        raise ValidationError("guidewire length must be positive")
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if len(p) != len(q) or len(p) == 0:
        raise ValidationError("need equal non-empty point counts")
    return float(np.linalg.norm(p - q, axis=1).max() / guidewire_length * 100.0)


def metric_report(
    morphology: dict | None = None,
    dsc: float | None = None,
    mte: float | None = None,
    w1: float | None = None,
    me_pct: float | None = None,
) -> dict:
    """Assemble the canonical metric report keyed exactly as exported."""
    report = {
        "C_L": None, "C_D": None, "C_T": None, "C_theta": None, "C_overall": None,
        "DSC": dsc, "MTE": mte, "W1": w1, "ME_pct": me_pct,
    }
    if morphology:
        report.update(morphology)
    return report


def save_metric_report(report: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
