"""Cubic B-spline curves on clamped uniform knots: basis evaluation and
penalised least-squares fitting, dimension-agnostic (2-D image curves and
3-D device curves share this core).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEGREE = 3


def clamped_uniform_knots(n_ctrl: int, degree: int = DEGREE) -> np.ndarray:
    """Knot vector with (degree+1)-fold end knots and uniform interior."""
    if n_ctrl < degree + 1:
        raise ValidationError(f"need at least {degree + 1} control points")
    interior = np.linspace(0.0, 1.0, n_ctrl - degree + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def basis_matrix(us: np.ndarray, knots: np.ndarray, degree: int = DEGREE) -> np.ndarray:
    """Cox-de Boor design matrix, shape (len(us), n_ctrl)."""
    us = np.asarray(us, dtype=float)
    n_ctrl = len(knots) - degree - 1
    # order-0: indicator of the knot span, with u = 1 folded into the last span
    b = np.zeros((len(us), len(knots) - 1))
    for i in range(len(knots) - 1):
        b[:, i] = (knots[i] <= us) & (us < knots[i + 1])
    last = np.searchsorted(knots, 1.0) - 1  # final non-degenerate span
    b[us >= 1.0, :] = 0.0
    b[us >= 1.0, last] = 1.0
    for k in range(1, degree + 1):
        nb = np.zeros((len(us), b.shape[1] - 1))
        for i in range(nb.shape[1]):
            left_den = knots[i + k] - knots[i]
            right_den = knots[i + k + 1] - knots[i + 1]
            term = 0.0
            if left_den > 0:
                term = (us - knots[i]) / left_den * b[:, i]
            if right_den > 0:
                term = term + (knots[i + k + 1] - us) / right_den * b[:, i + 1]
            nb[:, i] = term
        b = nb
    return b[:, :n_ctrl]


@dataclass(frozen=True)
class BSplineCurve:
    """Cubic B-spline ``sum_i N_i(u) Q_i`` for u in [0, 1]."""

    control_points: np.ndarray = field(repr=False)
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        k = np.asarray(self.knots, dtype=float)
        if len(q) < DEGREE + 1:
            raise ValidationError("cubic curve needs at least 4 control points")
        if len(k) != len(q) + DEGREE + 1:
            raise ValidationError("knot count must be n_ctrl + degree + 1")
        object.__setattr__(self, "control_points", q)
        object.__setattr__(self, "knots", k)

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def evaluate(self, us) -> np.ndarray:
        us = np.atleast_1d(np.asarray(us, dtype=float))
        return basis_matrix(us, self.knots) @ self.control_points

    def sample(self, n: int = 200) -> np.ndarray:
        return self.evaluate(np.linspace(0.0, 1.0, n))

    def distances_to(self, points: np.ndarray, n_dense: int | None = None) -> np.ndarray:
        """Distance from each query point to the curve.

        The curve is densely sampled and each query point is projected onto
        the polyline segments around its nearest sample.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if n_dense is None:
            n_dense = max(20 * len(self.control_points), 400)
        dense = self.sample(n_dense)
        d2 = ((points[:, None, :] - dense[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        seg_start = dense[:-1]
        seg_vec = np.diff(dense, axis=0)
        seg_len2 = np.maximum((seg_vec**2).sum(axis=1), 1e-300)
        out = np.empty(len(points))
        for i, (p, k) in enumerate(zip(points, nearest)):
            best = np.inf
            for s in (k - 1, k):
                if 0 <= s < len(seg_vec):
                    t = np.clip(np.dot(p - seg_start[s], seg_vec[s]) / seg_len2[s], 0.0, 1.0)
                    best = min(best, float(np.linalg.norm(p - (seg_start[s] + t * seg_vec[s]))))
            out[i] = best if np.isfinite(best) else float(np.sqrt(d2[i, k]))
        return out


def chord_parameters(points: np.ndarray) -> np.ndarray:
    """Normalised cumulative chord-length parameters for a point sequence."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        raise ValidationError("points have zero total chord length")
    return np.concatenate([[0.0], np.cumsum(seg)]) / total


def fit_bspline(
    points: np.ndarray,
    n_ctrl: int,
    smoothness: float = 1e-3,
    params: np.ndarray | None = None,
) -> BSplineCurve:
    """Penalised least-squares cubic fit.

    Minimises ``|B Q - P|^2 + smoothness * |D2 Q|^2`` where D2 is the second
    difference of the control polygon; the penalty vanishes on straight
    configurations so lines are reproduced exactly.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) < DEGREE + 1:
        raise ValidationError("need at least 4 points to fit a cubic curve")
    n_ctrl = min(n_ctrl, len(points))
    if params is None:
        params = chord_parameters(points)
    knots = clamped_uniform_knots(n_ctrl)
    b = basis_matrix(params, knots)
    d2 = np.zeros((max(n_ctrl - 2, 0), n_ctrl))
    for i in range(n_ctrl - 2):
        d2[i, i : i + 3] = (1.0, -2.0, 1.0)
    lhs = b.T @ b + smoothness * d2.T @ d2
    rhs = b.T @ points
    try:
        q = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        q = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return BSplineCurve(q, knots)
