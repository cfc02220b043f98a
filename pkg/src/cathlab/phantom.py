"""Synthetic vessel phantoms with analytic ground truth.

A phantom is a tube of elevated attenuation swept along a smooth centerline
inside a background volume.  Generation returns the voxelized volume, the
densely sampled ground-truth centerline, and a closed tube surface mesh, so
downstream renderers/reconstructors can be checked against exact geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .errors import ValidationError
from .volume import AttenuationVolume, SurfaceMesh


@dataclass(frozen=True)
class PhantomSpec:
    """Description of a tube phantom.

    ``centerline_mm`` are control points of a piecewise-cubic space curve;
    ``radius_mm`` is either a scalar or one radius per control point
    (interpolated along the curve, so dips model stenoses).
    """

    centerline_mm: np.ndarray = field(repr=False)
    radius_mm: np.ndarray | float
    dims: tuple[int, int, int] = (128, 128, 128)
    spacing_mm: tuple[float, float, float] = (0.5, 0.5, 0.5)
    origin_mm: tuple[float, float, float] | None = None
    vessel_attenuation: float = 0.02
    background_attenuation: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.centerline_mm, dtype=float).reshape(-1, 3)
        if len(pts) < 2:
            raise ValidationError("centerline needs at least two control points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if seg.sum() <= 0.0:
            raise ValidationError("centerline has zero length")
        radii = np.broadcast_to(np.asarray(self.radius_mm, dtype=float), (len(pts),)).copy()
        if np.any(radii <= 0):
            raise ValidationError("radii must be positive")
        origin = self.origin_mm
        if origin is None:
            # center the grid so a voxel-center row passes through the origin
            origin = tuple(
                -0.5 * n * s for n, s in zip(self.dims, self.spacing_mm)
            )
        object.__setattr__(self, "centerline_mm", pts)
        object.__setattr__(self, "radius_mm", radii)
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in origin))


class CenterlineCurve:
    """Natural cubic curve through control points, chord-length parametrised."""

    def __init__(self, points: np.ndarray, radii: np.ndarray):
        points = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        u = np.concatenate([[0.0], np.cumsum(seg)])
        if u[-1] <= 0:
            raise ValidationError("degenerate centerline")
        # collapse coincident points to keep the parameter strictly increasing
        keep = np.concatenate([[True], np.diff(u) > 1e-12])
        u, points, radii = u[keep], points[keep], np.asarray(radii, dtype=float)[keep]
        if len(points) < 2:
            raise ValidationError("centerline has zero length")
        self._u = u / u[-1]
        if len(points) == 2:
            # a two-point curve is a straight segment
            self._spline = None
            self._pts = points
        else:
            self._spline = CubicSpline(self._u, points, bc_type="natural")
            self._pts = points
        self._radius = radii
        self.chord_length = float(u[-1])

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self._spline is None:
            return self._pts[0] + np.outer(t, self._pts[1] - self._pts[0])
        return self._spline(t)

    def radius_at(self, t: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=float), self._u, self._radius)

    def sample(self, step_mm: float) -> tuple[np.ndarray, np.ndarray]:
        """Dense (points, radii) sampling at roughly ``step_mm`` arc spacing."""
        n = max(int(np.ceil(self.chord_length / step_mm)) * 2, 8)
        t = np.linspace(0.0, 1.0, n + 1)
        return self.evaluate(t), self.radius_at(t)


def polyline_length(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(np.asarray(points, dtype=float), axis=0), axis=1).sum())


def generate_vessel_phantom(
    spec: PhantomSpec,
) -> tuple[AttenuationVolume, np.ndarray, SurfaceMesh]:
    """Voxelize a tube phantom.

    A voxel belongs to the vessel when its centre lies within the local tube
    radius of the centerline; distances use dense curve sampling at a quarter
    of the smallest voxel spacing.

    Returns (volume, ground-truth centerline polyline, closed tube mesh).
    """
    curve = CenterlineCurve(spec.centerline_mm, spec.radius_mm)
    step = min(spec.spacing_mm) / 4.0
    samples, radii = curve.sample(step)

    lo = np.asarray(spec.origin_mm) - 0.5 * np.asarray(spec.spacing_mm)
    hi = lo + np.asarray(spec.dims) * np.asarray(spec.spacing_mm)
    margin = radii.max()
    if np.any(samples - margin < lo) or np.any(samples + margin > hi):
        raise ValidationError("vessel leaves the volume bounds")

    xs = spec.origin_mm[0] + spec.spacing_mm[0] * np.arange(spec.dims[0])
    ys = spec.origin_mm[1] + spec.spacing_mm[1] * np.arange(spec.dims[1])
    zs = spec.origin_mm[2] + spec.spacing_mm[2] * np.arange(spec.dims[2])

    tree = cKDTree(samples)
    data = np.full(spec.dims, spec.background_attenuation, dtype=np.float32)
    start_tan = samples[1] - samples[0]
    end_tan = samples[-1] - samples[-2]
    last = len(samples) - 1
    # chunk along x to bound the query workspace
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    flat_yz = np.stack([yy.ravel(), zz.ravel()], axis=1)
    for ix, x in enumerate(xs):
        centers = np.column_stack([np.full(len(flat_yz), x), flat_yz])
        dist, idx = tree.query(centers, workers=-1)
        inside = dist <= radii[idx]
        # clip the spherical end caps at the end planes
        at_start = idx == 0
        inside[at_start] &= (centers[at_start] - samples[0]) @ start_tan >= 0.0
        at_end = idx == last
        inside[at_end] &= (centers[at_end] - samples[-1]) @ end_tan <= 0.0
        data[ix] = np.where(
            inside.reshape(len(ys), len(zs)), spec.vessel_attenuation, data[ix]
        )

    pick = np.unique(np.linspace(0, len(samples) - 1, min(200, len(samples))).astype(int))
    mesh = tube_mesh(samples[pick], curve, n_around=24)
    vol = AttenuationVolume(data, spec.spacing_mm, spec.origin_mm)
    return vol, samples, mesh


def _parallel_transport_frames(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normal/binormal frames along a polyline, free of sudden flips."""
    tangents = np.gradient(points, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.empty_like(tangents)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(ref, tangents[0])) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    n = np.cross(tangents[0], ref)
    normals[0] = n / np.linalg.norm(n)
    for i in range(1, len(points)):
        n = normals[i - 1] - tangents[i] * np.dot(tangents[i], normals[i - 1])
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            n, norm = normals[i - 1], 1.0
        normals[i] = n / norm
    binormals = np.cross(tangents, normals)
    return normals, binormals


def tube_mesh(
    path_points: np.ndarray, curve: CenterlineCurve | None = None, n_around: int = 24
) -> SurfaceMesh:
    """Closed, outward-oriented tube surface around a polyline.

    Radii are taken from ``curve`` when given (matched by arc length),
    otherwise a unit radius is used.
    """
    pts = np.asarray(path_points, dtype=float)
    if len(pts) < 2:
        raise ValidationError("tube path needs at least two points")
    if curve is not None:
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        radii = curve.radius_at(s / s[-1])
    else:
        radii = np.ones(len(pts))
    normals, binormals = _parallel_transport_frames(pts)
    theta = np.linspace(0.0, 2.0 * np.pi, n_around, endpoint=False)
    rings = (
        pts[:, None, :]
        + radii[:, None, None]
        * (np.cos(theta)[None, :, None] * normals[:, None, :]
           + np.sin(theta)[None, :, None] * binormals[:, None, :])
    )
    verts = rings.reshape(-1, 3)
    tris = []
    for i in range(len(pts) - 1):
        base, nxt = i * n_around, (i + 1) * n_around
        for j in range(n_around):
            j2 = (j + 1) % n_around
            tris.append([base + j, base + j2, nxt + j2])
            tris.append([base + j, nxt + j2, nxt + j])
    # end caps: fan around the path endpoints
    verts = np.vstack([verts, pts[0], pts[-1]])
    c0, c1 = len(verts) - 2, len(verts) - 1
    last = (len(pts) - 1) * n_around
    for j in range(n_around):
        j2 = (j + 1) % n_around
        tris.append([c0, j2, j])
        tris.append([c1, last + j, last + j2])
    return SurfaceMesh(verts, np.asarray(tris, dtype=np.int64))


def straight_tube_spec(
    length_mm: float = 50.0,
    radius_mm: float = 2.0,
    dims: tuple[int, int, int] = (128, 128, 128),
    spacing_mm: float = 0.5,
    axis: int = 0,
    vessel_attenuation: float = 0.02,
    background_attenuation: float = 0.0,
) -> PhantomSpec:
    """Axis-aligned straight tube centred on the isocenter."""
    t = np.linspace(-length_mm / 2.0, length_mm / 2.0, 9)
    pts = np.zeros((9, 3))
    pts[:, axis] = t
    return PhantomSpec(
        pts,
        radius_mm,
        dims=dims,
        spacing_mm=(spacing_mm,) * 3,
        vessel_attenuation=vessel_attenuation,
        background_attenuation=background_attenuation,
    )


def helix_spec(
    radius_mm: float = 10.0,
    pitch_mm: float = 8.0,
    turns: float = 2.0,
    tube_radius_mm: float = 1.5,
    dims: tuple[int, int, int] = (128, 128, 128),
    spacing_mm: float = 0.5,
    points_per_turn: int = 40,
) -> PhantomSpec:
    """Helical tube; its analytic arc length is
    ``2*pi*turns*sqrt(radius^2 + (pitch/(2*pi))^2)``."""
    n = max(int(points_per_turn * turns), 8)
    t = np.linspace(0.0, 2.0 * np.pi * turns, n)
    z = pitch_mm * t / (2.0 * np.pi)
    pts = np.column_stack([radius_mm * np.cos(t), radius_mm * np.sin(t), z - z.mean()])
    return PhantomSpec(pts, tube_radius_mm, dims=dims, spacing_mm=(spacing_mm,) * 3)


def beating_tube_phases(
    spec: PhantomSpec,
    n_phases: int,
    amplitude_mm: float = 3.0,
    direction=(0.0, 1.0, 0.0),
) -> list[tuple[AttenuationVolume, np.ndarray, SurfaceMesh]]:
    """Generate one phantom per cardiac phase with a smooth cyclic bow.

    Control points are displaced by ``amplitude * sin(2*pi*phase) * w(s)``
    where w peaks mid-vessel and vanishes at the ends, mimicking a vessel
    carried by the beating heart.  Ground truth is exact per phase.
    """
    if n_phases < 1:
        raise ValidationError("need at least one phase")
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    s = np.linspace(0.0, 1.0, len(spec.centerline_mm))
    weight = np.sin(np.pi * s) ** 2
    out = []
    for k in range(n_phases):
        phase = k / n_phases
        offset = amplitude_mm * np.sin(2.0 * np.pi * phase)
        pts = spec.centerline_mm + (offset * weight)[:, None] * d
        moved = PhantomSpec(
            pts,
            spec.radius_mm,
            dims=spec.dims,
            spacing_mm=spec.spacing_mm,
            origin_mm=spec.origin_mm,
            vessel_attenuation=spec.vessel_attenuation,
            background_attenuation=spec.background_attenuation,
        )
        out.append(generate_vessel_phantom(moved))
    return out
