"""C-arm projection geometry.

World coordinates are in millimetres with the origin at the gantry isocenter
and +z toward the patient's head.  The gantry orientation is described by two
clinical angles:

* ``alpha`` -- primary angle, positive LAO / negative RAO, a rotation about
  the world z axis;
* ``beta``  -- secondary angle, positive CRAN / negative CAUD, a rotation
  about the (rotated) patient left-right axis.

At the neutral position (``alpha = beta = 0``) the beam axis points along
world +y and the detector columns follow world +x.  The view direction for a
pose is ``v(alpha, beta) = (-sin(a)*cos(b), cos(a)*cos(b), sin(b))``, which is
the neutral beam axis carried through the primary rotation followed by the
secondary tilt; it satisfies ``v_z = sin(beta)`` so the two angles are
recoverable from the direction vector alone.

Pixel coordinates are continuous, (u, v) = (column, row), with the image
origin at the upper-left detector corner; the isocenter with zero table
offset projects to the detector centre ``(n_u/2, n_v/2)``.  For a detector
whose diagonal is ``fd_mm``, the pixel pitch is ``fd_mm / (sqrt(2) * n)``
(exact for square detectors, applied per-axis otherwise).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoseError, ProjectionDegenerateError, ValidationError

_SECONDARY_AXIS = np.array([-1.0, 0.0, 0.0])
_NEUTRAL_BEAM = np.array([0.0, 1.0, 0.0])


def rotation_primary(alpha: float) -> np.ndarray:
    """Rotation matrix of the primary (LAO/RAO) angle about the world z axis."""
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(u) -> np.ndarray:
    """Cross-product matrix: ``skew(u) @ w == np.cross(u, w)``."""
    ux, uy, uz = u
    return np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]])


def rotation_secondary(beta: float, alpha: float = 0.0) -> np.ndarray:
    """Rotation matrix of the secondary (CRAN/CAUD) angle.

    Rodrigues rotation by ``beta`` about the tilt axis, which is the
    left-right axis carried by the primary rotation:
    ``u = rotation_primary(alpha) @ (-1, 0, 0)``.
    """
    u = rotation_primary(alpha) @ _SECONDARY_AXIS
    c, s = math.cos(beta), math.sin(beta)
    return c * np.eye(3) + (1.0 - c) * np.outer(u, u) + s * skew(u)


def direction_from_angles(alpha: float, beta: float) -> np.ndarray:
    """Unit view direction for a pair of gantry angles.

    Equals ``R(u, beta) @ rotation_primary(alpha) @ (0, 1, 0)`` where the tilt
    axis is ``u = rotation_primary(alpha) @ (1, 0, 0)``; written in closed
    form below.  The z component is ``sin(beta)``.
    """
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    return np.array([-sa * cb, ca * cb, sb])


def angles_from_direction(v) -> tuple[float, float]:
    """Recover (alpha, beta) from a unit view direction.

    ``beta = arcsin(v_z)``; the azimuth comes from the horizontal components
    via the quadrant-aware arctangent of ``-v_x / v_y``.  On the ``v_y = 0``
    meridian the azimuth is fixed to +pi/2 for ``v_x >= 0`` and -pi/2
    otherwise.

    Raises
    ------
    DegeneratePoseError
        If ``|v_z| ~ 1``: the direction is parallel to the gantry axis and
        the primary angle is undefined.
    """
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValidationError("zero direction vector")
    vx, vy, vz = v / n
    if abs(vz) >= 1.0 - 1e-12:
        raise DegeneratePoseError("view direction parallel to gantry axis; azimuth undefined")
    if vy != 0.0:
        alpha = math.atan2(-vx, vy)
    else:
        alpha = math.pi / 2 if vx >= 0.0 else -math.pi / 2
    return alpha, math.asin(vz)


@dataclass(frozen=True)
class CArmPose:
    """Gantry pose: angles in radians, distances in millimetres.

    ``sid_mm`` is the source-to-image distance, ``spd_mm`` the
    source-to-isocenter distance, ``fd_mm`` the detector diagonal, and
    ``table_mm`` the patient-table translation.
    """

    alpha: float = 0.0
    beta: float = 0.0
    sid_mm: float = 1200.0
    spd_mm: float = 800.0
    fd_mm: float = 300.0
    n_u: int = 512
    n_v: int = 512
    table_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.sid_mm > self.spd_mm > 0.0):
            raise ValidationError(f"need sid_mm > spd_mm > 0, got {self.sid_mm}, {self.spd_mm}")
        if self.fd_mm <= 0.0:
            raise ValidationError("fd_mm must be positive")
        if self.n_u < 2 or self.n_v < 2:
            raise ValidationError("detector must be at least 2x2 pixels")
        if abs(self.beta) >= math.pi / 2:
            raise ValidationError(f"|beta| must be < pi/2, got {self.beta}")
        if not all(math.isfinite(x) for x in (self.alpha, self.beta, *self.table_mm)):
            raise ValidationError("pose parameters must be finite")

    @property
    def pitch_u(self) -> float:
        """Detector pixel pitch along columns, mm/px."""
        return self.fd_mm / (math.sqrt(2.0) * self.n_u)

    @property
    def pitch_v(self) -> float:
        """Detector pixel pitch along rows, mm/px."""
        return self.fd_mm / (math.sqrt(2.0) * self.n_v)

    def view_direction(self) -> np.ndarray:
        """Unit beam direction (source toward detector) for this pose."""
        return direction_from_angles(self.alpha, self.beta)

    def orientation(self) -> np.ndarray:
        """World-to-camera rotation: rows are the detector-u axis, the
        detector-up axis, and the negated beam direction.

        The three axes are the neutral basis (+x columns, +z up, +y beam)
        carried through the primary rotation followed by the secondary tilt,
        so the camera genuinely orbits the isocenter with the gantry angles.
        """
        cb, sb = math.cos(self.beta), math.sin(self.beta)
        tilt = np.array([[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]])
        g = rotation_primary(self.alpha) @ tilt
        # columns of g: detector-u axis, beam direction, detector-up axis
        return np.stack([g[:, 0], g[:, 2], -g[:, 1]])

    def to_json(self) -> dict:
        return {
            "alpha_deg": math.degrees(self.alpha),
            "beta_deg": math.degrees(self.beta),
            "sid_mm": self.sid_mm,
            "spd_mm": self.spd_mm,
            "fd_mm": self.fd_mm,
            "n_u": self.n_u,
            "n_v": self.n_v,
            "table_mm": list(self.table_mm),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CArmPose":
        try:
            return cls(
                alpha=math.radians(float(obj["alpha_deg"])),
                beta=math.radians(float(obj["beta_deg"])),
                sid_mm=float(obj["sid_mm"]),
                spd_mm=float(obj["spd_mm"]),
                fd_mm=float(obj["fd_mm"]),
                n_u=int(obj["n_u"]),
                n_v=int(obj["n_v"]),
                table_mm=tuple(float(x) for x in obj.get("table_mm", (0.0, 0.0, 0.0))),
            )
        except KeyError as e:
            raise ValidationError(f"pose JSON missing key {e}") from e

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path) -> "CArmPose":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class ProjectionMatrix:
    """Homogeneous 3x4 world-to-pixel map."""

    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (3, 4):
            raise ValidationError(f"projection matrix must be 3x4, got {p.shape}")
        if np.linalg.matrix_rank(p) != 3 or abs(np.linalg.det(p[:, :3])) < 1e-12:
            raise ValidationError("projection matrix must have rank 3 with invertible left block")
        object.__setattr__(self, "p", p)


def projection_matrix(pose: CArmPose) -> ProjectionMatrix:
    """Build the world-to-pixel projection for a pose.

    The map is a perspective block times the orientation block::

        [ f_u  0   -n_u/2 ]   [               | -t_x         ]
        [ 0   -f_v -n_v/2 ] . [ orientation() | -t_y         ]
        [ 0    0   -1     ]   [               | -spd_mm - t_z]

    with focals ``f_u = sqrt(2) * n_u * sid_mm / fd_mm`` (and likewise f_v).
    The perspective-block signs are fixed so the isocenter with zero table
    offset lands on the detector centre (n_u/2, n_v/2) with the u axis along
    increasing detector column.  Table offsets displace the patient in
    detector coordinates: t_x along columns, t_y along image-up, t_z along
    the beam.
    """
    f_u = math.sqrt(2.0) * pose.n_u * pose.sid_mm / pose.fd_mm
    f_v = math.sqrt(2.0) * pose.n_v * pose.sid_mm / pose.fd_mm
    k = np.array(
        [
            [f_u, 0.0, -pose.n_u / 2.0],
            [0.0, -f_v, -pose.n_v / 2.0],
            [0.0, 0.0, -1.0],
        ]
    )
    tx, ty, tz = pose.table_mm
    rt = np.empty((3, 4))
    rt[:, :3] = pose.orientation()
    rt[:, 3] = (-tx, -ty, -pose.spd_mm - tz)
    return ProjectionMatrix(k @ rt)


def project_point(pm: ProjectionMatrix, x) -> tuple[float, float]:
    """Project a world point to continuous pixel coordinates (u, v).

    Raises
    ------
    ProjectionDegenerateError
        If the point lies on the source plane (zero homogeneous depth).
    """
    x = np.asarray(x, dtype=float)
    h = pm.p @ np.append(x, 1.0)
    if abs(h[2]) < 1e-12:
        raise ProjectionDegenerateError(f"point {x} lies on the source plane")
    return h[0] / h[2], h[1] / h[2]


def project_points(pm: ProjectionMatrix, xs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project_point` for an (N, 3) array; returns (N, 2)."""
    xs = np.asarray(xs, dtype=float)
    h = xs @ pm.p[:, :3].T + pm.p[:, 3]
    w = h[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise ProjectionDegenerateError("some points lie on the source plane")
    return h[:, :2] / w[:, None]


def source_position(pose: CArmPose) -> np.ndarray:
    """World position of the X-ray source (the camera centre)."""
    tx, ty, tz = pose.table_mm
    return pose.orientation().T @ np.array([tx, ty, pose.spd_mm + tz])


def detector_point(pose: CArmPose, u: float, v: float) -> np.ndarray:
    """World position of the detector point at continuous pixel (u, v).

    Consistent with :func:`projection_matrix`:
    ``project_point(projection_matrix(pose), detector_point(pose, u, v))``
    returns (u, v) for any pixel.
    """
    r = pose.orientation()
    cam = np.array(
        [
            (u - pose.n_u / 2.0) * pose.pitch_u,
            (pose.n_v / 2.0 - v) * pose.pitch_v,
            -pose.sid_mm,
        ]
    )
    return source_position(pose) + r.T @ cam


def detector_grid(pose: CArmPose) -> np.ndarray:
    """World positions of all pixel centres, shape (n_v, n_u, 3).

    Pixel (i, j) -> continuous coordinates (u, v) = (j + 0.5, i + 0.5).
    """
    r = pose.orientation()
    u = (np.arange(pose.n_u) + 0.5 - pose.n_u / 2.0) * pose.pitch_u
    v = (pose.n_v / 2.0 - (np.arange(pose.n_v) + 0.5)) * pose.pitch_v
    cam = np.empty((pose.n_v, pose.n_u, 3))
    cam[:, :, 0] = u[None, :]
    cam[:, :, 1] = v[:, None]
    cam[:, :, 2] = -pose.sid_mm
    return source_position(pose) + cam @ r
