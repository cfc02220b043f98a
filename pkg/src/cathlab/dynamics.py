"""Dynamic anatomy: smooth skinning weights on tetrahedral meshes, keypose
interpolation, linear blend deformation, intensity-based volume registration,
inter-phase volume interpolation, and the ECG-driven phase clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import InsufficientDataError, ValidationError
from .volume import AttenuationVolume, TetMesh, tet_volumes

_BOUND_TOL = 1e-9
_UNITY_TOL = 1e-6


@dataclass(frozen=True)
class HandleSet:
    """Disjoint groups of mesh vertices rigidly bound to deformation handles."""

    vertex_groups: tuple = ()

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.int64) for g in self.vertex_groups)
        seen: set = set()
        for g in groups:
            if g.size == 0:
                raise ValidationError("every handle needs at least one bound vertex")
            s = set(g.tolist())
            if seen & s:
                raise ValidationError("handle vertex groups must be disjoint")
            seen |= s
        object.__setattr__(self, "vertex_groups", groups)

    @property
    def n_handles(self) -> int:
        return len(self.vertex_groups)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, applied as ``r @ x + t``."""

    r: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.r.T + self.t


@dataclass(frozen=True)
class SkinningWeights:
    """Per-vertex convex blend coefficients over handles."""

    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            raise ValidationError("weights must be (n_vertices, n_handles)")
        if w.min() < -_BOUND_TOL or w.max() > 1.0 + _BOUND_TOL:
            raise ValidationError("weights must lie in [0, 1]")
        rows = w.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _UNITY_TOL:
            raise ValidationError("weights must sum to 1 per vertex")
        object.__setattr__(self, "w", w)


def tet_stiffness_matrix(mesh: TetMesh) -> sparse.csr_matrix:
    """Linear finite-element stiffness (cotangent) matrix of a tet mesh."""
    v, tets = mesh.vertices, mesh.tets
    vols = np.abs(tet_volumes(v, tets))
    n = len(v)
    rows, cols, vals = [], [], []
    for tet, vol in zip(tets, vols):
        p = v[tet]
        # gradients of the four linear shape functions
        m = np.hstack([np.ones((4, 1)), p])
        minv = np.linalg.inv(m)
        grads = minv[1:, :].T  # (4, 3)
        k_local = vol * grads @ grads.T
        for a in range(4):
            for b in range(4):
                rows.append(tet[a])
                cols.append(tet[b])
                vals.append(k_local[a, b])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def tet_lumped_mass(mesh: TetMesh) -> np.ndarray:
    vols = np.abs(tet_volumes(mesh.vertices, mesh.tets))
    m = np.zeros(len(mesh.vertices))
    np.add.at(m, mesh.tets.ravel(), np.repeat(vols / 4.0, 4))
    return m


def _connected_components(mesh: TetMesh) -> np.ndarray:
    n = len(mesh.vertices)
    adj_rows, adj_cols = [], []
    for tet in mesh.tets:
        for a in range(4):
            for b in range(a + 1, 4):
                adj_rows += [tet[a], tet[b]]
                adj_cols += [tet[b], tet[a]]
    g = sparse.csr_matrix((np.ones(len(adj_rows)), (adj_rows, adj_cols)), shape=(n, n))
    return sparse.csgraph.connected_components(g, directed=False)[1]


def compute_skinning_weights(mesh: TetMesh, handles: HandleSet) -> SkinningWeights:
    """Smoothest bounded weights: one field per handle minimising the
    discrete squared-Laplacian energy subject to 0/1 values on handle
    vertices and box bounds, resolved with an active-set loop, then
    renormalised per vertex to restore the partition of unity.

    Raises when a connected component of the mesh holds no handle vertex
    (the weights there would be unconstrained).
    """
    n = len(mesh.vertices)
    if max(int(g.max()) for g in handles.vertex_groups) >= n:
        raise ValidationError("handle vertex index out of range")
    comp = _connected_components(mesh)
    handle_verts = np.concatenate(handles.vertex_groups)
    if set(np.unique(comp)) - set(np.unique(comp[handle_verts])):
        raise ValidationError("a mesh component contains no handle vertex; ill-posed")

    l = tet_stiffness_matrix(mesh)
    minv = sparse.diags(1.0 / np.maximum(tet_lumped_mass(mesh), 1e-300))
    q = (l @ minv @ l).tocsc()

    w = np.zeros((n, handles.n_handles))
    for b, group in enumerate(handles.vertex_groups):
        w[:, b] = _solve_bounded_field(q, n, group, np.setdiff1d(handle_verts, group))
    w = np.clip(w, 0.0, 1.0)
    w /= w.sum(axis=1, keepdims=True)
    return SkinningWeights(w)


def _solve_bounded_field(q, n, ones_idx, zeros_idx, max_rounds: int = 60) -> np.ndarray:
    """Minimise w'Qw with w=1 on ones_idx, w=0 on zeros_idx, 0 <= w <= 1."""
    w = np.zeros(n)
    w[ones_idx] = 1.0
    fixed = np.zeros(n, dtype=bool)
    fixed[ones_idx] = True
    fixed[zeros_idx] = True
    at_lower = np.zeros(n, dtype=bool)
    at_upper = np.zeros(n, dtype=bool)

    for _ in range(max_rounds):
        clamped = fixed | at_lower | at_upper
        free = np.flatnonzero(~clamped)
        fixed_idx = np.flatnonzero(clamped)
        if free.size:
            w[at_lower] = 0.0
            w[at_upper] = 1.0
            qff = q[np.ix_(free, free)].tocsc()
            rhs = -(q[np.ix_(free, fixed_idx)] @ w[fixed_idx])
            w[free] = splu(qff).solve(rhs)
        grad = q @ w
        changed = False
        viol_lo = (~clamped) & (w < -_BOUND_TOL)
        viol_hi = (~clamped) & (w > 1.0 + _BOUND_TOL)
        if viol_lo.any() or viol_hi.any():
            at_lower |= viol_lo
            at_upper |= viol_hi
            w[viol_lo] = 0.0
            w[viol_hi] = 1.0
            changed = True
        else:
            # release bound vertices whose multiplier has the wrong sign
            rel_lo = at_lower & (grad < -_BOUND_TOL)
            rel_hi = at_upper & (grad > _BOUND_TOL)
            if rel_lo.any() or rel_hi.any():
                at_lower &= ~rel_lo
                at_upper &= ~rel_hi
                changed = True
        if not changed:
            break
    return np.clip(w, 0.0, 1.0)


# --- pose interpolation and deformation --------------------------------------


def _quat_from_matrix(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        return np.array(
            [s / 4.0, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = s / 4.0
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def _matrix_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _slerp(q1: np.ndarray, q2: np.ndarray, t: float) -> np.ndarray:
    if t == 0.0:
        return q1
    if t == 1.0:
        return q2
    dot = float(np.dot(q1, q2))
    if dot < 0.0:
        q2, dot = -q2, -dot
    if dot > 1.0 - 1e-12:
        out = (1.0 - t) * q1 + t * q2
        return out / np.linalg.norm(out)
    theta = math.acos(min(dot, 1.0))
    return (math.sin((1.0 - t) * theta) * q1 + math.sin(t * theta) * q2) / math.sin(theta)


def interpolate_pose(
    p1: list[RigidTransform], p2: list[RigidTransform], t: float
) -> list[RigidTransform]:
    """Blend two keyposes: translations linearly, rotations by spherical
    interpolation on the rotation group.  t=0 and t=1 return the inputs
    exactly.
    """
    if len(p1) != len(p2):
        raise ValidationError("keyposes must have the same handle count")
    if t == 0.0:
        return list(p1)
    if t == 1.0:
        return list(p2)
    out = []
    for a, b in zip(p1, p2):
        q = _slerp(_quat_from_matrix(a.r), _quat_from_matrix(b.r), t)
        out.append(RigidTransform(_matrix_from_quat(q), (1.0 - t) * a.t + t * b.t))
    return out


def deform_vertices(
    vertices: np.ndarray, weights: SkinningWeights, transforms: list[RigidTransform]
) -> np.ndarray:
    """Linear blend skinning: each vertex is the weight-blended image of its
    handle transforms."""
    v = np.asarray(vertices, dtype=float)
    w = weights.w
    if w.shape[0] != len(v) or w.shape[1] != len(transforms):
        raise ValidationError("weights do not conform to vertices/handles")
    out = np.zeros_like(v)
    for b, tr in enumerate(transforms):
        out += w[:, b : b + 1] * tr.apply(v)
    return out


def deform_mesh(mesh: TetMesh, weights: SkinningWeights, transforms) -> TetMesh:
    return TetMesh(deform_vertices(mesh.vertices, weights, transforms), mesh.tets)


# --- volume registration and phase interpolation ------------------------------


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement in voxel units; the warp is x -> x + u(x)."""

    u: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 4 or u.shape[3] != 3:
            raise ValidationError("field must have shape (nx, ny, nz, 3)")
        if not np.all(np.isfinite(u)):
            raise ValidationError("field contains non-finite displacements")
        object.__setattr__(self, "u", u)


def _warp(data: np.ndarray, u: np.ndarray, scale: float) -> np.ndarray:
    coords = np.mgrid[0 : data.shape[0], 0 : data.shape[1], 0 : data.shape[2]].astype(float)
    coords += scale * np.moveaxis(u, 3, 0)
    return ndimage.map_coordinates(data, coords, order=1, mode="constant", cval=0.0)


def _registration_energy(i1, i2, u, lam):
    warped = _warp(i2, u, 1.0)
    data = float(np.mean((i1 - warped) ** 2))
    reg = sum(
        float(np.mean(np.gradient(u[..., k], axis=ax) ** 2))
        for k in range(3)
        for ax in range(3)
    )
    return data + lam * reg, warped


def _descend_level(a, b, u, lam, max_iter, rel_tol, smooth_sigma):
    """Energy-descending update loop on one resolution level."""
    energy, warped = _registration_energy(a, b, u, lam)
    energies = [energy]
    step = 1.0
    scale = max(float(np.ptp(a)), 1e-12)
    for _ in range(max_iter):
        residual = a - warped
        grad_w = np.stack(np.gradient(warped), axis=-1)
        # per-voxel normalised (demons-style) mismatch force: takes full
        # steps even where the image gradient is small
        g2 = (grad_w**2).sum(axis=-1)
        denom = g2 + (residual / scale) ** 2 + 1e-3 * g2.mean() + 1e-300
        force = (residual / denom)[..., None] * grad_w
        for k in range(3):
            force[..., k] = ndimage.gaussian_filter(force[..., k], smooth_sigma)
        if lam > 0:
            lap = np.stack([ndimage.laplace(u[..., k]) for k in range(3)], axis=-1)
            force += lam * lap
        norm = np.abs(force).max()
        if norm == 0.0:
            break
        direction = force / norm
        improved = False
        trial_step = step * 2.0
        for _ in range(25):
            e_new, w_new = _registration_energy(a, b, u + trial_step * direction, lam)
            if e_new < energy:
                u = u + trial_step * direction
                energy, warped = e_new, w_new
                step = trial_step
                improved = True
                break
            trial_step /= 2.0
        if not improved:
            break
        energies.append(energy)
        if (energies[-2] - energies[-1]) < rel_tol * max(energies[-2], 1e-300):
            break
    return u, energies


def register_volumes(
    i1: AttenuationVolume,
    i2: AttenuationVolume,
    lam: float = 1e-3,
    max_iter: int = 100,
    rel_tol: float = 1e-5,
    smooth_sigma: float = 1.5,
    n_levels: int = 3,
) -> tuple[DeformationField, list[float]]:
    """Estimate the displacement field aligning ``i2`` onto ``i1``.

    Coarse-to-fine gradient descent on the squared-intensity mismatch of
    ``i2`` warped by x + u(x), with a gradient-smoothness penalty; the update
    force is Gaussian-smoothed and a backtracking step keeps the energy
    non-increasing within each level.  Intensities are normalised internally,
    so ``lam`` weighs voxel-unit displacement gradients against a unit-range
    mismatch.  Returns the field and the energy trace of the finest level.
    """
    if i1.dims != i2.dims or i1.spacing_mm != i2.spacing_mm:
        raise ValidationError("volumes must share the same grid")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    a = i1.data.astype(np.float64)
    b = i2.data.astype(np.float64)
    scale = max(float(np.ptp(a)), float(np.ptp(b)))
    if scale > 0:
        a = a / scale
        b = b / scale

    pyramid = [(a, b)]
    while len(pyramid) < n_levels and min(pyramid[-1][0].shape) >= 16:
        pa, pb = pyramid[-1]
        pyramid.append(
            (ndimage.zoom(pa, 0.5, order=1), ndimage.zoom(pb, 0.5, order=1))
        )
    pyramid.reverse()  # coarse to fine

    u = np.zeros(pyramid[0][0].shape + (3,))
    energies: list[float] = []
    for level, (la, lb) in enumerate(pyramid):
        if u.shape[:3] != la.shape:
            factors = [t / s for t, s in zip(la.shape, u.shape[:3])]
            u = 2.0 * np.stack(
                [ndimage.zoom(u[..., k], factors, order=1) for k in range(3)], axis=-1
            )
        u, energies = _descend_level(la, lb, u, lam, max_iter, rel_tol, smooth_sigma)
        del level
    return DeformationField(u), energies


def interpolate_phase(
    i1: AttenuationVolume, fld: DeformationField, a: float
) -> AttenuationVolume:
    """Carry ``i1`` a fraction ``a`` of the way along a displacement field.

    Content at x moves to x + a*u(x): the output samples ``i1`` at
    x - a*u(x) by trilinear interpolation, with out-of-volume samples
    reading as zero.  ``a = 0`` returns the input bit-for-bit.
    """
    if fld.u.shape[:3] != i1.dims:
        raise ValidationError("field grid does not match the volume")
    if not 0.0 <= a <= 1.0:
        raise ValidationError("interpolation fraction must lie in [0, 1]")
    if a == 0.0:
        return AttenuationVolume(i1.data.copy(), i1.spacing_mm, i1.origin_mm)
    out = _warp(i1.data.astype(np.float64), fld.u, -a)
    return AttenuationVolume(
        np.maximum(out, 0.0).astype(np.float32), i1.spacing_mm, i1.origin_mm
    )


def save_field(fld: DeformationField, path: str) -> None:
    import json

    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(fld.u, dtype="<f4").tobytes())
    with open(path + ".json", "w") as f:
        json.dump({"dims": list(fld.u.shape[:3])}, f)


def load_field(path: str) -> DeformationField:
    import json

    with open(path + ".json") as f:
        dims = json.load(f)["dims"]
    u = np.fromfile(path, dtype="<f4").reshape(dims[0], dims[1], dims[2], 3)
    return DeformationField(u.astype(np.float64))


def save_keyposes(
    path: str, handles: HandleSet, keyposes: list[list[RigidTransform]]
) -> None:
    """Persist handle bindings plus per-phase rigid transforms as JSON."""
    import json

    for pose in keyposes:
        if len(pose) != handles.n_handles:
            raise ValidationError("every keypose needs one transform per handle")
    body = {
        "handles": [g.tolist() for g in handles.vertex_groups],
        "keyposes": [
            [{"r": tr.r.tolist(), "t": tr.t.tolist()} for tr in pose]
            for pose in keyposes
        ],
    }
    with open(path, "w") as f:
        json.dump(body, f, indent=2)


def load_keyposes(path: str) -> tuple[HandleSet, list[list[RigidTransform]]]:
    import json

    with open(path) as f:
        body = json.load(f)
    handles = HandleSet(tuple(np.asarray(g, dtype=np.int64) for g in body["handles"]))
    keyposes = [
        [RigidTransform(np.asarray(tr["r"]), np.asarray(tr["t"])) for tr in pose]
        for pose in body["keyposes"]
    ]
    for pose in keyposes:
        if len(pose) != handles.n_handles:
            raise ValidationError("keypose file is inconsistent with its handles")
    return handles, keyposes


# --- ECG-driven phase clock ---------------------------------------------------


@dataclass(frozen=True)
class PhaseClock:
    """Maps wall-clock time to the model's cyclic phase via detected R peaks.

    Within each R-R interval the beat phase (0 at the peak, ->1 just before
    the next) maps affinely onto the model cycle, whose ``n_phases`` key
    frames span ``span_pct`` of the R-R interval.
    """

    r_peaks: np.ndarray = field(repr=False)
    n_phases: int = 20
    span_pct: tuple[float, float] = (-5.0, 106.0)

    def __post_init__(self):
        peaks = np.asarray(self.r_peaks, dtype=float)
        if peaks.size < 2:
            raise InsufficientDataError("phase clock needs at least two R peaks")
        if np.any(np.diff(peaks) <= 0):
            raise ValidationError("R-peak times must be strictly increasing")
        if self.n_phases < 2:
            raise ValidationError("need at least two model phases")
        object.__setattr__(self, "r_peaks", peaks)

    def beat_phase(self, time_s: float) -> float:
        """ECG phase in [0, 1): 0 at each R peak, wrapping at the next."""
        peaks = self.r_peaks
        k = int(np.searchsorted(peaks, time_s, side="right")) - 1
        k = min(max(k, 0), len(peaks) - 2)
        rri = peaks[k + 1] - peaks[k]
        p = (time_s - peaks[k]) / rri
        return float(p - math.floor(p))

    def model_percent(self, time_s: float) -> float:
        """Position in the model cycle as a percentage of the R-R interval."""
        lo, hi = self.span_pct
        return lo + (hi - lo) * self.beat_phase(time_s)


def phase_clock(ecg, n_phases: int = 20) -> PhaseClock:
    """Build the phase clock from a trace with detected R peaks."""
    return PhaseClock(np.asarray(ecg.r_peaks, dtype=float), n_phases)


def model_phase_at(clock: PhaseClock, time_s: float) -> tuple[int, float]:
    """Continuous model phase as (key-frame index, interpolation fraction)."""
    c = clock.beat_phase(time_s) * (clock.n_phases - 1)
    idx = int(math.floor(c))
    idx = min(idx, clock.n_phases - 2)
    return idx, c - idx
