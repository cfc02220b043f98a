"""Binocular reconstruction of guidewire-like curves.

Pipeline: tube-filter each view, extract an ordered one-pixel centerline,
match key points across views along epipolar lines with a dynamic-programming
continuity constraint, triangulate the matches, and fit a cubic B-spline with
outlier rejection.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bspline import BSplineCurve, chord_parameters, clamped_uniform_knots, fit_bspline
from .drr import Image2D
from .errors import GeometryError, MatchingError, ValidationError


# --- camera model -----------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with radial/tangential distortion.

    ``r`` and ``t`` map world to camera coordinates (``x_cam = r @ x + t``)
    with the optical axis along +z.
    """

    k: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float).reshape(3, 3)
        dist = np.asarray(self.dist, dtype=float).reshape(4)
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if k[0, 0] <= 0 or k[1, 1] <= 0 or abs(k[1, 0]) > 1e-9 or np.any(np.abs(k[2, :2]) > 1e-9):
            raise ValidationError("intrinsics must be upper-triangular with positive focals")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
            raise ValidationError("extrinsic rotation must be orthonormal with det 1")
        for name, a in (("k", k), ("dist", dist), ("r", r), ("t", t)):
            object.__setattr__(self, name, a)

    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.r.T @ self.t

    def projection_3x4(self) -> np.ndarray:
        return self.k @ np.hstack([self.r, self.t[:, None]])

    def to_json(self) -> dict:
        return {
            "K": self.k.tolist(),
            "D": self.dist.tolist(),
            "R": self.r.tolist(),
            "t": self.t.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CameraModel":
        return cls(obj["K"], obj["D"], obj["R"], obj["t"])


def camera_project(cam: CameraModel, x) -> tuple[float, float]:
    """Project a world point, applying distortion in normalised coordinates."""
    xc = cam.r @ np.asarray(x, dtype=float) + cam.t
    if xc[2] <= 0:
        raise GeometryError("point behind camera")
    xn, yn = xc[0] / xc[2], xc[1] / xc[2]
    k1, k2, p1, p2 = cam.dist
    r2 = xn * xn + yn * yn
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = xn * radial + 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
    u = cam.k[0, 0] * xd + cam.k[0, 1] * yd + cam.k[0, 2]
    v = cam.k[1, 1] * yd + cam.k[1, 2]
    return float(u), float(v)


def camera_project_points(cam: CameraModel, xs: np.ndarray) -> np.ndarray:
    return np.array([camera_project(cam, x) for x in np.atleast_2d(xs)])


def undistort_points(cam: CameraModel, pixels: np.ndarray) -> np.ndarray:
    """Ideal-pinhole pixel coordinates for observed (distorted) pixels."""
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    kinv = np.linalg.inv(cam.k)
    h = np.column_stack([px, np.ones(len(px))]) @ kinv.T
    xd, yd = h[:, 0], h[:, 1]
    k1, k2, p1, p2 = cam.dist
    xn, yn = xd.copy(), yd.copy()
    for _ in range(10):
        r2 = xn * xn + yn * yn
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        dx = 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
        dy = p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
        xn = (xd - dx) / radial
        yn = (yd - dy) / radial
    out = np.column_stack([xn, yn, np.ones(len(px))]) @ cam.k.T
    return out[:, :2]


def camera_from_pose(pose) -> CameraModel:
    """Equivalent pinhole camera of a gantry pose (zero distortion).

    ``camera_project(camera_from_pose(p), x)`` matches
    ``project_point(projection_matrix(p), x)`` for points in front of the
    source.
    """
    flip = np.diag([1.0, -1.0, -1.0])
    f_u = math.sqrt(2.0) * pose.n_u * pose.sid_mm / pose.fd_mm
    f_v = math.sqrt(2.0) * pose.n_v * pose.sid_mm / pose.fd_mm
    k = np.array([[f_u, 0.0, pose.n_u / 2.0], [0.0, f_v, pose.n_v / 2.0], [0.0, 0.0, 1.0]])
    tx, ty, tz = pose.table_mm
    r = flip @ pose.orientation()
    t = flip @ np.array([-tx, -ty, -pose.spd_mm - tz])
    return CameraModel(k, np.zeros(4), r, t)


# --- tube filtering and centerline extraction -------------------------------


def vesselness(img: Image2D, sigma: float, beta: float = 0.5, c: float | None = None) -> Image2D:
    """Tubular-structure likelihood from Hessian eigenvalues.

    Eigenvalues are ordered by magnitude (|l1| <= |l2|); pixels with l2 > 0
    (locally darker than their surroundings) score zero, the rest score
    ``exp(-(l1/l2)^2 / (2 beta^2)) * (1 - exp(-(l1^2+l2^2) / (2 c^2)))``.
    ``c`` defaults to half the image's maximum Hessian norm.
    """
    if sigma <= 0 or beta <= 0 or (c is not None and c <= 0):
        raise ValidationError("sigma, beta, c must be positive")
    # remove the mean first: the truncated derivative kernels leak a small
    # multiple of any constant offset
    p = img.pixels - img.pixels.mean()
    hxx = ndimage.gaussian_filter(p, sigma, order=(0, 2), mode="reflect")
    hyy = ndimage.gaussian_filter(p, sigma, order=(2, 0), mode="reflect")
    hxy = ndimage.gaussian_filter(p, sigma, order=(1, 1), mode="reflect")
    mean = (hxx + hyy) / 2.0
    disc = np.sqrt(((hxx - hyy) / 2.0) ** 2 + hxy * hxy)
    ea, eb = mean - disc, mean + disc
    swap = np.abs(ea) > np.abs(eb)
    lam1 = np.where(swap, eb, ea)
    lam2 = np.where(swap, ea, eb)
    s2 = lam1 * lam1 + lam2 * lam2
    # second derivatives at numerical-noise level carry no structure
    floor = 1e-10 * float(np.ptp(p)) + 1e-12 * float(np.abs(p).max()) + 1e-300
    if c is None:
        smax = math.sqrt(s2.max())
        if smax <= floor:
            return Image2D(np.zeros_like(p))
        c = smax / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rb2 = np.where(lam2 != 0.0, (lam1 / lam2) ** 2, 0.0)
    v = np.exp(-rb2 / (2.0 * beta * beta)) * (1.0 - np.exp(-s2 / (2.0 * c * c)))
    v[lam2 >= 0] = 0.0
    v[s2 <= floor * floor] = 0.0
    return Image2D(v)


def thin_mask(mask: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """Zhang-Suen morphological thinning to a one-pixel-wide skeleton."""
    img = np.asarray(mask, dtype=bool).copy()
    # neighbours clockwise from north: p2..p9
    shifts = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]

    def neighbours(a):
        padded = np.pad(a, 1)
        return [padded[1 + dy : 1 + dy + a.shape[0], 1 + dx : 1 + dx + a.shape[1]]
                for dy, dx in shifts]

    for _ in range(max_iter):
        changed = False
        for phase in (0, 1):
            nb = neighbours(img)
            b = sum(n.astype(np.int8) for n in nb)
            ring = nb + [nb[0]]
            a = sum(((~ring[i]) & ring[i + 1]).astype(np.int8) for i in range(8))
            p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
            if phase == 0:
                cond = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                cond = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            kill = img & (b >= 2) & (b <= 6) & (a == 1) & cond
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            break
    return img


@dataclass(frozen=True)
class Centerline2D:
    """Ordered key points along a 2-D curve with local tangent and curvature.

    Points are (x, y) pixel coordinates (x = column).  ``dense_*`` carry the
    full smoothed curve the key points were sampled from; correspondence
    search runs against the dense samples so it is not limited to key-point
    granularity.
    """

    points: np.ndarray = field(repr=False)
    tangents: np.ndarray = field(repr=False)
    curvatures: np.ndarray = field(repr=False)
    image_shape: tuple[int, int]
    dense_points: np.ndarray | None = field(repr=False, default=None)
    dense_tangents: np.ndarray | None = field(repr=False, default=None)
    dense_curvatures: np.ndarray | None = field(repr=False, default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(pts) < 2:
            raise ValidationError("centerline needs at least 2 key points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "tangents", np.asarray(self.tangents, dtype=float))
        object.__setattr__(self, "curvatures", np.asarray(self.curvatures, dtype=float))
        if self.dense_points is not None:
            object.__setattr__(
                self, "dense_points", np.atleast_2d(np.asarray(self.dense_points, dtype=float))
            )

    def arc_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


def _longest_skeleton_path(skel: np.ndarray) -> list[tuple[int, int]]:
    """Longest simple path through a skeleton via double breadth-first search."""
    coords = list(zip(*np.nonzero(skel)))
    if not coords:
        raise ValidationError("empty skeleton")
    pix = set(coords)

    def nbrs(p):
        y, x = p
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dy or dx) and (y + dy, x + dx) in pix:
                    yield (y + dy, x + dx)

    def bfs(start):
        seen = {start: None}
        queue = [start]
        last = start
        while queue:
            nxt = []
            for p in queue:
                for q in nbrs(p):
                    if q not in seen:
                        seen[q] = p
                        nxt.append(q)
            if nxt:
                last = nxt[-1]
            queue = nxt
        return last, seen

    a, _ = bfs(coords[0])
    b, parents = bfs(a)
    path = [b]
    while parents[path[-1]] is not None:
        path.append(parents[path[-1]])
    return path


def extract_centerline(
    mask: np.ndarray,
    min_dominance: float = 0.6,
    spacing_bounds_px: tuple[float, float] = (3.0, 25.0),
    smoothness: float = 1.0,
) -> Centerline2D:
    """Ordered, curvature-adaptively sampled centerline of a curve-like mask.

    The largest 8-connected component is thinned to one pixel width, the
    longest skeleton path is smoothed with a cubic B-spline, and key points
    are placed with spacing ``clamp(2 / curvature, *spacing_bounds_px)``.

    Raises on an empty mask and when no path covers at least
    ``min_dominance`` of the skeleton (severe branching).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValidationError("empty mask")
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n > 1:
        sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    skel = thin_mask(mask)
    path = _longest_skeleton_path(skel)
    if len(path) < 2:
        raise ValidationError("skeleton collapsed to a point")
    if len(path) < min_dominance * skel.sum():
        raise ValidationError("branching skeleton with no dominant path")
    pts = np.array([(x, y) for (y, x) in path], dtype=float)

    n_ctrl = max(8, len(pts) // 10)
    if len(pts) >= 4:
        curve = fit_bspline(pts, n_ctrl, smoothness=smoothness)
        dense = curve.sample(max(4 * len(pts), 200))
    else:
        dense = pts
    d1 = np.gradient(dense, axis=0)
    d2 = np.gradient(d1, axis=0)
    speed2 = (d1 ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa_dense = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed2 ** 1.5
    kappa_dense[~np.isfinite(kappa_dense)] = 0.0
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])

    lo_sp, hi_sp = spacing_bounds_px
    keys = [0]
    s = 0.0
    while True:
        # spacing from the strongest curvature within the lookahead window
        window = slice(keys[-1], int(np.searchsorted(arc, s + hi_sp)) + 1)
        kappa_here = float(kappa_dense[window].max())
        step = np.clip(2.0 / max(kappa_here, 1e-9), lo_sp, hi_sp)
        s += step
        if s >= arc[-1]:
            break
        keys.append(int(np.searchsorted(arc, s)))
    if keys[-1] != len(dense) - 1:
        keys.append(len(dense) - 1)
    keys = sorted(set(keys))

    tangents = d1[keys] / np.maximum(np.linalg.norm(d1[keys], axis=1, keepdims=True), 1e-12)
    dense_tangents = d1 / np.maximum(np.linalg.norm(d1, axis=1, keepdims=True), 1e-12)
    return Centerline2D(
        points=dense[keys],
        tangents=tangents,
        curvatures=kappa_dense[keys],
        image_shape=mask.shape,
        dense_points=dense,
        dense_tangents=dense_tangents,
        dense_curvatures=kappa_dense,
    )


# --- stereo matching ---------------------------------------------------------


def ncc(patch1: np.ndarray, patch2: np.ndarray) -> float | None:
    """Normalised cross-correlation; None when either patch has no variance."""
    a = np.asarray(patch1, dtype=float).ravel()
    b = np.asarray(patch2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError("patches must have equal size")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b) / (na * nb))


def struct_similarity(t1, kappa1, t2, kappa2, kappa0: float = 0.05) -> float:
    """Local structural agreement: tangent alignment times curvature match."""
    c = abs(float(np.dot(t1, t2)))
    return c * math.exp(-abs(float(kappa1) - float(kappa2)) / kappa0)


def match_cost(
    patch1,
    patch2,
    alpha: float = 0.5,
    struct1: tuple | None = None,
    struct2: tuple | None = None,
    kappa0: float = 0.05,
) -> float:
    """Blend of grayscale and structural similarity, in [-1, 1].

    ``struct1``/``struct2`` are (tangent, curvature) pairs.  A zero-variance
    patch falls back to the structural term alone.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must be in [0, 1]")
    s = None
    if struct1 is not None and struct2 is not None:
        s = struct_similarity(struct1[0], struct1[1], struct2[0], struct2[1], kappa0)
    n = None
    if patch1 is not None and patch2 is not None:
        n = ncc(patch1, patch2)
    if n is None and s is None:
        return 0.0
    if n is None:
        return s
    if s is None:
        return n
    return alpha * n + (1.0 - alpha) * s


def fundamental_matrix(cam1: CameraModel, cam2: CameraModel) -> np.ndarray:
    """Fundamental matrix mapping view-1 pixels to epipolar lines in view 2."""
    r_rel = cam2.r @ cam1.r.T
    t_rel = cam2.t - r_rel @ cam1.t
    if np.linalg.norm(t_rel) < 1e-9:
        raise GeometryError("cameras share a centre; epipolar geometry undefined")
    tx = np.array(
        [
            [0.0, -t_rel[2], t_rel[1]],
            [t_rel[2], 0.0, -t_rel[0]],
            [-t_rel[1], t_rel[0], 0.0],
        ]
    )
    return np.linalg.inv(cam2.k).T @ tx @ r_rel @ np.linalg.inv(cam1.k)


def _patch(pixels, pt, half):
    x, y = int(round(pt[0])), int(round(pt[1]))
    h, w = pixels.shape
    if x - half < 0 or y - half < 0 or x + half >= w or y + half >= h:
        return None
    return pixels[y - half : y + half + 1, x - half : x + half + 1]


@dataclass(frozen=True)
class MatchSet:
    """Monotone stereo correspondences.

    ``indices1`` reference the first curve's key points, ``indices2`` the
    second curve's (dense) samples; ``points*`` are the matched pixel
    coordinates.
    """

    indices1: np.ndarray = field(repr=False)
    indices2: np.ndarray = field(repr=False)
    points1: np.ndarray = field(repr=False)
    points2: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices1)

    def __iter__(self):
        return iter(zip(self.indices1.tolist(), self.indices2.tolist()))


def _as_matchable(c, dense: bool):
    if isinstance(c, Centerline2D):
        if dense and c.dense_points is not None:
            return c.dense_points, c.dense_tangents, c.dense_curvatures
        return c.points, c.tangents, c.curvatures
    pts = np.atleast_2d(np.asarray(c, dtype=float))
    return pts, None, None


def match_curves_dp(
    c1,
    c2,
    cam1: CameraModel,
    cam2: CameraModel,
    images: tuple[Image2D, Image2D] | None = None,
    alpha: float = 0.5,
    lam: float = 1.0,
    band_px: float = 2.0,
    ncc_window: int = 11,
    kappa0: float = 0.05,
    epipolar_weight: float = 4.0,
) -> list[tuple[int, int]]:
    """Order-preserving correspondence between two centerlines.

    Candidates for each view-1 key point are the view-2 key points within
    ``band_px`` of its epipolar line; dynamic programming then minimises
    ``sum(1 - C) + lam * sum(D)`` over monotone assignments, where D is the
    squared change of the arc-length disparity between successive matches
    (arc lengths counted in key-point units).  Within the band, residual
    epipolar distance is folded into the per-match cost with weight
    ``epipolar_weight`` (appearance alone cannot localise a correspondence
    along a near-featureless wire).

    Raises MatchingError when more than half the key points have no
    epipolar candidate.

    Returns a :class:`MatchSet`; its index pairs reference the first curve's
    key points and the second curve's dense samples.
    """
    pts1, tan1, kap1 = _as_matchable(c1, dense=False)
    pts2, tan2, kap2 = _as_matchable(c2, dense=True)
    u1 = undistort_points(cam1, pts1)
    u2 = undistort_points(cam2, pts2)
    f = fundamental_matrix(cam1, cam2)

    lines = np.column_stack([u1, np.ones(len(u1))]) @ f.T
    norms = np.linalg.norm(lines[:, :2], axis=1)
    norms[norms == 0.0] = 1.0
    dist = np.abs(
        lines @ np.column_stack([u2, np.ones(len(u2))]).T
    ) / norms[:, None]

    candidates = [np.flatnonzero(dist[i] <= band_px) for i in range(len(pts1))]
    have = [i for i, cand in enumerate(candidates) if len(cand)]
    if len(have) < 0.5 * len(pts1):
        raise MatchingError(
            f"epipolar band matched only {len(have)}/{len(pts1)} key points"
        )

    half = ncc_window // 2
    img1 = images[0].pixels if images else None
    img2 = images[1].pixels if images else None

    def similarity(i, j, flip_tangent):
        p1 = _patch(img1, pts1[i], half) if img1 is not None else None
        p2 = _patch(img2, pts2[j], half) if img2 is not None else None
        s1 = (tan1[i], kap1[i]) if tan1 is not None else None
        s2 = (tan2[j], kap2[j]) if tan2 is not None else None
        del flip_tangent  # tangent alignment is sign-invariant
        return match_cost(p1, p2, alpha, s1, s2, kappa0)

    # arc-length positions in key-point units, for the disparity term
    def positions(pts):
        if len(pts) == 1:
            return np.zeros(1)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        mean_step = s[-1] / (len(pts) - 1)
        return s / max(mean_step, 1e-9)

    s1_pos = positions(pts1)
    s2_pos = positions(pts2)
    n2 = len(pts2)

    def run_dp(reverse: bool):
        """Forward DP over monotone assignments; j runs along c2 in the given
        orientation.  Returns (energy, chain in original indices)."""
        def rank(j):
            return n2 - 1 - j if reverse else j

        def pos2(j):
            return s2_pos[-1] - s2_pos[j] if reverse else s2_pos[j]

        prev_states: list[tuple[int, int]] = []
        table: dict[tuple[int, int], tuple[float, tuple | None]] = {}
        for i in have:
            new_states = []
            for j in candidates[i]:
                unary = (
                    1.0
                    - similarity(i, j, reverse)
                    + epipolar_weight * (dist[i, j] / band_px) ** 2
                )
                disp = pos2(j) - s1_pos[i]
                if not prev_states:
                    table[(i, j)] = (unary, None)
                else:
                    best_cost, best_prev = np.inf, None
                    for (pi, pj) in prev_states:
                        if rank(pj) > rank(j):
                            continue
                        pcost, _ = table[(pi, pj)]
                        pdisp = pos2(pj) - s1_pos[pi]
                        cost = pcost + unary + lam * (disp - pdisp) ** 2
                        if cost < best_cost:
                            best_cost, best_prev = cost, (pi, pj)
                    if best_prev is None:
                        continue
                    table[(i, j)] = (best_cost, best_prev)
                new_states.append((i, j))
            if new_states:
                prev_states = new_states
        if not prev_states:
            return np.inf, []
        end = min(prev_states, key=lambda st: table[st][0])
        energy = table[end][0]
        chain = [end]
        while table[chain[-1]][1] is not None:
            chain.append(table[chain[-1]][1])
        return energy, list(reversed(chain))

    # the second centerline's traversal direction is arbitrary: keep the
    # orientation that matches more of the curve (per-match energy breaks ties)
    e_fwd, chain_fwd = run_dp(False)
    e_rev, chain_rev = run_dp(True)
    if not chain_fwd and not chain_rev:
        raise MatchingError("dynamic programme found no feasible assignment")
    key_fwd = (-len(chain_fwd), e_fwd / max(len(chain_fwd), 1))
    key_rev = (-len(chain_rev), e_rev / max(len(chain_rev), 1))
    chain = chain_fwd if key_fwd <= key_rev else chain_rev
    i_idx = np.array([i for i, _ in chain], dtype=np.int64)
    j_idx = np.array([j for _, j in chain], dtype=np.int64)
    return MatchSet(i_idx, j_idx, pts1[i_idx], pts2[j_idx])


def triangulate(cam1: CameraModel, cam2: CameraModel, p1, p2) -> np.ndarray:
    """Linear (DLT) triangulation of an undistorted pixel correspondence."""
    if np.linalg.norm(cam1.center() - cam2.center()) < 1e-9:
        raise GeometryError("zero baseline: cameras coincide")
    pm1, pm2 = cam1.projection_3x4(), cam2.projection_3x4()
    u1, v1 = p1
    u2, v2 = p2
    a = np.stack(
        [
            u1 * pm1[2] - pm1[0],
            v1 * pm1[2] - pm1[1],
            u2 * pm2[2] - pm2[0],
            v2 * pm2[2] - pm2[1],
        ]
    )
    _, _, vt = np.linalg.svd(a)
    x = vt[-1]
    if abs(x[3]) < 1e-12:
        raise GeometryError("rays are parallel; point at infinity")
    return x[:3] / x[3]


def ray_angle_deg(cam1: CameraModel, cam2: CameraModel, p1, p2) -> float:
    """Angle between the two back-projected viewing rays, in degrees."""
    def ray(cam, p):
        n = np.linalg.inv(cam.k) @ np.array([p[0], p[1], 1.0])
        d = cam.r.T @ n
        return d / np.linalg.norm(d)

    cosang = np.clip(np.dot(ray(cam1, p1), ray(cam2, p2)), -1.0, 1.0)
    return math.degrees(math.acos(abs(cosang)))


# --- curve fitting -----------------------------------------------------------


@dataclass(frozen=True)
class GuidewireCurve(BSplineCurve):
    """Reconstructed 3-D device curve (cubic B-spline in millimetres)."""

    def __post_init__(self):
        super().__post_init__()
        if self.control_points.shape[1] != 3:
            raise ValidationError("guidewire curve must be 3-D")

    def to_json(self) -> dict:
        return {
            "control_points": self.control_points.tolist(),
            "knots": self.knots.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GuidewireCurve":
        return cls(np.asarray(obj["control_points"]), np.asarray(obj["knots"]))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "GuidewireCurve":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def save_polyline_csv(self, path: str, n: int = 200) -> None:
        pts = self.sample(n)
        with open(path, "w") as f:
            f.write("x_mm,y_mm,z_mm\n")
            for x, y, z in pts:
                f.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")


def fit_bspline_ransac(
    points: np.ndarray,
    n_ctrl: int | None = None,
    smoothness: float = 1e-3,
    max_rounds: int = 10,
    seed: int = 0,
) -> tuple[GuidewireCurve, dict]:
    """Robust cubic B-spline fit of an ordered 3-D point run.

    Repeatedly fits on the current inliers and rejects points farther than
    three robust standard deviations from the curve; the procedure is
    deterministic for a given input (``seed`` is accepted for configuration
    compatibility).  Returns the curve and a diagnostics dict with the inlier
    mask and the final maximum inlier distance.
    """
    del seed  # deterministic rejection loop; kept for config stability
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 8:
        raise ValidationError(f"need at least 8 points, got {len(pts)}")
    if n_ctrl is None:
        n_ctrl = max(8, len(pts) // 10)
    scale = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    floor = max(1e-9, 1e-9 * scale)

    inliers = np.ones(len(pts), dtype=bool)
    curve = None
    for _ in range(max_rounds):
        sub = pts[inliers]
        base = fit_bspline(sub, n_ctrl, smoothness, params=chord_parameters(sub))
        curve = GuidewireCurve(base.control_points, base.knots)
        d = curve.distances_to(pts)
        med = np.median(d[inliers])
        sigma = 1.4826 * np.median(np.abs(d[inliers] - med))
        new_inliers = d <= max(3.0 * (sigma + med), floor)
        if new_inliers.sum() < 8:
            raise ValidationError("fewer than 8 inliers after outlier rejection")
        if np.array_equal(new_inliers, inliers):
            break
        inliers = new_inliers
    diag = {
        "inliers": inliers,
        "n_inliers": int(inliers.sum()),
        "max_inlier_distance": float(curve.distances_to(pts[inliers]).max()),
    }
    return curve, diag


# --- full pipeline -----------------------------------------------------------


@dataclass(frozen=True)
class StereoParams:
    sigmas: tuple[float, ...] = (1.0, 2.0, 3.0)
    beta: float = 0.5
    invert: bool = True
    alpha: float = 0.5
    lam: float = 1.0
    band_px: float = 2.0
    ncc_window: int = 11
    kappa0: float = 0.05
    smoothness: float = 1e-3
    degraded_angle_deg: float = 10.0
    seed: int = 0


def _tube_response(img: Image2D, params: StereoParams) -> Image2D:
    p = img.pixels
    if params.invert:
        p = p.max() - p
    work = Image2D(p)
    v = None
    for s in params.sigmas:
        r = vesselness(work, s, params.beta).pixels
        v = r if v is None else np.maximum(v, r)
    return Image2D(v)


def reconstruct_guidewire(
    img1: Image2D,
    img2: Image2D,
    cam1: CameraModel,
    cam2: CameraModel,
    params: StereoParams = StereoParams(),
) -> tuple[GuidewireCurve, dict]:
    """Full stereo pipeline on a synchronised image pair.

    Filter -> threshold -> centerline -> epipolar DP matching ->
    triangulation -> robust spline fit.  Returns the curve plus per-stage
    diagnostics; a median viewing-ray angle below
    ``params.degraded_angle_deg`` sets the ``degraded_accuracy`` flag.
    """
    from .enhance import otsu_threshold

    responses = []
    masks = []
    for img in (img1, img2):
        v = _tube_response(img, params)
        pos = v.pixels[v.pixels > 0]
        if pos.size == 0:
            raise ValidationError("no tubular response; cannot extract centerline")
        masks.append(v.pixels >= otsu_threshold(pos))
        responses.append(v)
    line1 = extract_centerline(masks[0])
    line2 = extract_centerline(masks[1])

    work1 = Image2D(img1.pixels.max() - img1.pixels) if params.invert else img1
    work2 = Image2D(img2.pixels.max() - img2.pixels) if params.invert else img2
    matches = match_curves_dp(
        line1,
        line2,
        cam1,
        cam2,
        images=(work1, work2),
        alpha=params.alpha,
        lam=params.lam,
        band_px=params.band_px,
        ncc_window=params.ncc_window,
        kappa0=params.kappa0,
    )

    u1 = undistort_points(cam1, matches.points1)
    u2 = undistort_points(cam2, matches.points2)
    pts3d = np.array([triangulate(cam1, cam2, a, b) for a, b in zip(u1, u2)])
    angles = [ray_angle_deg(cam1, cam2, a, b) for a, b in zip(u1, u2)]
    median_angle = float(np.median(angles))
    degraded = median_angle < params.degraded_angle_deg
    if degraded:
        warnings.warn(
            f"stereo rays separated by only {median_angle:.1f} deg; "
            "triangulation is poorly conditioned",
            stacklevel=2,
        )

    curve, fit_diag = fit_bspline_ransac(
        pts3d, smoothness=params.smoothness, seed=params.seed
    )
    diagnostics = {
        "n_keypoints": (len(line1.points), len(line2.points)),
        "n_matches": len(matches),
        "median_ray_angle_deg": median_angle,
        "degraded_accuracy": degraded,
        **fit_diag,
    }
    return curve, diagnostics
