"""Shared synthetic-scene builders for the test suite."""

import numpy as np
import pytest

from cathlab.geometry import CArmPose
from cathlab.phantom import PhantomSpec, generate_vessel_phantom, straight_tube_spec
from cathlab.volume import AttenuationVolume, SurfaceMesh, TetMesh


# --- meshes -------------------------------------------------------------


def icosphere(radius_mm: float = 10.0, subdivisions: int = 4) -> SurfaceMesh:
    """Subdivided icosahedron projected to a sphere (outward oriented)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = (verts[a] + verts[b]) / 2.0
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
        cache.clear()
    return SurfaceMesh(radius_mm * np.asarray(verts), np.asarray(faces, dtype=np.int64))


_EVEN_TETS = ((0, 1, 3, 5), (0, 2, 3, 6), (0, 4, 5, 6), (3, 5, 6, 7), (0, 3, 5, 6))


def _cell_tets(parity: int):
    if parity == 0:
        return _EVEN_TETS
    # mirror through x: flip the low bit of each corner index
    return tuple(tuple(c ^ 1 for c in tet) for tet in _EVEN_TETS)


def box_tet_mesh(nx: int, ny: int, nz: int, spacing: float = 1.0,
                 keep=None) -> TetMesh:
    """Structured tet mesh of a box, five tets per cell with alternating
    parity (mirror-symmetric about mid-planes for even cell counts).

    ``keep(cx, cy, cz)`` filters cells by their centre coordinates (mm).
    """
    corners = np.array(
        [[x, y, z] for z in range(nz + 1) for y in range(ny + 1) for x in range(nx + 1)],
        dtype=float,
    ) * spacing

    def vid(x, y, z):
        return x + (nx + 1) * (y + (ny + 1) * z)

    tets = []
    used = np.zeros(len(corners), dtype=bool)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                centre = (np.array([i, j, k]) + 0.5) * spacing
                if keep is not None and not keep(*centre):
                    continue
                corner_ids = [
                    vid(i + dx, j + dy, k + dz)
                    for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)
                ]
                # corner order matches bit layout x + 2y + 4z
                for tet in _cell_tets((i + j + k) % 2):
                    ids = [corner_ids[c] for c in tet]
                    tets.append(ids)
                    used[ids] = True
    remap = -np.ones(len(corners), dtype=np.int64)
    remap[used] = np.arange(used.sum())
    tets = remap[np.asarray(tets, dtype=np.int64)]
    return TetMesh(corners[used], tets)


def bar_tet_mesh(length_cells=12, side_cells=4, spacing=1.0) -> TetMesh:
    return box_tet_mesh(length_cells, side_cells, side_cells, spacing)


def tube_tet_mesh(length_cells=12, side_cells=8, spacing=1.0) -> TetMesh:
    r_out = side_cells / 2.0 * spacing
    r_in = r_out * 0.45
    cy = cz = side_cells / 2.0 * spacing

    def keep(cx_, cy_, cz_):
        r = np.hypot(cy_ - cy, cz_ - cz)
        return r_in <= r <= r_out

    return box_tet_mesh(length_cells, side_cells, side_cells, spacing, keep=keep)


def branched_tet_mesh(spacing=1.0) -> TetMesh:
    """Two solid bars joined in a Y: trunk along x, branch along the diagonal."""
    n = 14

    def keep(cx, cy, cz):
        on_trunk = abs(cy - 3.0) <= 1.5 and abs(cz - 2.0) <= 1.5 and cx <= 9.0
        t = cx - 7.0
        on_branch = (
            0.0 <= t <= 7.0
            and abs(cy - (3.0 + 0.8 * t)) <= 1.5
            and abs(cz - 2.0) <= 1.5
        )
        return on_trunk or on_branch

    return box_tet_mesh(n, 14, 4, spacing, keep=keep)


# --- volumes / scenes -----------------------------------------------------


def vessel_over_body_scene(n=96, spacing=1.0, noise_sigma_frac=0.02):
    """Tube phantom inside a thick body cylinder: the DRR shows a vessel over
    a structured background.  Returns everything the enhancement and stereo
    tests need."""
    from scipy import ndimage

    from cathlab.drr import render_drr

    body_spec = PhantomSpec(
        np.array([[0.0, 0.0, -15.0], [0.0, 0.0, 0.0], [0.0, 0.0, 15.0]]),
        30.0,
        dims=(n, n, n),
        spacing_mm=(spacing,) * 3,
        vessel_attenuation=0.004,
    )
    body, _, _ = generate_vessel_phantom(body_spec)
    tube_spec = straight_tube_spec(
        length_mm=60.0, radius_mm=2.0, dims=(n, n, n), spacing_mm=spacing,
        vessel_attenuation=0.016,
    )
    tube, centerline, _ = generate_vessel_phantom(tube_spec)
    vol = AttenuationVolume(body.data + tube.data, body.spacing_mm, body.origin_mm)
    pose = CArmPose(n_u=192, n_v=192, fd_mm=260.0)
    clean = render_drr(vol, pose)
    tube_img = render_drr(tube, pose)
    body_img = render_drr(body, pose)
    fg = tube_img.pixels > 0.5 * tube_img.pixels.max()
    near = ndimage.binary_dilation(fg, iterations=12)
    bg = (
        near
        & ~ndimage.binary_dilation(fg, iterations=4)
        & (body_img.pixels > 0.3 * body_img.pixels.max())
    )
    return {
        "volume": vol,
        "tube_volume": tube,
        "centerline": centerline,
        "pose": pose,
        "clean": clean,
        "fg": fg,
        "bg": bg,
        "noise_sigma": noise_sigma_frac * clean.pixels.max(),
    }


@pytest.fixture(scope="session")
def enhancement_scene():
    return vessel_over_body_scene()
