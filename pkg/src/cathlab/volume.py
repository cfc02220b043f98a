"""Volumes and meshes: core containers and lossless file I/O.

Volume files are raw little-endian float32 in x-fastest order next to a JSON
sidecar carrying ``{dims, spacing_mm, origin_mm}``.  Surface meshes use the
v/f subset of ASCII OBJ; tetrahedral meshes use an ASCII list format with
``v x y z`` and ``t i j k l`` lines (zero-based indices).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, MeshError, ValidationError


@dataclass(frozen=True)
class AttenuationVolume:
    """Regular scalar grid of X-ray attenuation (1/mm).

    ``data`` has shape (nx, ny, nz); ``origin_mm`` is the world position of
    the centre of voxel (0, 0, 0).
    """

    data: np.ndarray = field(repr=False)
    spacing_mm: tuple[float, float, float]
    origin_mm: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"volume data must be 3-D, got shape {data.shape}")
        if any(s <= 0 for s in self.spacing_mm):
            raise ValidationError("spacing must be positive")
        if not np.all(np.isfinite(data)) or data.min() < 0:
            raise ValidationError("attenuation values must be finite and non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def voxel_centers_axis(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centres along one axis."""
        return self.origin_mm[axis] + self.spacing_mm[axis] * np.arange(self.dims[axis])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space (lo, hi) corners of the volume's outer voxel faces."""
        o = np.asarray(self.origin_mm)
        s = np.asarray(self.spacing_mm)
        n = np.asarray(self.dims)
        lo = o - 0.5 * s
        return lo, lo + n * s


def save_volume(vol: AttenuationVolume, path: str) -> None:
    """Write ``path`` (raw float32, x-fastest) and ``path + '.json'``."""
    flat = np.ascontiguousarray(vol.data.transpose(2, 1, 0), dtype="<f4")
    with open(path, "wb") as f:
        f.write(flat.tobytes())
    sidecar = {
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing_mm),
        "origin_mm": list(vol.origin_mm),
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_volume(path: str) -> AttenuationVolume:
    """Load a raw volume written by :func:`save_volume` (bit-exact round trip)."""
    try:
        with open(path + ".json") as f:
            sidecar = json.load(f)
        dims = tuple(int(d) for d in sidecar["dims"])
        spacing = tuple(float(s) for s in sidecar["spacing_mm"])
        origin = tuple(float(o) for o in sidecar["origin_mm"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise FileFormatError(f"bad volume sidecar for {path}: {e}") from e
    expected = dims[0] * dims[1] * dims[2]
    payload = os.path.getsize(path)
    if payload != expected * 4:
        raise FileFormatError(
            f"volume payload holds {payload // 4} float32 values, sidecar says {expected}"
        )
    flat = np.fromfile(path, dtype="<f4")
    data = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    return AttenuationVolume(np.ascontiguousarray(data), spacing, origin)


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh in world millimetres."""

    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError(f"triangle index out of range (have {len(v)} vertices)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def edge_counts(self) -> dict:
        """Count of each undirected edge over all triangles."""
        counts: dict = {}
        for a, b, c in self.triangles:
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_closed(self) -> bool:
        """True when every undirected edge is shared by exactly two triangles."""
        return bool(self.triangles.size) and all(
            n == 2 for n in self.edge_counts().values()
        )

    def orientation_consistent(self) -> bool:
        """True when every shared edge is traversed once in each direction."""
        directed: set = set()
        for a, b, c in self.triangles:
            for e in ((a, b), (b, c), (c, a)):
                if e in directed:
                    return False
                directed.add(e)
        return all((b, a) in directed for (a, b) in directed)

    def translated(self, offset) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)


@dataclass(frozen=True)
class TetMesh:
    """Tetrahedral mesh: vertices in mm, tets as vertex index quadruples."""

    vertices: np.ndarray = field(repr=False)
    tets: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError(f"tet index out of range (have {len(v)} vertices)")
        vols = tet_volumes(v, t)
        if t.size and np.any(np.abs(vols) < 1e-12):
            raise MeshError("degenerate (zero-volume) tetrahedra present")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of each tetrahedron (mm^3)."""
    if len(tets) == 0:
        return np.zeros(0)
    a, b, c, d = (vertices[tets[:, i]] for i in range(4))
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6.0


def save_mesh(mesh: SurfaceMesh, path: str) -> None:
    with open(path, "w") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.triangles:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def load_mesh(path: str, require_closed: bool = False) -> SurfaceMesh:
    """Read the v/f subset of an OBJ file.

    With ``require_closed``, a mesh with boundary or non-manifold edges (or
    inconsistent winding) is rejected instead of silently repaired.
    """
    verts, tris = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError(f"{path}:{ln}: malformed vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FileFormatError(f"{path}:{ln}: only triangle faces supported")
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    try:
        mesh = SurfaceMesh(np.array(verts, dtype=float).reshape(-1, 3), tris)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from e
    if require_closed:
        if not mesh.is_closed():
            raise MeshError(f"{path}: mesh is not closed (boundary or non-manifold edge)")
        if not mesh.orientation_consistent():
            raise MeshError(f"{path}: inconsistent triangle winding")
    return mesh


def save_tet_mesh(mesh: TetMesh, path: str) -> None:
    with open(path, "w") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c, d in mesh.tets:
            f.write(f"t {a} {b} {c} {d}\n")


def load_tet_mesh(path: str) -> TetMesh:
    verts, tets = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "t":
                if len(parts) != 5:
                    raise FileFormatError(f"{path}:{ln}: tet line needs four indices")
                tets.append([int(x) for x in parts[1:5]])
            else:
                raise FileFormatError(f"{path}:{ln}: unknown record {parts[0]!r}")
    try:
        return TetMesh(np.array(verts, dtype=float).reshape(-1, 3), tets)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from e
