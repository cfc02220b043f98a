"""Scene persistence and live sessions.

A scene is a directory: per-phase attenuation volumes (raw + sidecar), an
ECG trace, ground-truth centerlines when the scene was synthesised, and a
``scene.json`` manifest tying them together.  Sessions hold the mutable
viewing state (pose, playback) with optimistic version checking.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from ..drr import EmptySpaceOctree, Image2D, build_octree, render_drr
from ..dynamics import PhaseClock
from ..enhance import enhance_pipeline
from ..errors import FileFormatError, ValidationError
from ..geometry import CArmPose
from ..hemodynamics import ECGTrace, HemodynamicsReport, hemodynamics_report, mesh_volume, synthesize_ecg
from ..phantom import (
    PhantomSpec,
    beating_tube_phases,
    generate_vessel_phantom,
    helix_spec,
    straight_tube_spec,
)
from ..volume import AttenuationVolume, load_volume, save_mesh, save_volume
from .config import Config

MANIFEST = "scene.json"


def phantom_spec_from_json(obj: dict) -> tuple[PhantomSpec, dict]:
    """Build a phantom spec from its JSON description.

    Either ``preset`` ("straight_tube" or "helix") with keyword overrides, or
    an explicit ``centerline_mm`` control polygon.  Returns the spec plus the
    scene-level options (phases, heart rate, seed).
    """
    opts = {
        "n_phases": int(obj.get("n_phases", 1)),
        "beat_amplitude_mm": float(obj.get("beat_amplitude_mm", 3.0)),
        "hr_bpm": float(obj.get("hr_bpm", 51.0)),
        "ecg_duration_s": float(obj.get("ecg_duration_s", 20.0)),
        "seed": int(obj.get("seed", 0)),
    }
    preset = obj.get("preset")
    keys = {"dims", "spacing_mm", "vessel_attenuation", "background_attenuation"}
    if preset == "straight_tube":
        kwargs = {k: obj[k] for k in keys & set(obj)}
        kwargs.update({k: obj[k] for k in ("length_mm", "radius_mm", "axis") if k in obj})
        if "dims" in kwargs:
            kwargs["dims"] = tuple(kwargs["dims"])
        spec = straight_tube_spec(**kwargs)
    elif preset == "helix":
        kwargs = {k: obj[k] for k in ("radius_mm", "pitch_mm", "turns", "tube_radius_mm", "spacing_mm") if k in obj}
        if "dims" in obj:
            kwargs["dims"] = tuple(obj["dims"])
        spec = helix_spec(**kwargs)
    elif "centerline_mm" in obj:
        spec = PhantomSpec(
            np.asarray(obj["centerline_mm"], dtype=float),
            np.asarray(obj.get("radius_mm", 2.0)),
            dims=tuple(obj.get("dims", (128, 128, 128))),
            spacing_mm=tuple(
                obj["spacing_mm"] if isinstance(obj.get("spacing_mm"), (list, tuple))
                else (obj.get("spacing_mm", 0.5),) * 3
            ),
            origin_mm=tuple(obj["origin_mm"]) if "origin_mm" in obj else None,
            vessel_attenuation=float(obj.get("vessel_attenuation", 0.02)),
            background_attenuation=float(obj.get("background_attenuation", 0.0)),
        )
    else:
        raise ValidationError("phantom spec needs a 'preset' or a 'centerline_mm'")
    return spec, opts


def generate_scene(spec_obj: dict, out_dir: str, scene_id: str = "phantom") -> str:
    """Voxelise a phantom spec into a complete on-disk scene.

    Writes per-phase volumes, ground-truth centerlines, the tube surface
    mesh of phase 0, a synthetic ECG at the requested heart rate, and the
    manifest.  Returns the manifest path.
    """
    spec, opts = phantom_spec_from_json(spec_obj)
    os.makedirs(out_dir, exist_ok=True)
    n_phases = opts["n_phases"]
    if n_phases > 1:
        phases = beating_tube_phases(spec, n_phases, opts["beat_amplitude_mm"])
    else:
        phases = [generate_vessel_phantom(spec)]

    volume_files = []
    centerline_files = []
    for k, (vol, centerline, mesh) in enumerate(phases):
        vname = f"volume_{k:03d}.raw"
        save_volume(vol, os.path.join(out_dir, vname))
        volume_files.append(vname)
        cname = f"centerline_{k:03d}.csv"
        with open(os.path.join(out_dir, cname), "w") as f:
            f.write("x_mm,y_mm,z_mm\n")
            for x, y, z in centerline:
                f.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")
        centerline_files.append(cname)
        if k == 0:
            save_mesh(mesh, os.path.join(out_dir, "tube_000.obj"))

    samples, _ = synthesize_ecg(
        opts["ecg_duration_s"], opts["hr_bpm"], 500.0, snr_db=20.0, seed=opts["seed"]
    )
    trace = ECGTrace.from_signal(samples, 500.0)
    trace.save_csv(os.path.join(out_dir, "ecg.csv"))

    # demo left-ventricle volume curve over one cycle at the scene heart rate
    period = 60.0 / opts["hr_bpm"]
    ts = np.linspace(-0.05 * period, 1.06 * period, max(n_phases, 20))
    lv = 100.0 + 50.0 * np.cos(2.0 * np.pi * ts / period)
    with open(os.path.join(out_dir, "lv_volumes.csv"), "w") as f:
        f.write("time_s,volume_ml\n")
        for t, v in zip(ts, lv):
            f.write(f"{float(t)!r},{float(v)!r}\n")

    manifest = {
        "id": scene_id,
        "volumes": volume_files,
        "centerlines": centerline_files,
        "ecg": "ecg.csv",
        "lv_volumes": "lv_volumes.csv",
        "default_pose": CArmPose().to_json(),
        "phantom_spec": spec_obj,
    }
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def load_centerline_csv(path: str) -> np.ndarray:
    """Read a numeric CSV, skipping header and comment lines."""
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                continue  # header line
    return np.asarray(rows)


class Scene:
    """A loaded scene: per-phase volumes, ECG, phase clock, default pose."""

    def __init__(self, directory: str, config: Config | None = None):
        self.directory = os.path.abspath(directory)
        self.config = config or Config()
        manifest_path = os.path.join(self.directory, MANIFEST)
        if not os.path.exists(manifest_path):
            raise FileFormatError(f"no {MANIFEST} in {directory}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        self.scene_id = self.manifest.get("id", os.path.basename(self.directory))
        names = self.manifest.get("volumes")
        if not names:
            raise FileFormatError(f"{manifest_path}: manifest lists no volumes")
        self.volumes: list[AttenuationVolume] = [
            load_volume(os.path.join(self.directory, n)) for n in names
        ]
        self.octrees: list[EmptySpaceOctree | None] = [None] * len(self.volumes)
        self.ecg: ECGTrace | None = None
        if self.manifest.get("ecg"):
            self.ecg = ECGTrace.load_csv(os.path.join(self.directory, self.manifest["ecg"]))
        self.default_pose = (
            CArmPose.from_json(self.manifest["default_pose"])
            if "default_pose" in self.manifest
            else CArmPose()
        )
        self.clock: PhaseClock | None = None
        if self.ecg is not None and len(self.ecg.r_peaks) >= 2:
            self.clock = PhaseClock(self.ecg.r_peaks, max(len(self.volumes), 2))
        self._octree_lock = threading.Lock()

    @property
    def n_phases(self) -> int:
        return len(self.volumes)

    def centerline(self, phase_index: int = 0) -> np.ndarray | None:
        names = self.manifest.get("centerlines") or []
        if phase_index >= len(names):
            return None
        return load_centerline_csv(os.path.join(self.directory, names[phase_index]))

    def volume_at(self, phase: float) -> tuple[int, AttenuationVolume]:
        """Nearest phase volume for a cycle fraction in [0, 1)."""
        if not 0.0 <= phase <= 1.0:
            raise ValidationError("phase must lie in [0, 1]")
        idx = int(round(phase * (self.n_phases - 1))) if self.n_phases > 1 else 0
        return idx, self.volumes[idx]

    def _octree(self, idx: int) -> EmptySpaceOctree:
        with self._octree_lock:
            if self.octrees[idx] is None:
                rc = self.config.renderer
                self.octrees[idx] = build_octree(
                    self.volumes[idx], rc.empty_threshold, rc.octree_leaf_block
                )
            return self.octrees[idx]

    def render(
        self,
        pose: CArmPose,
        phase: float = 0.0,
        enhance: bool = False,
    ) -> Image2D:
        idx, vol = self.volume_at(phase)
        rc = self.config.renderer
        accel = self._octree(idx) if rc.use_octree else None
        img = render_drr(vol, pose, accel=accel, n_threads=rc.n_threads, invert=rc.invert)
        if enhance:
            img, _ = enhance_pipeline(img, params=self.config.enhance)
        return img

    def volume_time_samples(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(times, volumes_ml) backing the hemodynamics report, if any."""
        if self.manifest.get("lv_volumes"):
            rows = load_centerline_csv(os.path.join(self.directory, self.manifest["lv_volumes"]))
            return rows[:, 0], rows[:, 1]
        if self.n_phases >= 4 and self.ecg is not None and len(self.ecg.r_peaks) >= 2:
            rri = float(np.diff(self.ecg.r_peaks).mean())
            times = np.linspace(0.0, rri, self.n_phases)
            voxel_ml = float(np.prod(self.volumes[0].spacing_mm)) / 1000.0
            vols = np.array([float(np.count_nonzero(v.data)) * voxel_ml for v in self.volumes])
            return times, vols
        return None

    def hemodynamics(self) -> HemodynamicsReport:
        """Report from the scene's chamber volume-time samples.

        Uses the bundled volume curve when the manifest names one, otherwise
        falls back to a voxel census of the phase volumes.
        """
        if self.clock is None:
            raise ValidationError("scene has no usable ECG; cannot build the report")
        samples = self.volume_time_samples()
        if samples is None:
            raise ValidationError("scene carries no volume-time data")
        times, vols = samples
        return hemodynamics_report(times, vols, ecg=self.ecg)


@dataclass
class Session:
    """Mutable viewing state with optimistic concurrency."""

    scene_id: str
    pose: CArmPose
    running: bool = False
    speed: float = 1.0
    phase: float = 0.0
    version: int = 0
    last_frame_id: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def snapshot(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "pose": self.pose.to_json(),
            "playback": {"running": self.running, "speed": self.speed, "phase": self.phase},
            "version": self.version,
            "last_frame_id": self.last_frame_id,
        }

    def update(self, body: dict, base_version: int | None) -> dict:
        """Apply a client mutation; stale base versions are rejected."""
        with self._lock:
            if base_version is not None and base_version != self.version:
                raise StaleSessionError(
                    f"session moved on (version {self.version}, client had {base_version})"
                )
            if "pose" in body:
                self.pose = CArmPose.from_json(body["pose"])
            playback = body.get("playback", {})
            if "running" in playback:
                self.running = bool(playback["running"])
            if "speed" in playback:
                speed = float(playback["speed"])
                if speed <= 0:
                    raise ValidationError("speed must be positive")
                self.speed = speed
            if "phase" in playback:
                phase = float(playback["phase"])
                if not 0.0 <= phase <= 1.0:
                    raise ValidationError("phase must lie in [0, 1]")
                self.phase = phase
            self.version += 1
            return self.snapshot()


class StaleSessionError(ValidationError):
    """Concurrent session mutation with an out-of-date base version."""


def mesh_sequence_volumes(directory: str) -> tuple[np.ndarray, np.ndarray]:
    """Chamber volumes over time from a mesh-sequence directory.

    The directory carries ``meshes.json`` ({"times_s": [...], "files":
    [...]}) with closed surface meshes; returns (times, volumes_ml).
    """
    from ..volume import load_mesh

    manifest_path = os.path.join(directory, "meshes.json")
    if not os.path.exists(manifest_path):
        raise FileFormatError(f"no meshes.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    times = np.asarray(manifest["times_s"], dtype=float)
    files = manifest["files"]
    if len(times) != len(files):
        raise FileFormatError("meshes.json times/files length mismatch")
    vols = np.array(
        [mesh_volume(load_mesh(os.path.join(directory, name), require_closed=True))
         for name in files]
    )
    return times, vols
