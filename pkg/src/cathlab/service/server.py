"""JSON-over-HTTP service for interactive virtual fluoroscopy.

Read paths (scene metadata, frames, ECG, hemodynamics) are side-effect free
and cacheable; the only mutable state is the per-scene session, guarded by an
optimistic version check (concurrent conflicting updates get 409).  Frames
are rendered deterministically, so identical queries return identical bytes.
"""

from __future__ import annotations

import json
import math
import threading
import time
import urllib.parse
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from ..errors import CathlabError, ValidationError
from ..geometry import CArmPose
from .config import Config
from .png import encode_gray
from .scene import Scene, Session, StaleSessionError


class _BadRequest(Exception):
    pass


class ServiceState:
    """Scene, session, and frame cache shared across handler threads."""

    def __init__(self, scene: Scene, config: Config | None = None, frontend_dir: str | None = None):
        self.scene = scene
        self.config = config or scene.config
        self.session = Session(scene_id=scene.scene_id, pose=scene.default_pose)
        self.frontend_dir = Path(frontend_dir).resolve() if frontend_dir else None
        self._cache: OrderedDict[tuple, bytes] = OrderedDict()
        self._cache_lock = threading.Lock()
        self._frame_counter = 0
        self._frame_lock = threading.Lock()

    def next_frame_id(self) -> int:
        with self._frame_lock:
            self._frame_counter += 1
            self.session.last_frame_id = self._frame_counter
            return self._frame_counter

    def render_bytes(self, pose: CArmPose, phase: float, enhance: bool, fmt: str) -> bytes:
        key = (
            round(pose.alpha, 12), round(pose.beta, 12), pose.sid_mm, pose.spd_mm,
            pose.fd_mm, pose.n_u, pose.n_v, pose.table_mm, round(phase, 9),
            enhance, fmt,
        )
        with self._cache_lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        img = self.scene.render(pose, phase=phase, enhance=enhance)
        if fmt == "raw":
            blob = np.ascontiguousarray(img.pixels, dtype="<f4").tobytes()
        else:
            blob = encode_gray(img.pixels)
        with self._cache_lock:
            self._cache[key] = blob
            while len(self._cache) > self.config.service.frame_cache:
                self._cache.popitem(last=False)
        return blob


def _parse_float(params, name, default=None):
    raw = params.get(name)
    if raw is None:
        if default is None:
            raise _BadRequest(f"missing parameter {name!r}")
        return default
    try:
        value = float(raw[0])
    except ValueError as e:
        raise _BadRequest(f"parameter {name!r} is not a number") from e
    if not math.isfinite(value):
        raise _BadRequest(f"parameter {name!r} must be finite")
    return value


def _parse_int(params, name, default):
    raw = params.get(name)
    if raw is None:
        return default
    try:
        return int(raw[0])
    except ValueError as e:
        raise _BadRequest(f"parameter {name!r} is not an integer") from e


class CathlabHandler(BaseHTTPRequestHandler):
    server_version = "cathlab/0.1"
    state: ServiceState  # assigned by make_server

    # --- plumbing ---------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, body: bytes, content_type: str):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, obj) -> None:
        self._send(code, json.dumps(obj).encode(), "application/json")

    def _send_error_json(self, code: int, kind: str, message: str) -> None:
        self._send_json(code, {"error": {"type": kind, "message": message}})

    def _route(self, method: str):
        parsed = urllib.parse.urlparse(self.path)
        params = urllib.parse.parse_qs(parsed.query)
        try:
            handler = getattr(self, f"{method}_{parsed.path.strip('/').replace('/', '_')}", None)
            if parsed.path.startswith("/api/"):
                if handler is None:
                    self._send_error_json(404, "not_found", f"no such endpoint {parsed.path}")
                    return
                handler(params)
                return
            if method == "get":
                self._serve_static(parsed.path)
                return
            self._send_error_json(404, "not_found", f"no such endpoint {parsed.path}")
        except _BadRequest as e:
            self._send_error_json(400, "bad_request", str(e))
        except StaleSessionError as e:
            self._send_error_json(409, "conflict", str(e))
        except ValidationError as e:
            self._send_error_json(422, "invalid", str(e))
        except BrokenPipeError:
            pass
        except CathlabError as e:
            self._send_error_json(422, "invalid", str(e))
        except Exception as e:  # pragma: no cover - defensive
            self._send_error_json(500, "internal", f"{type(e).__name__}: {e}")

    def do_GET(self):
        self._route("get")

    def do_POST(self):
        self._route("post")

    # --- API --------------------------------------------------------------

    def get_api_scene(self, params):
        scene = self.state.scene
        ecg = scene.ecg
        self._send_json(
            200,
            {
                "id": scene.scene_id,
                "n_phases": scene.n_phases,
                "dims": list(scene.volumes[0].dims),
                "spacing_mm": list(scene.volumes[0].spacing_mm),
                "default_pose": scene.default_pose.to_json(),
                "ecg": None
                if ecg is None
                else {
                    "fs_hz": ecg.fs_hz,
                    "duration_s": len(ecg.samples_mv) / ecg.fs_hz,
                    "n_peaks": int(len(ecg.r_peaks)),
                    "mean_hr_bpm": float(60.0 * (len(ecg.r_peaks) - 1) / (ecg.r_peaks[-1] - ecg.r_peaks[0]))
                    if len(ecg.r_peaks) >= 2
                    else None,
                },
            },
        )

    def _pose_from_params(self, params) -> CArmPose:
        base = self.state.session.pose
        alpha_deg = _parse_float(params, "alpha_deg", math.degrees(base.alpha))
        beta_deg = _parse_float(params, "beta_deg", math.degrees(base.beta))
        n_u = _parse_int(params, "w", base.n_u)
        n_v = _parse_int(params, "h", base.n_v)
        return CArmPose(
            alpha=math.radians(alpha_deg),
            beta=math.radians(beta_deg),
            sid_mm=_parse_float(params, "sid_mm", base.sid_mm),
            spd_mm=_parse_float(params, "spd_mm", base.spd_mm),
            fd_mm=_parse_float(params, "fd_mm", base.fd_mm),
            n_u=n_u,
            n_v=n_v,
            table_mm=base.table_mm,
        )

    def get_api_render(self, params):
        pose = self._pose_from_params(params)
        phase = _parse_float(params, "phase", 0.0)
        if not 0.0 <= phase <= 1.0:
            raise ValidationError("phase must lie in [0, 1]")
        enhance = params.get("enhance", ["0"])[0] in ("1", "true", "yes")
        fmt = params.get("format", ["png"])[0]
        if fmt not in ("png", "raw"):
            raise _BadRequest("format must be png or raw")
        blob = self.state.render_bytes(pose, phase, enhance, fmt)
        self.state.next_frame_id()
        self._send(200, blob, "image/png" if fmt == "png" else "application/octet-stream")

    def get_api_ecg(self, params):
        ecg = self.state.scene.ecg
        if ecg is None:
            self._send_error_json(404, "not_found", "scene has no ECG")
            return
        t0 = _parse_float(params, "from", 0.0)
        t1 = _parse_float(params, "to", len(ecg.samples_mv) / ecg.fs_hz)
        if t1 <= t0:
            raise _BadRequest("need from < to")
        i0 = max(int(t0 * ecg.fs_hz), 0)
        i1 = min(int(t1 * ecg.fs_hz), len(ecg.samples_mv))
        peaks = [float(t) for t in ecg.r_peaks if t0 <= t <= t1]
        self._send_json(
            200,
            {
                "fs_hz": ecg.fs_hz,
                "t0_s": i0 / ecg.fs_hz,
                "samples_mv": [float(v) for v in ecg.samples_mv[i0:i1]],
                "r_peaks_s": peaks,
            },
        )

    def get_api_hemodynamics(self, params):
        scene = self.state.scene
        report = scene.hemodynamics()
        payload = report.to_json()
        curve = scene.volume_time_samples()
        if curve is not None:
            times, vols = curve
            payload["curve"] = {
                "times_s": [float(t) for t in times],
                "volumes_ml": [float(v) for v in vols],
            }
        self._send_json(200, payload)

    def get_api_session(self, params):
        self._send_json(200, self.state.session.snapshot())

    def post_api_session(self, params):
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError as e:
            raise _BadRequest(f"body is not valid JSON: {e}") from e
        base_version = body.get("version")
        snapshot = self.state.session.update(body, base_version)
        self._send_json(200, snapshot)

    def get_api_stream(self, params):
        fps = _parse_float(params, "fps", 5.0)
        fps = min(max(fps, 0.1), self.state.config.service.max_stream_fps)
        scene = self.state.scene
        session = self.state.session
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        max_frames = _parse_int(params, "max_frames", 10_000)
        t_start = time.monotonic()
        try:
            for _ in range(max_frames):
                wall = time.monotonic() - t_start
                if session.running and scene.clock is not None:
                    t_ecg = wall * session.speed
                    phase = scene.clock.beat_phase(
                        scene.ecg.r_peaks[0] + t_ecg % (scene.ecg.r_peaks[-1] - scene.ecg.r_peaks[0])
                    )
                    session.phase = phase
                else:
                    phase = session.phase
                frame_id = self.state.next_frame_id()
                payload = json.dumps(
                    {"frame_id": frame_id, "phase": phase, "t_s": wall,
                     "running": session.running, "version": session.version}
                )
                self.wfile.write(f"event: frame\ndata: {payload}\n\n".encode())
                self.wfile.flush()
                time.sleep(1.0 / fps)
        except (BrokenPipeError, ConnectionResetError):
            return

    # --- static frontend ----------------------------------------------------

    def _serve_static(self, path: str):
        root = self.state.frontend_dir
        if root is None:
            self._send(200, b"cathlab service is running; no console bundle deployed\n", "text/plain")
            return
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._send_error_json(404, "not_found", f"no such file {path}")
            return
        types = {
            ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
            ".map": "application/json", ".png": "image/png", ".svg": "image/svg+xml",
        }
        self._send(200, target.read_bytes(), types.get(target.suffix, "application/octet-stream"))


def make_server(
    scene: Scene,
    config: Config | None = None,
    host: str | None = None,
    port: int | None = None,
    frontend_dir: str | None = None,
) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; port 0 picks a free port."""
    config = config or scene.config
    state = ServiceState(scene, config, frontend_dir)
    handler = type("BoundHandler", (CathlabHandler,), {"state": state})
    server = ThreadingHTTPServer(
        (host if host is not None else config.service.host,
         port if port is not None else config.service.port),
        handler,
    )
    server.cathlab_state = state
    return server


def serve_forever(scene: Scene, config=None, host=None, port=None, frontend_dir=None):
    server = make_server(scene, config, host, port, frontend_dir)
    addr = server.server_address
    print(f"cathlab service on http://{addr[0]}:{addr[1]}/ (scene {scene.scene_id})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
