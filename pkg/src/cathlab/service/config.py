"""Workspace configuration: one JSON file, one section per subsystem.

Every tunable named in the library modules appears here with its default, so
a config file fully pins a deployment.  ``CATHLAB_WORKSPACE`` selects the
default workspace root; a ``config.json`` inside it is loaded when present.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from ..enhance import EnhanceParams
from ..errors import ValidationError
from ..stereo import StereoParams


@dataclass(frozen=True)
class RendererConfig:
    n_threads: int | None = None
    use_octree: bool = True
    octree_leaf_block: int = 8
    empty_threshold: float = 0.0
    invert: bool = False


@dataclass(frozen=True)
class HemoConfig:
    valve_threshold_frac: float = 0.05
    n_phases: int = 20
    registration_lambda: float = 1e-3
    registration_smoothing_voxels: float = 1.5


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8070
    max_stream_fps: float = 30.0
    frame_cache: int = 32


@dataclass(frozen=True)
class Config:
    renderer: RendererConfig = field(default_factory=RendererConfig)
    enhance: EnhanceParams = field(default_factory=EnhanceParams)
    stereo: StereoParams = field(default_factory=StereoParams)
    hemo: HemoConfig = field(default_factory=HemoConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_json(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in
                ("renderer", "enhance", "stereo", "hemo", "service")}

    @classmethod
    def from_json(cls, obj: dict) -> "Config":
        sections = {}
        types = {
            "renderer": RendererConfig,
            "enhance": EnhanceParams,
            "stereo": StereoParams,
            "hemo": HemoConfig,
            "service": ServiceConfig,
        }
        for name, typ in types.items():
            body = dict(obj.get(name, {}))
            known = {f.name for f in dataclasses.fields(typ)}
            unknown = set(body) - known
            if unknown:
                raise ValidationError(f"unknown {name} config keys: {sorted(unknown)}")
            for key, value in body.items():
                if isinstance(value, list):
                    body[key] = tuple(value)
            sections[name] = typ(**body)
        return cls(**sections)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def workspace_root() -> str:
    return os.environ.get("CATHLAB_WORKSPACE", os.getcwd())


def load_config(path: str | None = None) -> Config:
    """Load the explicit config file, the workspace default, or built-ins."""
    if path is None:
        candidate = os.path.join(workspace_root(), "config.json")
        path = candidate if os.path.exists(candidate) else None
    if path is None:
        return Config()
    with open(path) as f:
        return Config.from_json(json.load(f))
