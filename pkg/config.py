"""
Configuration

Environment settings come from ``.env`` / ``TOPOREC_*`` variables; pipeline
parameters come from TOML files merged over the shipped ``defaults.toml``.
"""
import copy
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, Literal, Optional

import torch
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError

load_dotenv()

DEFAULTS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "defaults.toml")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="TOPOREC_", env_file=".env", extra="ignore")

    out_dir: str = "./out"
    database_url: str = "sqlite:///./runs.db"
    log_level: str = "INFO"


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FixtureConfig(_Section):
    kind: Literal["torus", "voxel", "sphere", "obj"] = "torus"
    name: Optional[str] = None
    # parametric torus
    major_radius: float = Field(2.0, gt=0)
    minor_radius: float = Field(0.5, gt=0)
    nu: int = Field(16, ge=3)
    nv: int = Field(32, ge=3)
    # voxel plate
    holes: int = Field(2, ge=0)
    resolution: int = Field(12, gt=0)
    # icosphere
    subdivisions: int = Field(2, ge=0)
    # external inputs
    mesh_path: Optional[str] = None
    interior_node: Optional[str] = None
    interior_ele: Optional[str] = None
    exterior_node: Optional[str] = None
    exterior_ele: Optional[str] = None

    @property
    def model_name(self) -> str:
        if self.name:
            return self.name
        if self.kind == "obj" and self.mesh_path:
            return os.path.splitext(os.path.basename(self.mesh_path))[0]
        return {"torus": "torus", "voxel": f"voxel-genus{self.holes}", "sphere": "sphere"}.get(self.kind, self.kind)


class CameraConfig(_Section):
    total: int = Field(24, gt=0)
    per_loop: int = Field(4, gt=0)
    distance_factor: float = Field(6.0, gt=0)
    min_angle: float = Field(10.0, ge=0)
    cone_angle: float = Field(35.0, gt=0, lt=90)
    fov: float = Field(40.0, gt=0, lt=180)
    radius: Optional[float] = Field(None, gt=0)
    include_handles: bool = False


class RenderSection(_Section):
    resolution: int = Field(64, gt=0)
    tau: float = Field(1.0, gt=0)
    near: float = Field(1e-3, gt=0)


class OptimizeConfig(_Section):
    w1: float = Field(1e-2, ge=0)
    w2: float = Field(1.0, ge=0)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    steps: int = Field(600, gt=0)
    precondition: bool = False
    lam: float = Field(19.0, ge=0)
    seed: int = 0
    checkpoint_every: int = Field(100, ge=0)
    smoothing_rounds: int = Field(20, ge=0)
    smoothing_step: float = Field(0.5, gt=0, le=1)


class MetricsConfig(_Section):
    samples: int = Field(20000, gt=0)
    grid_res: int = Field(64, gt=0)
    seed: int = 0


class PipelineConfig(_Section):
    fixture: FixtureConfig = FixtureConfig()
    cameras: CameraConfig = CameraConfig()
    render: RenderSection = RenderSection()
    optimize: OptimizeConfig = OptimizeConfig()
    metrics: MetricsConfig = MetricsConfig()


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_toml(path: str) -> Dict[str, Any]:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from None


def build_config(data: Dict[str, Any]) -> PipelineConfig:
    """Validate a config mapping; errors name the offending field"""
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"invalid configuration: {problems}") from None


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Defaults, then the file at ``path``, then ``overrides``.
    A missing ``path`` raises FileNotFoundError.
    """
    data = _read_toml(DEFAULTS_PATH) if os.path.exists(DEFAULTS_PATH) else {}
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        data = deep_merge(data, _read_toml(path))
    if overrides:
        data = deep_merge(data, overrides)
    return build_config(data)


def configure_logging(level: Optional[str] = None, quiet: bool = False) -> None:
    """One stream handler on the root logger; ``quiet`` keeps warnings and errors only"""
    level_name = "WARNING" if quiet else (level or settings.log_level)
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level_name).upper(), logging.INFO))


def configure_torch() -> None:
    """Deterministic float64 CPU autograd"""
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
