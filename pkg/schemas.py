"""
Pydantic schemas for cameras, reports and loop sidecars
"""
from datetime import datetime
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

Vec3 = Tuple[float, float, float]


class Camera(BaseModel):
    """Pinhole camera; serialised as {position, look_at, up, fov, resolution}"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    position: Vec3
    look_at: Vec3
    up: Vec3 = (0.0, 0.0, 1.0)
    vertical_fov: float = Field(40.0, alias="fov", gt=0.0, lt=180.0)
    resolution: Tuple[int, int] = (64, 64)

    @field_validator("resolution")
    @classmethod
    def check_resolution(cls, value):
        if value[0] < 1 or value[1] < 1:
            raise ValueError("resolution must be positive")
        return value

    @field_validator("up")
    @classmethod
    def normalise_up(cls, value):
        v = np.asarray(value, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if not norm > 0:
            raise ValueError("up vector must be nonzero")
        return tuple(float(c) for c in v / norm)

    @model_validator(mode="after")
    def check_view(self):
        forward = np.subtract(self.look_at, self.position)
        dist = float(np.linalg.norm(forward))
        if not dist > 0:
            raise ValueError("camera position coincides with look_at")
        if np.linalg.norm(np.cross(forward / dist, self.up)) < 1e-9:
            raise ValueError("up vector is parallel to the view direction")
        return self

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.look_at, self.position)
        return d / np.linalg.norm(d)


CameraList = TypeAdapter(List[Camera])


class LoopRecord(BaseModel):
    kind: str
    vertex_count: int
    length: float


class LoopSidecar(BaseModel):
    """JSON written next to a loop line-set file"""
    genus: int
    loops: List[LoopRecord]
    notes: List[str] = []


class MetricsRow(BaseModel):
    """One reconstruction under one camera strategy"""
    model: str
    camera_strategy: str
    chamfer: float = Field(ge=0.0)
    volume_iou: float = Field(ge=0.0, le=1.0)
    views: int
    steps: int
    final_phi: float
    final_flips: int


class MetricsReport(BaseModel):
    rows: List[MetricsRow] = []

    def row(self, strategy: str) -> Optional[MetricsRow]:
        for r in self.rows:
            if r.camera_strategy == strategy:
                return r
        return None


class RunRecordOut(BaseModel):
    """Schema for a recorded run"""
    id: int
    run_name: str
    model: str
    camera_strategy: str
    chamfer: float
    volume_iou: float
    views: int
    steps: int
    seed: int
    config_hash: str
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)
