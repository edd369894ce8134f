"""Pydantic schemas for the results API."""

from pydantic import BaseModel, Field

from app.core.config import settings


class LayoutComponent(BaseModel):
    name: str
    kind: str
    vehicle: int


class LayoutResponse(BaseModel):
    """Ordered state components of one problem for one ego."""

    problem: str
    ego: int
    dim: int = Field(..., description="State dimension")
    info_bytes: int = Field(..., description="Scalar V2X quantities received per step")
    components: list[LayoutComponent]


class VehicleSpec(BaseModel):
    tau: float = Field(..., gt=0, description="Driveline time constant (s)")
    h: float = Field(default=settings.time_gap, ge=0, description="Desired time gap (s)")


class StepRequest(BaseModel):
    """A platoon snapshot plus one control per vehicle, leader first."""

    leader_acc: float = 0.0
    followers: list[list[float]] = Field(..., min_length=1, description="[e_p, e_v, acc] per follower")
    controls: list[float] = Field(..., min_length=2)
    vehicles: list[VehicleSpec] = Field(..., min_length=2)
    dt: float = Field(default=settings.dt, gt=0)


class StepResponse(BaseModel):
    leader_acc: float
    followers: list[list[float]]


class TheoremRequest(BaseModel):
    family: str = Field(..., description="Instance family, e.g. vehicles_ahead")
    count: int = Field(default=5, ge=1)
    seed: int = 0


class TheoremResponse(BaseModel):
    family: str
    instances: int
    violations: int
    min_gap: float
    max_gap: float
    strict_witness: bool | None = None
    passed: bool


class PlotResponse(BaseModel):
    """Response containing a rendered plot."""

    image: str = Field(..., description="Base64 encoded PNG image")
    kind: str
    width: int
    height: int
