"""Single platoon step endpoint."""

from fastapi import APIRouter, HTTPException

from app.core.errors import PlatoonLabError
from app.schemas.api import StepRequest, StepResponse
from app.services.dynamics import LeaderState, LocalState, VehicleParams, platoon_step

router = APIRouter()


@router.post("/dynamics/step", response_model=StepResponse)
def step(request: StepRequest):
    """Advance a posted platoon snapshot by one Euler step."""
    if any(len(f) != 3 for f in request.followers):
        raise HTTPException(
            status_code=400,
            detail={"error": "INVALID_INPUT", "message": "Each follower state must be [e_p, e_v, acc]."},
        )
    try:
        params = [VehicleParams(tau=v.tau, h=v.h) for v in request.vehicles]
        leader, followers = platoon_step(
            LeaderState(acc=request.leader_acc),
            [LocalState.from_array(f) for f in request.followers],
            request.controls,
            params,
            request.dt,
        )
    except PlatoonLabError as e:
        raise HTTPException(status_code=400, detail=e.to_detail())

    return StepResponse(leader_acc=leader.acc, followers=[f.to_array().tolist() for f in followers])
