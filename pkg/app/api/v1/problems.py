"""Problem layout endpoint."""

from fastapi import APIRouter, HTTPException, Query

from app.core.config import settings
from app.core.errors import PlatoonLabError
from app.schemas.api import LayoutComponent, LayoutResponse
from app.services.problems import info_bytes, layout_for

router = APIRouter()


@router.get("/problems/{tag}/layout", response_model=LayoutResponse)
def get_layout(
    tag: str,
    ego: int = Query(default=1, description="Ego follower index"),
    n_vehicles: int | None = Query(default=None, description="Platoon size including the leader"),
):
    """Ordered state components a problem gives the ego vehicle."""
    if tag not in settings.available_problems:
        raise HTTPException(
            status_code=400,
            detail={
                "error": "INVALID_PROBLEM",
                "message": f"Unknown problem: {tag}. "
                f"Available problems: {', '.join(settings.available_problems)}",
            },
        )
    try:
        layout = layout_for(tag, ego, n_vehicles)
    except PlatoonLabError as e:
        raise HTTPException(status_code=400, detail=e.to_detail())

    return LayoutResponse(
        problem=tag,
        ego=ego,
        dim=layout.dim,
        info_bytes=info_bytes(tag, ego, n_vehicles),
        components=[LayoutComponent(name=c.name, kind=c.kind, vehicle=c.vehicle) for c in layout.components],
    )
