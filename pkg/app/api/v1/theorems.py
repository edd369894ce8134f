"""Theorem check endpoint."""

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.errors import PlatoonLabError
from app.schemas.api import TheoremRequest, TheoremResponse
from app.services.oracle_worlds import check_theorems

router = APIRouter()


@router.post("/theorems/check", response_model=TheoremResponse)
def check(request: TheoremRequest):
    """Solve a few random instances of one family and report ordering violations."""
    if request.count > settings.api_max_theorem_instances:
        raise HTTPException(
            status_code=400,
            detail={
                "error": "TOO_MANY_INSTANCES",
                "message": f"At most {settings.api_max_theorem_instances} instances per request; "
                "use `platoon-lab check-theorems` for larger suites.",
            },
        )
    try:
        result = check_theorems(request.family, request.count, seed=request.seed)
    except PlatoonLabError as e:
        raise HTTPException(status_code=400, detail=e.to_detail())

    return TheoremResponse(
        family=result.family,
        instances=result.instances,
        violations=result.violations,
        min_gap=result.min_gap,
        max_gap=result.max_gap,
        strict_witness=result.strict_witness,
        passed=result.passed,
    )
