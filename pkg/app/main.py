"""FastAPI application entry point."""

from dotenv import load_dotenv
from fastapi import FastAPI

load_dotenv()

from app.api.v1 import dynamics, problems, runs, theorems
from app.core.config import settings

app = FastAPI(
    title=settings.app_name,
    version=settings.version,
    description="Read-only access to platoon problem layouts, dynamics, theorem checks and run results.",
)

app.include_router(problems.router, prefix="/api/v1", tags=["problems"])
app.include_router(dynamics.router, prefix="/api/v1", tags=["dynamics"])
app.include_router(theorems.router, prefix="/api/v1", tags=["theorems"])
app.include_router(runs.router, prefix="/api/v1", tags=["runs"])


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy", "version": settings.version}
