"""Environment registry."""

from app.core.errors import ConfigurationError
from app.envs.base import BaseEnvironment
from app.envs.discrete import DiscreteSsdpEnvironment
from app.envs.platoon import PlatoonEnvironment, TwoVehicleEnvironment

# Registry of available environments
ENVIRONMENT_REGISTRY: dict[str, type[BaseEnvironment]] = {
    "two_vehicle": TwoVehicleEnvironment,
    "platoon": PlatoonEnvironment,
    "discrete": DiscreteSsdpEnvironment,
}


def get_available_environments() -> list[str]:
    """Get list of available environment names."""
    return list(ENVIRONMENT_REGISTRY.keys())


def make_environment(name: str, **kwargs) -> BaseEnvironment:
    """
    Build an environment by registry name.

    Raises:
        ConfigurationError: If the name is not registered
    """
    if name not in ENVIRONMENT_REGISTRY:
        raise ConfigurationError(
            f"Unknown environment: {name}. Available: {get_available_environments()}"
        )
    return ENVIRONMENT_REGISTRY[name](**kwargs)
