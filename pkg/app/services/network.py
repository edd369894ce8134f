"""Dense feed-forward networks with manual backpropagation.

Actors map a state to a control input through a tanh output scaled to the
control bounds. Critics map (state, action) to a scalar; the action joins the
network after the first hidden layer.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.core.config import settings
from app.core.errors import (
    ConfigurationError,
    DimensionMismatchError,
    StaleCacheError,
    TrainingDivergenceError,
)
from app.services.exogenous import make_generator

CHECKPOINT_VERSION = 1
FINAL_LAYER_INIT = 3e-3


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one network."""

    input_dim: int
    hidden: tuple[int, ...] = tuple(settings.actor_hidden)
    output_dim: int = 1
    output_activation: str = "tanh"
    output_scale: float = settings.u_max
    action_inject_layer: int | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigurationError("layer sizes must be positive")
        if self.output_activation not in ("tanh", "linear"):
            raise ConfigurationError(f"unknown output activation {self.output_activation}")
        if self.action_inject_layer is not None and not 0 <= self.action_inject_layer <= len(self.hidden):
            raise ConfigurationError(f"cannot inject the action at layer {self.action_inject_layer}")

    @property
    def fan_in(self) -> list[int]:
        sizes = [self.input_dim, *self.hidden]
        if self.action_inject_layer is not None:
            sizes[self.action_inject_layer] += 1
        return sizes

    @property
    def fan_out(self) -> list[int]:
        return [*self.hidden, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
            "output_scale": self.output_scale,
            "action_inject_layer": self.action_inject_layer,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        return cls(**{**data, "hidden": tuple(data["hidden"])})


def actor_spec(state_dim: int, hidden=tuple(settings.actor_hidden), u_max: float = settings.u_max) -> MlpSpec:
    return MlpSpec(input_dim=state_dim, hidden=tuple(hidden), output_activation="tanh", output_scale=u_max)


def critic_spec(state_dim: int, hidden=tuple(settings.critic_hidden)) -> MlpSpec:
    return MlpSpec(
        input_dim=state_dim,
        hidden=tuple(hidden),
        output_activation="linear",
        output_scale=1.0,
        action_inject_layer=1 if len(hidden) >= 1 else 0,
    )


@dataclass
class MlpParams:
    """Weights, biases and optimizer moments of one network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    step: int = 0
    version: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m_weights:
            self.m_weights = [np.zeros_like(w) for w in self.weights]
            self.v_weights = [np.zeros_like(w) for w in self.weights]
            self.m_biases = [np.zeros_like(b) for b in self.biases]
            self.v_biases = [np.zeros_like(b) for b in self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
            step=self.step,
            version=self.version,
            m_weights=[m.copy() for m in self.m_weights],
            v_weights=[v.copy() for v in self.v_weights],
            m_biases=[m.copy() for m in self.m_biases],
            v_biases=[v.copy() for v in self.v_biases],
        )

    def flat(self) -> np.ndarray:
        """All weights and biases, layer by layer."""
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def checksum(self) -> float:
        return float(np.sum(self.flat() * np.arange(1, self.flat().size + 1)))


@dataclass
class ForwardCache:
    """Activations kept for one backward pass."""

    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    output: np.ndarray
    version: int
    had_action: bool


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray
    action: np.ndarray | None = None

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g**2) for g in self.weights + self.biases)))


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """
    Uniform initialization: +/-1/sqrt(fan_in) for hidden layers, +/-3e-3 for the output layer.
    """
    rng = make_generator(seed)
    weights, biases = [], []
    n_layers = len(spec.fan_out)
    for layer, (fan_in, fan_out) in enumerate(zip(spec.fan_in, spec.fan_out)):
        bound = FINAL_LAYER_INIT if layer == n_layers - 1 else 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, seed=seed)


def _as_batch(values, width: int, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1) if width > 1 or array.size == 1 else array.reshape(-1, 1)
    if array.ndim != 2 or array.shape[1] != width:
        raise DimensionMismatchError(f"{name} must have {width} columns, got shape {np.shape(values)}")
    return array


def forward(params: MlpParams, spec: MlpSpec, inputs, action=None) -> tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on a batch.

    Args:
        params: Network parameters
        spec: Network architecture
        inputs: Array (batch, input_dim) or a single input vector
        action: Array (batch,) or (batch, 1); required iff the network takes an action input

    Returns:
        Tuple (outputs of shape (batch, output_dim), cache for backward)
    """
    x = _as_batch(inputs, spec.input_dim, "input")
    if (action is None) != (spec.action_inject_layer is None):
        raise DimensionMismatchError("an action must be given exactly when the network takes one")
    if action is not None:
        a = np.asarray(action, dtype=np.float64).reshape(-1, 1)
        if a.shape[0] != x.shape[0]:
            raise DimensionMismatchError(f"{a.shape[0]} actions for a batch of {x.shape[0]}")

    layer_inputs, pre_activations = [], []
    h = x
    n_layers = len(params.weights)
    for layer in range(n_layers):
        if layer == spec.action_inject_layer:
            h = np.hstack([h, a])
        layer_inputs.append(h)
        z = h @ params.weights[layer] + params.biases[layer]
        pre_activations.append(z)
        if layer < n_layers - 1:
            h = np.maximum(z, 0.0)
        elif spec.output_activation == "tanh":
            h = spec.output_scale * np.tanh(z)
        else:
            h = z

    cache = ForwardCache(layer_inputs, pre_activations, h, params.version, action is not None)
    return h, cache


def backward(params: MlpParams, spec: MlpSpec, cache: ForwardCache, grad_output) -> Gradients:
    """
    Gradients of sum(grad_output * output) with respect to parameters and inputs.

    Raises:
        StaleCacheError: If the parameters changed since the forward pass
    """
    if cache.version != params.version:
        raise StaleCacheError(
            f"cache from parameter version {cache.version}, network is at {params.version}"
        )
    g = _as_batch(grad_output, spec.output_dim, "output gradient")
    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    grad_action = None

    last = cache.pre_activations[-1]
    if spec.output_activation == "tanh":
        g = g * spec.output_scale * (1.0 - np.tanh(last) ** 2)

    for layer in range(n_layers - 1, -1, -1):
        grad_w[layer] = cache.layer_inputs[layer].T @ g
        grad_b[layer] = g.sum(axis=0)
        g = g @ params.weights[layer].T
        if layer == spec.action_inject_layer:
            grad_action = g[:, -1]
            g = g[:, :-1]
        if layer > 0:
            g = g * (cache.pre_activations[layer - 1] > 0)

    return Gradients(weights=grad_w, biases=grad_b, inputs=g, action=grad_action)


def sgd_update(
    params: MlpParams,
    grads: Gradients,
    learning_rate: float,
    optimizer: str = "adam",
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> MlpParams:
    """
    Apply one descent step in place.

    Raises:
        TrainingDivergenceError: If any gradient is non-finite
    """
    if not all(np.all(np.isfinite(g)) for g in grads.weights + grads.biases):
        raise TrainingDivergenceError(
            "non-finite gradient", step=params.step, version=params.version
        )
    if optimizer not in ("adam", "sgd"):
        raise ConfigurationError(f"unknown optimizer {optimizer}")

    params.step += 1
    t = params.step
    for layer in range(len(params.weights)):
        for values, grad, m, v in (
            (params.weights, grads.weights, params.m_weights, params.v_weights),
            (params.biases, grads.biases, params.m_biases, params.v_biases),
        ):
            if optimizer == "sgd":
                values[layer] = values[layer] - learning_rate * grad[layer]
                continue
            m[layer] = beta1 * m[layer] + (1 - beta1) * grad[layer]
            v[layer] = beta2 * v[layer] + (1 - beta2) * grad[layer] ** 2
            m_hat = m[layer] / (1 - beta1**t)
            v_hat = v[layer] / (1 - beta2**t)
            values[layer] = values[layer] - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    params.version += 1
    return params


def save_checkpoint(path: str | Path, spec: MlpSpec, params: MlpParams) -> Path:
    """Write spec, seed, optimizer state and parameters to an .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, group in (
        ("w", params.weights), ("b", params.biases),
        ("mw", params.m_weights), ("vw", params.v_weights),
        ("mb", params.m_biases), ("vb", params.v_biases),
    ):
        for layer, array in enumerate(group):
            arrays[f"{name}{layer}"] = array
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "seed": params.seed,
        "step": params.step,
        "layers": len(params.weights),
    }
    with path.open("wb") as handle:
        np.savez(handle, meta=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[MlpSpec, MlpParams]:
    """Read a checkpoint written by save_checkpoint."""
    with np.load(Path(path)) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {meta['version']}")
        layers = range(meta["layers"])
        params = MlpParams(
            weights=[data[f"w{i}"] for i in layers],
            biases=[data[f"b{i}"] for i in layers],
            seed=meta["seed"],
            step=meta["step"],
            m_weights=[data[f"mw{i}"] for i in layers],
            v_weights=[data[f"vw{i}"] for i in layers],
            m_biases=[data[f"mb{i}"] for i in layers],
            v_biases=[data[f"vb{i}"] for i in layers],
        )
    return MlpSpec.from_dict(meta["spec"]), params
