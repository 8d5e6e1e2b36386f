"""Named learnable parameters and the momentum optimizer."""

import math
import zlib
from dataclasses import dataclass
from typing import Iterator, Literal, Optional

import numpy as np

from mapweave.core.tensor import Tensor
from mapweave.errors import ContractError, ShapeError
from mapweave.utils.logger import get_logger

logger = get_logger(__name__)

InitKind = Literal["uniform", "zeros", "identity"]


@dataclass(frozen=True)
class ParameterSpec:
    """How a parameter was created, so it can be re-initialized."""

    shape: tuple[int, ...]
    init: InitKind
    fan_in: int


class ParameterStore:
    """Deterministically initialized, name-addressed parameter collection.

    Each parameter draws from its own generator seeded by ``(seed,
    crc32(name))``, so values do not depend on creation order and
    re-initialization with the same seed is bit-identical.
    """

    def __init__(self, seed: int = 0):
        """Initialize an empty store.

        Args:
            seed: Base seed for all parameter initializers
        """
        self.rng_seed = int(seed)
        self._params: dict[str, Tensor] = {}
        self._specs: dict[str, ParameterSpec] = {}

    def create(
        self,
        name: str,
        shape: tuple[int, ...],
        init: InitKind = "uniform",
        fan_in: Optional[int] = None,
    ) -> Tensor:
        """Create (or return the existing) parameter ``name``.

        Uniform init draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); ``fan_in``
        defaults to ``shape[0]``.

        Raises:
            ShapeError: If ``name`` exists with a different shape
        """
        shape = tuple(int(s) for s in shape)
        if name in self._params:
            existing = self._params[name]
            if existing.shape != shape:
                raise ShapeError(f"parameter {name!r} already exists", existing.shape, shape)
            return existing
        spec = ParameterSpec(shape=shape, init=init, fan_in=int(fan_in or shape[0]))
        self._specs[name] = spec
        self._params[name] = Tensor(self._initial_value(name, spec), requires_grad=True, name=name)
        return self._params[name]

    def _initial_value(self, name: str, spec: ParameterSpec) -> np.ndarray:
        if spec.init == "zeros":
            return np.zeros(spec.shape)
        if spec.init == "identity":
            if len(spec.shape) != 2:
                raise ShapeError("identity init needs a matrix", spec.shape)
            return np.eye(*spec.shape)
        rng = np.random.default_rng([self.rng_seed, zlib.crc32(name.encode("utf-8"))])
        bound = 1.0 / math.sqrt(spec.fan_in)
        return rng.uniform(-bound, bound, size=spec.shape)

    def reinitialize(self) -> None:
        """Reset every parameter to its initial value and drop gradients."""
        for name, spec in self._specs.items():
            self._params[name].data = self._initial_value(name, spec)
            self._params[name].grad = None

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ContractError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self:
            yield name, self._params[name]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.items()]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Replace parameter values; every stored name must already exist.

        Raises:
            ContractError: On missing or unknown names
            ShapeError: On shape mismatch
        """
        missing = set(self._params) - set(state)
        unknown = set(state) - set(self._params)
        if missing or unknown:
            raise ContractError(
                f"state mismatch (missing={sorted(missing)}, unknown={sorted(unknown)})"
            )
        for name, values in state.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != self._params[name].shape:
                raise ShapeError(f"parameter {name!r}", self._params[name].shape, values.shape)
            self._params[name].data = values.copy()


class MomentumSGD:
    """Gradient descent with heavy-ball momentum and optional norm clipping."""

    def __init__(
        self,
        store: ParameterStore,
        learning_rate: float,
        momentum: float = 0.9,
        grad_clip: Optional[float] = None,
    ):
        self.store = store
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.grad_clip = grad_clip
        self._velocity: dict[str, np.ndarray] = {}

    def step(self) -> float:
        """Apply one update from the accumulated gradients.

        Parameter arrays are rebound, not modified in place.

        Returns:
            Global gradient norm before clipping
        """
        grads = {name: p.grad for name, p in self.store.items() if p.grad is not None}
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm

        for name, g in grads.items():
            param = self.store[name]
            velocity = self._velocity.get(name)
            velocity = scale * g if velocity is None else self.momentum * velocity + scale * g
            self._velocity[name] = velocity
            param.data = param.data - self.learning_rate * velocity

        logger.debug("Optimizer step", grad_norm=norm, clipped=scale < 1.0)
        return norm
