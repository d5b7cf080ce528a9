"""Parameter containers, per-group Adam, and cross-client statistics.

A ``ParamVector`` is a flat float64 array partitioned into named, contiguous
groups. Everything here is value-level: operations return new objects and
never mutate their inputs, so vectors can be handed between threads freely.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.utils.errors import ConfigurationError, ContractViolation, NumericError

log = logging.getLogger(__name__)

DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


class ParamGroup(BaseModel):
    name: str = Field(..., min_length=1)
    start: int = Field(..., ge=0)
    length: int = Field(..., ge=1)
    shape: Optional[Tuple[int, ...]] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_shape(self) -> "ParamGroup":
        if self.shape is not None and int(np.prod(self.shape)) != self.length:
            raise ValueError(
                f"Group '{self.name}' shape {self.shape} does not match length {self.length}."
            )
        return self

    @property
    def stop(self) -> int:
        return self.start + self.length

    @property
    def tensor_shape(self) -> Tuple[int, ...]:
        return self.shape if self.shape is not None else (self.length,)


class ParamLayout(BaseModel):
    """Ordered group list covering [0, size) exactly once."""

    groups: Tuple[ParamGroup, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_cover(self) -> "ParamLayout":
        if not self.groups:
            raise ValueError("A parameter layout needs at least one group.")
        offset = 0
        seen: set[str] = set()
        for group in self.groups:
            if group.name in seen:
                raise ValueError(f"Duplicate group name '{group.name}'.")
            seen.add(group.name)
            if group.start != offset:
                raise ValueError(
                    f"Group '{group.name}' starts at {group.start}, expected {offset}."
                )
            offset = group.stop
        return self

    @classmethod
    def from_shapes(cls, shapes: Sequence[Tuple[str, Sequence[int] | int]]) -> "ParamLayout":
        """Build a layout from ``(name, shape)`` pairs laid out back to back."""
        if not shapes:
            raise ConfigurationError("Parameter group shapes must not be empty.")
        groups: List[ParamGroup] = []
        offset = 0
        for name, shape in shapes:
            shape_tuple = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(
                int(dim) for dim in shape
            )
            length = int(np.prod(shape_tuple))
            groups.append(
                ParamGroup(name=name, start=offset, length=length, shape=shape_tuple)
            )
            offset += length
        try:
            return cls(groups=tuple(groups))
        except ValueError as exc:
            raise ConfigurationError(f"Invalid parameter layout: {exc}") from exc

    @property
    def size(self) -> int:
        return self.groups[-1].stop

    @property
    def names(self) -> List[str]:
        return [group.name for group in self.groups]

    def __len__(self) -> int:
        return len(self.groups)

    def group(self, name: str) -> ParamGroup:
        for group in self.groups:
            if group.name == name:
                return group
        raise KeyError(name)

    def index(self, name: str) -> int:
        for position, group in enumerate(self.groups):
            if group.name == name:
                return position
        raise KeyError(name)

    def expand(self, per_group: np.ndarray) -> np.ndarray:
        """Broadcast one value per group to one value per parameter."""
        per_group = np.asarray(per_group, dtype=np.float64)
        if per_group.shape != (len(self.groups),):
            raise ContractViolation(
                f"Expected {len(self.groups)} group values, got shape {per_group.shape}."
            )
        lengths = [group.length for group in self.groups]
        return np.repeat(per_group, lengths)

    def reduce_mean(self, per_param: np.ndarray) -> np.ndarray:
        """Arithmetic mean of a per-parameter array within each group."""
        return np.array(
            [per_param[group.start : group.stop].mean() for group in self.groups],
            dtype=np.float64,
        )

    def digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ParamVector:
    layout: ParamLayout
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.shape[0] != self.layout.size:
            raise ContractViolation(
                f"Value length {values.shape[0]} does not match layout size {self.layout.size}."
            )
        if not np.all(np.isfinite(values)):
            raise NumericError("Parameter values must be finite.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.layout.size

    def group(self, name: str) -> np.ndarray:
        group = self.layout.group(name)
        return self.values[group.start : group.stop].reshape(group.tensor_shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {group.name: self.group(group.name) for group in self.layout.groups}

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.layout, values)

    @classmethod
    def from_tensors(
        cls, layout: ParamLayout, tensors: dict[str, np.ndarray]
    ) -> "ParamVector":
        flat = np.concatenate(
            [np.asarray(tensors[name], dtype=np.float64).reshape(-1) for name in layout.names]
        )
        return cls(layout, flat)

    def distance(self, other: "ParamVector") -> float:
        _require_same_layout([self, other])
        return float(np.linalg.norm(self.values - other.values))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS

    @classmethod
    def fresh(
        cls,
        size: int,
        beta1: float = DEFAULT_BETA1,
        beta2: float = DEFAULT_BETA2,
        eps: float = DEFAULT_EPS,
    ) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)


@dataclass(frozen=True)
class LrVector:
    rates: np.ndarray
    base: float

    def __post_init__(self) -> None:
        rates = np.array(self.rates, dtype=np.float64, copy=True).reshape(-1)
        if self.base <= 0:
            raise ContractViolation("Base learning rate L must be positive.")
        if np.any(rates < 0) or np.any(rates > self.base * (1 + 1e-12)):
            raise ContractViolation("Learning rates must lie in [0, L].")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def uniform(cls, layout: ParamLayout, base: float) -> "LrVector":
        return cls(np.full(len(layout), float(base)), float(base))

    @classmethod
    def masked(cls, layout: ParamLayout, base: float, trainable: Iterable[str]) -> "LrVector":
        trainable = set(trainable)
        unknown = trainable - set(layout.names)
        if unknown:
            raise ConfigurationError(f"Unknown parameter groups: {sorted(unknown)}")
        rates = [float(base) if name in trainable else 0.0 for name in layout.names]
        return cls(np.array(rates), float(base))

    def as_dict(self, layout: ParamLayout) -> dict[str, float]:
        return {name: float(rate) for name, rate in zip(layout.names, self.rates)}


@dataclass(frozen=True)
class SigmaVector:
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise NumericError("Sigma entries must be finite and non-negative.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def ones(cls, size: int) -> "SigmaVector":
        return cls(np.ones(size))


def _require_same_layout(vectors: Sequence[ParamVector]) -> ParamLayout:
    if not vectors:
        raise ContractViolation("At least one parameter vector is required.")
    layout = vectors[0].layout
    for vector in vectors[1:]:
        if vector.layout != layout:
            raise ContractViolation("Parameter vectors have different group layouts.")
    return layout


def init_params(
    layout: ParamLayout | Sequence[Tuple[str, Sequence[int] | int]],
    seed: int,
    scale: float,
) -> ParamVector:
    """Draw i.i.d. uniform values in [-scale, scale] from a seeded generator."""
    if not isinstance(layout, ParamLayout):
        if not layout:
            raise ConfigurationError("Parameter group layout must not be empty.")
        layout = ParamLayout.from_shapes(layout)
    if scale < 0:
        raise ConfigurationError("Initialization scale must be non-negative.")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-scale, scale, size=layout.size) if scale > 0 else np.zeros(layout.size)
    return ParamVector(layout, values)


def adam_step(
    p: ParamVector, g: np.ndarray, s: AdamState, lr: LrVector
) -> Tuple[ParamVector, AdamState]:
    """One bias-corrected Adam step with a learning rate per parameter group."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.shape[0] != len(p):
        raise ContractViolation(
            f"Gradient length {g.shape[0]} does not match parameter length {len(p)}."
        )
    if lr.rates.shape[0] != len(p.layout):
        raise ContractViolation("Learning-rate vector does not cover every group.")
    if not np.all(np.isfinite(g)):
        raise NumericError("Gradient contains non-finite values.")

    step = s.step + 1
    m = s.beta1 * s.m + (1.0 - s.beta1) * g
    v = s.beta2 * s.v + (1.0 - s.beta2) * (g * g)
    m_hat = m / (1.0 - s.beta1**step)
    v_hat = v / (1.0 - s.beta2**step)
    rates = p.layout.expand(lr.rates)
    values = p.values - rates * m_hat / (np.sqrt(v_hat) + s.eps)
    return p.replace(values), AdamState(m, v, step, s.beta1, s.beta2, s.eps)


def mean_params(clients: Sequence[ParamVector]) -> ParamVector:
    """Unweighted element-wise mean, accumulated in client order."""
    layout = _require_same_layout(clients)
    total = np.zeros(layout.size)
    for client in clients:
        total = total + client.values
    return ParamVector(layout, total / len(clients))


def sum_sq_dev(clients: Sequence[ParamVector]) -> SigmaVector:
    """Per-index sum over clients of the squared deviation from the mean."""
    if len(clients) < 2:
        raise ContractViolation("Cross-client deviation needs at least two clients.")
    mean = mean_params(clients).values
    total = np.zeros_like(mean)
    for client in clients:
        deviation = client.values - mean
        total = total + deviation * deviation
    return SigmaVector(total)


def lrs_from_sigma(sigma: SigmaVector, L: float, p: ParamVector) -> LrVector:
    """Group rate = L * mean-sigma(group) / max over groups; uniform L if max is 0."""
    if L <= 0:
        raise ContractViolation("Base learning rate L must be positive.")
    if sigma.values.shape[0] != len(p):
        raise ContractViolation("Sigma length does not match the parameter vector.")
    per_group = p.layout.reduce_mean(sigma.values)
    peak = per_group.max()
    if peak <= 0:
        return LrVector.uniform(p.layout, L)
    rates = L * (per_group / peak)
    # The peak group gets exactly L, not L * (x / x) rounding
    rates[per_group == peak] = L
    return LrVector(rates, L)
