"""Point-mass LQR task.

Each robot shares the unit-mass dynamics ``x' = Ax + Bu`` but has its own
control cost R, so its expert gain K differs. A client learns (Â, B̂, K̂)
from noisy expert rollouts. The dynamics groups are common to all robots and
the gain group is robot-specific, which is what the variance-driven rates are
meant to discover.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Sequence, Tuple

import numpy as np

from src.config.experiment import LqrTaskConfig
from src.fl.client import ClientState
from src.params.store import ParamLayout, ParamVector, init_params
from src.utils.errors import ConfigurationError, ContractViolation, NumericError
from src.utils.seeding import derive_seed

log = logging.getLogger(__name__)

StateReduction = Literal["sum", "component_mean"]

LQR_LAYOUT = ParamLayout.from_shapes([("A", (2, 2)), ("B", (2, 1)), ("K", (1, 2))])


def _matrix(value, name: str) -> np.ndarray:
    array = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if not np.all(np.isfinite(array)):
        raise ConfigurationError(f"{name} must be finite.")
    return array


@dataclass(frozen=True)
class LinSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        A = _matrix(self.A, "A")
        B = _matrix(self.B, "B")
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ConfigurationError(f"Incompatible shapes A{A.shape}, B{B.shape}.")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def point_mass(cls) -> "LinSystem":
        return cls(np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.0], [1.0]]))


@dataclass(frozen=True)
class LqrCost:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        Q = _matrix(self.Q, "Q")
        R = _matrix(self.R, "R")
        if not np.allclose(Q, Q.T):
            raise ConfigurationError("Q must be symmetric.")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ConfigurationError("Q must be positive semidefinite.")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigurationError("R must be symmetric positive definite.")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def diagonal(cls, q_diag: Sequence[float], r: float | Sequence[float]) -> "LqrCost":
        return cls(np.diag(np.asarray(q_diag, dtype=np.float64)), np.diag(np.atleast_1d(r)))


def _gain(P: np.ndarray, sys: LinSystem, cost: LqrCost) -> np.ndarray:
    BtP = sys.B.T @ P
    return np.linalg.solve(cost.R + BtP @ sys.B, BtP @ sys.A)


def riccati_map(P: np.ndarray, sys: LinSystem, cost: LqrCost) -> np.ndarray:
    """One step of P <- AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q."""
    AtP = sys.A.T @ P
    return AtP @ sys.A - AtP @ sys.B @ _gain(P, sys, cost) + cost.Q


def riccati_residual(P: np.ndarray, sys: LinSystem, cost: LqrCost) -> float:
    return float(np.max(np.abs(P - riccati_map(P, sys, cost))))


def solve_dare(
    sys: LinSystem,
    cost: LqrCost,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> Tuple[np.ndarray, np.ndarray]:
    """Iterate the Riccati recursion from P = Q to its fixed point.

    Returns (P, K) with the regulator law u = −Kx.
    """
    if cost.Q.shape != sys.A.shape or cost.R.shape[0] != sys.B.shape[1]:
        raise ConfigurationError("Cost weights do not match the system dimensions.")
    P = cost.Q.copy()
    for iteration in range(max_iter):
        P_next = riccati_map(P, sys, cost)
        if not np.all(np.isfinite(P_next)):
            raise NumericError("Riccati recursion diverged.", {"iteration": iteration})
        # Symmetrize to keep rounding from drifting P off the symmetric cone
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            return P_next, _gain(P_next, sys, cost)
        P = P_next
    raise NumericError(
        f"Riccati recursion did not converge in {max_iter} iterations.",
        {"max_iter": max_iter},
    )


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


@dataclass(frozen=True)
class Rollout:
    states: np.ndarray
    controls: np.ndarray
    robot_id: int = 0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        controls = np.asarray(self.controls, dtype=np.float64).reshape(-1)
        if states.ndim != 2 or states.shape[0] != controls.shape[0] + 1:
            raise ContractViolation("A rollout needs T+1 states for T controls.")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
            raise NumericError("Rollout contains non-finite values.")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def generate_rollouts(
    sys: LinSystem,
    K: np.ndarray,
    n_init: int,
    T: int,
    noise_var: float,
    seed: int,
    init_low: float = -5.0,
    init_high: float = 5.0,
    robot_id: int = 0,
    x0: np.ndarray | None = None,
) -> List[Rollout]:
    """Expert rollouts under u = −Kx with Gaussian noise on control and state."""
    if n_init < 1 or T < 1:
        raise ContractViolation("n_init and T must be at least 1.")
    if noise_var < 0:
        raise ContractViolation("noise_var must be non-negative.")
    rng = np.random.default_rng(seed)
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    n_state, n_control = sys.B.shape
    std = float(np.sqrt(noise_var))
    rollouts = []
    for _ in range(n_init):
        state = (
            np.array(x0, dtype=np.float64)
            if x0 is not None
            else rng.uniform(init_low, init_high, size=n_state)
        )
        states = [state]
        controls = []
        for _ in range(T):
            u = -K @ state + std * rng.standard_normal(n_control)
            state = sys.A @ state + sys.B @ u + std * rng.standard_normal(n_state)
            controls.append(u[0])
            states.append(state)
        rollouts.append(Rollout(np.array(states), np.array(controls), robot_id))
    return rollouts


@dataclass(frozen=True)
class Transitions:
    """Flattened (x_t, u_t, x_{t+1}) records."""

    x: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_next: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return self.u.shape[0]

    @classmethod
    def from_rollouts(cls, rollouts: Sequence[Rollout]) -> "Transitions":
        if not rollouts:
            return cls()
        return cls(
            np.concatenate([r.states[:-1] for r in rollouts]),
            np.concatenate([r.controls for r in rollouts]),
            np.concatenate([r.states[1:] for r in rollouts]),
        )

    @classmethod
    def concat(cls, parts: Sequence["Transitions"]) -> "Transitions":
        parts = [part for part in parts if len(part)]
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.u for p in parts]),
            np.concatenate([p.x_next for p in parts]),
        )

    def take(self, index: np.ndarray) -> "Transitions":
        return Transitions(self.x[index], self.u[index], self.x_next[index])


@dataclass(frozen=True)
class LqrLoss:
    state_loss: float
    control_loss: float

    @property
    def total(self) -> float:
        return self.state_loss + self.control_loss


def _residuals(model: ParamVector, data: Transitions) -> Tuple[np.ndarray, np.ndarray]:
    if len(data) == 0:
        raise ContractViolation("LQR loss needs at least one transition.")
    A, B, K = model.group("A"), model.group("B"), model.group("K")
    state_error = data.x @ A.T + np.outer(data.u, B[:, 0]) - data.x_next
    # Control residual written as u + K̂x, the negation of û − u
    control_error = data.u + data.x @ K[0]
    return state_error, control_error


def _state_scale(reduction: StateReduction, n_state: int) -> float:
    if reduction == "sum":
        return 1.0
    if reduction == "component_mean":
        return 1.0 / n_state
    raise ConfigurationError(f"Unknown state reduction {reduction!r}.")


def lqr_loss(
    model: ParamVector, data: Transitions, state_reduction: StateReduction = "sum"
) -> LqrLoss:
    state_error, control_error = _residuals(model, data)
    scale = _state_scale(state_reduction, state_error.shape[1])
    state_loss = scale * float(np.mean(np.sum(state_error**2, axis=1)))
    control_loss = float(np.mean(control_error**2))
    return LqrLoss(state_loss, control_loss)


def lqr_grads(
    model: ParamVector, batch: Transitions, state_reduction: StateReduction = "sum"
) -> np.ndarray:
    """Analytic gradient of the total loss in layout order (A, B, K)."""
    state_error, control_error = _residuals(model, batch)
    n = len(batch)
    scale = 2.0 * _state_scale(state_reduction, state_error.shape[1]) / n
    grad_A = scale * state_error.T @ batch.x
    grad_B = scale * (state_error.T @ batch.u)[:, None]
    grad_K = (2.0 / n) * (control_error @ batch.x)[None, :]
    return np.concatenate([grad_A.reshape(-1), grad_B.reshape(-1), grad_K.reshape(-1)])


def true_model(sys: LinSystem, K: np.ndarray) -> ParamVector:
    return ParamVector.from_tensors(LQR_LAYOUT, {"A": sys.A, "B": sys.B, "K": K})


def param_distance(model: ParamVector, truth: ParamVector) -> Tuple[float, float]:
    """(dynamics distance over Â,B̂; control distance over K̂)."""
    dyn = np.concatenate([model.group("A").ravel(), model.group("B").ravel()])
    dyn_true = np.concatenate([truth.group("A").ravel(), truth.group("B").ravel()])
    ctrl = model.group("K").ravel() - truth.group("K").ravel()
    return float(np.linalg.norm(dyn - dyn_true)), float(np.linalg.norm(ctrl))


def split_rollouts(
    rollouts: Sequence[Rollout], test_fraction: float, seed: int
) -> Tuple[List[Rollout], List[Rollout]]:
    """Hold out whole rollouts so test trajectories are never seen in training."""
    n_test = int(round(len(rollouts) * test_fraction))
    order = np.random.default_rng(seed).permutation(len(rollouts))
    test_index = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(rollouts) if i not in test_index]
    test = [r for i, r in enumerate(rollouts) if i in test_index]
    return train, test


def write_transitions(path: Path | str, rollouts: Sequence[Rollout]) -> int:
    """Write one JSON record per transition; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    per_robot: Dict[int, int] = {}
    with path.open("w", encoding="utf-8") as handle:
        for rollout in rollouts:
            index = per_robot.get(rollout.robot_id, 0)
            per_robot[rollout.robot_id] = index + 1
            for t in range(rollout.horizon):
                record = {
                    "robot_id": rollout.robot_id,
                    "rollout": index,
                    "t": t,
                    "x_t": rollout.states[t].tolist(),
                    "u_t": float(rollout.controls[t]),
                    "x_next": rollout.states[t + 1].tolist(),
                }
                handle.write(json.dumps(record) + "\n")
                count += 1
    return count


def read_transitions(path: Path | str) -> List[Rollout]:
    """Rebuild rollouts from a transition file, ordered by (robot, rollout)."""
    path = Path(path)
    grouped: Dict[Tuple[int, int], List[dict]] = {}
    try:
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                key = (int(record["robot_id"]), int(record["rollout"]))
                grouped.setdefault(key, []).append(record)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigurationError(f"Cannot read transitions from {path}: {exc}") from exc

    rollouts = []
    for (robot_id, _), records in sorted(grouped.items()):
        records.sort(key=lambda record: record["t"])
        states = [records[0]["x_t"]] + [record["x_next"] for record in records]
        controls = [record["u_t"] for record in records]
        rollouts.append(Rollout(np.array(states), np.array(controls), robot_id))
    return rollouts


class LqrTask:
    """Federated task wrapper: minibatch Adam on the analytic LQR gradient."""

    name = "lqr"

    def __init__(self, init_scale: float = 0.1, state_reduction: StateReduction = "sum"):
        _state_scale(state_reduction, 2)
        self.layout = LQR_LAYOUT
        self.init_scale = init_scale
        self.state_reduction = state_reduction

    def init_params(self, seed: int) -> ParamVector:
        return init_params(self.layout, seed, self.init_scale)

    def iter_batches(
        self, dataset: Transitions, batch_size: int, rng: np.random.Generator
    ) -> Iterator[Transitions]:
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            yield dataset.take(order[start : start + batch_size])

    def loss_and_grad(
        self, params: ParamVector, batch: Transitions, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]:
        loss = lqr_loss(params, batch, self.state_reduction)
        return loss.total, lqr_grads(params, batch, self.state_reduction)

    def evaluate(self, params: ParamVector, dataset: Transitions) -> Dict[str, float]:
        loss = lqr_loss(params, dataset, self.state_reduction)
        return {
            "loss": loss.total,
            "state_loss": loss.state_loss,
            "control_loss": loss.control_loss,
        }

    def pool(self, datasets: Sequence[Transitions]) -> Transitions:
        return Transitions.concat(datasets)

    def size(self, dataset: Transitions) -> int:
        return len(dataset)


def build_lqr_clients(
    config: LqrTaskConfig, init_scale: float, master_seed: int
) -> Tuple[LqrTask, List[ClientState], Dict[int, ParamVector]]:
    """One client per control cost R, with its true (A, B, K) for distance metrics."""
    sys = LinSystem.point_mass()
    task = LqrTask(init_scale=init_scale, state_reduction=config.state_reduction)
    clients, truths = [], {}
    for robot_id, r_value in enumerate(config.r_values):
        _, K = solve_dare(sys, LqrCost.diagonal(config.q_diag, r_value))
        rollouts = generate_rollouts(
            sys,
            K,
            config.n_init,
            config.horizon,
            config.noise_var,
            derive_seed(master_seed, "data", robot_id),
            config.init_low,
            config.init_high,
            robot_id=robot_id,
        )
        train, test = split_rollouts(
            rollouts, config.test_fraction, derive_seed(master_seed, "split", robot_id)
        )
        clients.append(
            ClientState(
                robot_id, Transitions.from_rollouts(train), Transitions.from_rollouts(test)
            )
        )
        truths[robot_id] = true_model(sys, K)
    log.info(
        "Built LQR clients",
        extra={"clients": len(clients), "r_values": list(config.r_values)},
    )
    return task, clients, truths
