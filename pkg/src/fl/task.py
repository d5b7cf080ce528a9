from typing import Any, Dict, Iterator, Protocol, Sequence, Tuple

import numpy as np

from src.params.store import ParamLayout, ParamVector


class FederatedTask(Protocol):
    """What the engine needs from a learning task.

    Datasets are opaque to the engine: only the task looks inside them, and
    nothing the engine hands to the server is derived from them except
    trained parameters.
    """

    name: str
    layout: ParamLayout

    def init_params(self, seed: int) -> ParamVector: ...

    def iter_batches(
        self, dataset: Any, batch_size: int, rng: np.random.Generator
    ) -> Iterator[Any]: ...

    def loss_and_grad(
        self, params: ParamVector, batch: Any, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]: ...

    def evaluate(self, params: ParamVector, dataset: Any) -> Dict[str, float]: ...

    def pool(self, datasets: Sequence[Any]) -> Any: ...

    def size(self, dataset: Any) -> int: ...
